"""Asymptotic test-error predictions.

Three solvers share the :class:`TheoryInput` description of a network:

``solve_sgd_system(method="printed")``
    The scalar fixed-point system in the unknowns ``zeta_i, theta`` followed
    by a linear system in ``alpha_i^2, tau^2``, implemented term by term.
    Several indices in that system are unbound or point past the last layer;
    the readings are selected by ``closure``, ``fprime`` and ``source``.
``solve_sgd_system(method="spectral")``
    Ridgeless min-norm risk evaluated on the limiting spectrum of
    ``Sigma_L``.  The spectrum is propagated layer by layer through the
    Stieltjes transform of ``rho1^2 W Sigma W^T + rho2^2 I``.
``solve_mirror_saddle``
    Stationary point of a four-variable saddle for the Bregman interpolant
    of a general separable mirror.  The quadratic mirror reproduces the
    spectral min-norm risk.

Every trace ``Tr f(Sigma)`` is evaluated on eigenvalues, never on matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import CubicHermiteSpline

from .errors import DegenerateRatio, NoConvergence, ShapeMismatch
from .gep import gh_standard_normal, sigma_chain
from .interpolate import SQUARED_L2, Domain, MirrorMap, get_mirror

# ---------------------------------------------------------------------------
# inputs and outputs


@dataclass(frozen=True, eq=False)
class TheoryInput:
    """Dimensions ``d_0..d_L``, sample count and per-layer ``rho`` coefficients.

    ``rho1[l-1]`` and ``rho2_sq[l-1]`` belong to layer ``l``.
    """

    dims: tuple[int, ...]
    n: int
    sigma0_eigs: np.ndarray
    rho1: tuple[float, ...]
    rho2_sq: tuple[float, ...]

    def __post_init__(self):
        if len(self.dims) < 2 or len(self.rho1) != len(self.dims) - 1 or len(self.rho2_sq) != len(self.rho1):
            raise ShapeMismatch("need dims d_0..d_L and one rho pair per layer", dims=self.dims)
        if len(self.sigma0_eigs) != self.dims[0]:
            raise ShapeMismatch("sigma0_eigs must have d_0 entries", d0=self.dims[0], got=len(self.sigma0_eigs))
        if self.dims[-1] <= self.n:
            raise DegenerateRatio("the last layer must be overparameterized", d_L=self.dims[-1], n=self.n)

    @property
    def L(self) -> int:
        return len(self.dims) - 1


def theory_input(dims, n: int, activation="tanh", sigma0_eigs=None, nodes: int = 200) -> TheoryInput:
    """Build an input from the asymptotic trace chain of ``activation``.

    ``sigma0_eigs`` defaults to the spectrum of ``I/d_0``.
    """
    dims = tuple(int(d) for d in dims)
    eigs = np.full(dims[0], 1.0 / dims[0]) if sigma0_eigs is None else np.asarray(sigma0_eigs, dtype=np.float64)
    chain = sigma_chain(activation, float(eigs.mean()), len(dims) - 1, nodes)
    return TheoryInput(dims, int(n), eigs, chain.rho1, chain.rho2_sq)


@dataclass(frozen=True)
class MirrorSaddleState:
    """Stationary point of the mirror saddle.

    ``beta, tau`` are the outer pair; ``r_sq`` is the squared norm variable
    of the hidden-layer block and ``mu`` its multiplier; ``q`` and
    ``noise_var`` are the effective curvature and Gaussian noise level of
    the separable last-layer problem.
    """

    beta: float
    tau: float
    r_sq: float
    mu: float
    q: float
    noise_var: float


@dataclass(frozen=True)
class TheorySolution:
    """Solver output.  ``tau_sq`` is the predicted test MSE."""

    zeta: tuple[float, ...]
    theta: float
    alpha_sq: tuple[float, ...]
    tau_sq: float
    residual: float
    converged: bool
    method: str = "printed"
    iterations: int = 0
    saddle: MirrorSaddleState | None = None
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# spectra on the negative real axis


class Spectrum:
    """Stieltjes transform ``m(z) = mean 1/(lambda - z)`` for ``z < 0``."""

    size: int
    mean: float

    def m(self, z: float) -> tuple[float, float]:
        """Return ``(m(z), m'(z))``."""
        raise NotImplementedError


class EmpiricalSpectrum(Spectrum):
    def __init__(self, eigs):
        self.eigs = np.asarray(eigs, dtype=np.float64)
        self.size = self.eigs.size
        self.mean = float(self.eigs.mean())

    def m(self, z):
        r = 1.0 / (self.eigs - z)
        return float(r.mean()), float((r * r).mean())


class LayerSpectrum(Spectrum):
    """Limiting spectrum of ``r1sq * W T W^T + r2sq * I``.

    ``W`` is ``(gamma * size(T)) x size(T)`` with variance ``1/size(T)``
    entries.  Writing ``S = W T W^T`` and ``s = gamma * m_S(w)``, the
    transform solves ``m_S(w) * (-w + 1/s - m_T(-1/s)/s^2) = 1``; the root is
    bracketed by ``1/(mean_S - w) <= m_S(w) <= -1/w``.  After construction
    ``log m`` is tabulated against ``log(-z)`` with Hermite cubics so that
    deep chains cost one table lookup per level.
    """

    GRID = 700
    SPAN = 9.0  # decades each side of the mean eigenvalue

    def __init__(self, prev: Spectrum, gamma: float, r1sq: float, r2sq: float, tabulate: bool = True):
        self.prev = prev
        self.gamma = float(gamma)
        self.r1sq = float(r1sq)
        self.r2sq = float(r2sq)
        self.size = int(round(prev.size * gamma))
        self.mean = self.r1sq * prev.mean + self.r2sq
        self._s_mean = prev.mean
        self._table = None
        if tabulate:
            self._build_table()

    def _solve_S(self, w: float) -> tuple[float, float]:
        prev, g = self.prev, self.gamma

        def A(mm):
            s = g * mm
            mt, _ = prev.m(-1.0 / s)
            return 1.0 / s - mt / (s * s)

        hi = 1.0 / (-w)
        lo = 1.0 / (-w + self._s_mean)
        H = lambda mm: mm * (-w + A(mm)) - 1.0
        flo, fhi = H(lo * (1 - 1e-12)), H(hi)
        if flo > 0 or fhi < 0:
            # widen slightly for rounding at extreme w
            lo, hi = lo * 0.5, hi * 1.000001
        # the bracket spans many decades as w -> 0-, so search on log m
        t = optimize.brentq(lambda t: H(np.exp(t)), np.log(lo * (1 - 1e-12)), np.log(hi), xtol=1e-15, rtol=1e-15, maxiter=200)
        mm = float(np.exp(t))
        s = g * mm
        mt, mtp = prev.m(-1.0 / s)
        dAds = -1.0 / s**2 + 2.0 * mt / s**3 - mtp / s**4
        Hm = -w + A(mm) + mm * g * dAds
        return mm, mm / Hm

    def _direct(self, z: float) -> tuple[float, float]:
        w = (z - self.r2sq) / self.r1sq
        a, b = self._solve_S(w)
        return a / self.r1sq, b / self.r1sq**2

    def _build_table(self):
        t0 = np.log(self.mean)
        t = np.linspace(t0 - self.SPAN * np.log(10), t0 + self.SPAN * np.log(10), self.GRID)
        f = np.empty_like(t)
        df = np.empty_like(t)
        for i, ti in enumerate(t):
            z = -np.exp(ti)
            m, mp = self._direct(z)
            f[i] = np.log(m)
            df[i] = z * mp / m
        self._t = (t[0], t[-1])
        self._table = CubicHermiteSpline(t, f, df)
        self._dtable = self._table.derivative()

    def m(self, z):
        if self._table is not None and z < 0:
            t = np.log(-z)
            if self._t[0] <= t <= self._t[1]:
                m = float(np.exp(self._table(t)))
                return m, float(self._dtable(t)) * m / z
        return self._direct(z)


def spectrum_chain(inp: TheoryInput, upto: int | None = None, tabulate: bool = True) -> list[Spectrum]:
    """Spectra of ``Sigma_0, ..., Sigma_upto`` (default ``upto = L``)."""
    upto = inp.L if upto is None else upto
    chain: list[Spectrum] = [EmpiricalSpectrum(inp.sigma0_eigs)]
    for l in range(1, upto + 1):
        gamma = inp.dims[l] / inp.dims[l - 1]
        r1sq = inp.rho1[l - 1] ** 2
        r2sq = inp.rho2_sq[l - 1]
        if r1sq <= 0:
            raise DegenerateRatio("rho1 vanishes; the layer carries no linear signal", layer=l)
        chain.append(LayerSpectrum(chain[-1], gamma, r1sq, r2sq, tabulate=tabulate))
    return chain


def ridgeless_risk(spec: Spectrum, p: int, n: int) -> tuple[float, float, float]:
    """Min-norm test MSE for ``a_* ~ N(0, I/p)`` on features with spectrum ``spec``.

    With ``kappa`` solving ``sum lambda/(lambda+kappa) = n``::

        R = kappa^2/p * sum lambda/(lambda+kappa)^2 / (1 - sum lambda^2/(lambda+kappa)^2 / n)

    Returns ``(R, kappa, relative residual of the kappa equation)``.
    """
    if n >= p:
        raise DegenerateRatio("need p > n", p=p, n=n)

    def eff(logk):
        k = np.exp(logk)
        return p * (1.0 - k * spec.m(-k)[0]) - n

    lo, hi = np.log(spec.mean) - 30.0, np.log(spec.mean) + 30.0
    if eff(lo) < 0:
        raise DegenerateRatio("feature spectrum has rank below n", n=n)
    logk = optimize.brentq(eff, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
    k = float(np.exp(logk))
    m, mp = spec.m(-k)
    s1 = p * (m - k * mp)
    s2 = p * (1.0 - 2.0 * k * m + k * k * mp)
    risk = k * k / p * s1 / (1.0 - s2 / n)
    return float(risk), k, abs(eff(logk)) / n


# ---------------------------------------------------------------------------
# the printed scalar system


_CLOSURES = ("theta-as-zetaL", "zero")
_FPRIMES = ("zeta2", "scaled")
_SOURCES = ("astar", "none")


class _Printed:
    """Term-by-term evaluation of the printed system.

    Index conventions: ``zeta_L`` is ``theta`` (closure ``theta-as-zetaL``)
    or 0 (closure ``zero``); ``zeta_k`` for ``k < 1`` or ``k > L`` is 0;
    ``alpha_L^2`` is ``tau^2``; ``alpha_k^2`` beyond ``L`` is 0; an unbound
    ``eta_k^2`` reads ``zeta_k^2 alpha_k^2``; the ``F'/zeta_i^2`` term of the
    ``tau^2`` equation uses ``i = 1``; norms ``|g_1|^2, |h_1|^2`` read ``d_1``.
    """

    def __init__(self, inp: TheoryInput, closure: str, fprime: str, source: str):
        self.inp = inp
        self.L = inp.L
        self.d = inp.dims
        self.lam = np.asarray(inp.sigma0_eigs, dtype=np.float64)
        self.r11 = {l: inp.rho1[l - 1] ** 2 for l in range(1, self.L + 1)}
        self.r12 = {l: inp.rho2_sq[l - 1] for l in range(1, self.L + 1)}
        self.closure = closure
        self.fprime = fprime
        self.source = source

    def ratio(self, i: int) -> float:
        return 1.0 - self.d[i + 1] / self.d[i]

    def tr(self, p: int, k: int, A: float, b: float) -> float:
        lam = self.lam
        return float(np.sum(lam**k / (A * lam + b) ** p))

    def zeta_of(self, x):
        L = self.L

        def z(k):
            if 1 <= k <= L - 1:
                return x[k - 1]
            if k == L:
                return x[L - 1] if self.closure == "theta-as-zetaL" else 0.0
            return 0.0

        return z

    def c_of(self, z):
        def c(j):
            out = 1.0
            for l in range(self.L - j + 1, self.L + 1):
                out *= self.d[l] * z(l)
            return out

        return c

    def nonlinear(self, x) -> np.ndarray:
        """Right-hand sides for ``[zeta_1..zeta_{L-1}, theta]``."""
        L, d, r11, r12 = self.L, self.d, self.r11, self.r12
        z = self.zeta_of(x)
        c = self.c_of(z)
        cL = c(L)
        out = []
        if L - 1 >= 1:
            A = cL**2 * z(1) * z(2) ** 2
            num = 1.0 - z(1) * z(2) ** 2 * cL**2 * self.tr(1, 0, A, z(2))
            den = z(3) / 4.0 + 2.0 * cL**2 * z(2) * r12[1] / r11[1]
            out.append(num / den)
        if L - 1 >= 2:
            num = 1.0 - self.tr(1, 0, cL**2 * z(2) * z(1), 1.0) / d[1]
            den = 2.0 * z(3) * c(L - 1) ** 2 * r12[2] / (2.0 * r11[2]) + z(4) / 4.0
            out.append(num / den)
        for i in range(3, L):
            den = c(L - i) ** 2 * r12[i] * z(i + 1) / r11[i] + z(i + 2) / 8.0
            out.append(self.ratio(i) / den)
        den = z(L - 2) * d[1] / d[0] + z(L - 1) * r12[L] * d[L - 1]
        out.append(self.ratio(L - 1) / den)
        return np.array(out, dtype=np.float64)

    def linear_rhs(self, x, v) -> np.ndarray:
        """Right-hand sides for ``v = [alpha_1^2..alpha_{L-1}^2, tau^2]`` (affine in ``v``)."""
        L, d, r11, r12 = self.L, self.d, self.r11, self.r12
        z = self.zeta_of(x)
        c = self.c_of(z)
        cL = c(L)

        def a2(k):
            if 1 <= k <= L:
                return v[k - 1]
            return 0.0

        src = 4.0 if self.source == "astar" else 0.0  # 4 |a_*|^2 with |a_*|^2 -> 1
        A1 = cL**2 * z(2) ** 2 * z(1) * d[1]
        b = z(2)

        def fprime_val():
            if self.fprime == "zeta2":
                xv, scale = z(2), 1.0
            else:
                xv, scale = z(2), (1.0 / cL if cL != 0 else np.inf)
            A = cL**2 * xv**2 * z(1) * d[1]
            inner = (z(2) ** 2 * a2(2) / d[1]) * self.tr(3, 2, A, b) + z(2) ** 2 * cL**2 * z(1) ** 2 * a2(1) * self.tr(3, 1, A, b)
            return -4.0 * cL**2 * xv * z(1) * d[1] * inner * scale

        out = []
        if L - 1 >= 1:
            A = z(1) * cL**2 * z(2) ** 2
            num = (
                2.0 * cL**2 * r12[1] * d[0] / (r11[1] * d[1])
                + cL**2 * z(2) ** 2 / d[1] * self.tr(2, 1, A, z(2))
            ) * z(2) ** 2 * a2(2) + d[1] / (2.0 * d[0]) * z(3) ** 2 * a2(3)
            if L - 1 == 1:
                num += src
            den = 1.0 - z(2) ** 4 * cL**4 * z(1) ** 2 * self.tr(2, 2, A, z(2))
            out.append(num / den)
        if L - 1 >= 2:
            F1 = (
                -(z(2) ** 2 * a2(2) / d[1]) * (A1 * self.tr(2, 1, A1, b) + self.tr(2, 0, A1, b))
                + z(2) * cL**2 * z(1) ** 2 * a2(1) * self.tr(1, 1, A1, b)
                - z(2) ** 2 * cL**2 * z(1) ** 2 * a2(1) * (A1 + 1.0) * self.tr(2, 2, A1, b)
            )
            num = cL**2 * r12[1] / r11[1] * z(1) ** 2 * a2(1) + F1
            if L - 1 == 2:
                num += src
            out.append(num / self.ratio(1))
        Fp = fprime_val() if L >= 2 else 0.0
        for i in range(3, L):
            num = (
                c(L - i + 1) ** 2 * r12[i] * d[i - 1] / (r11[i] * d[i + 1]) * z(i + 1) ** 2 * a2(i + 1)
                + z(i + 2) ** 2 * a2(i + 2) * d[i] / (4.0 * d[i + 1])
                + Fp / z(i) ** 2
                + sum(c(L - j) ** 2 * r12[j] / r11[j] * z(j) ** 2 * a2(j) for j in range(1, i + 1))
            )
            if i == L - 1:
                num += src
            out.append(num / self.ratio(i))
        num = Fp / z(1) ** 2 + sum(c(L - j) ** 2 * r12[j] / r11[j] * z(j) ** 2 * a2(j) for j in range(1, L))
        out.append(num / self.ratio(L - 1))
        return np.array(out, dtype=np.float64)

    def linear_system(self, x):
        k = self.L
        b = self.linear_rhs(x, np.zeros(k))
        M = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = 1.0
            M[:, j] = self.linear_rhs(x, e) - b
        return M, b


def _scaled_residual(x, gx) -> float:
    return float(np.max(np.abs(gx - x) / np.maximum(1.0, np.abs(x))))


def _solve_printed(inp, tol, max_iter, closure, fprime, source) -> TheorySolution:
    L = inp.L
    if L == 1:
        # no hidden-to-hidden equations survive; the outer (beta, tau) block
        # with the last-layer quadratic terms is the quadratic saddle
        sol = solve_mirror_saddle(inp, "squared_l2", tol=max(tol, 1e-9))
        return TheorySolution((), float("nan"), (), sol.tau_sq, sol.residual, sol.converged, "printed", sol.iterations, sol.saddle, {"reduction": "L=1 saddle"})
    for i in range(1, L):
        if inp.dims[i + 1] >= inp.dims[i]:
            raise DegenerateRatio("1 - d_{i+1}/d_i must be positive", i=i, d_i=inp.dims[i], d_next=inp.dims[i + 1])
    sys = _Printed(inp, closure, fprime, source)
    x = np.ones(L)
    omega = 0.5
    with np.errstate(all="ignore"):
        gx = sys.nonlinear(x)
    res = _scaled_residual(x, gx)
    best = (res, x.copy())
    it = 0
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(gx)):
            raise NoConvergence("nonlinear block left the finite range", iteration=it, best_residual=best[0])
        if res <= tol:
            break
        trial = x + omega * (gx - x)
        with np.errstate(all="ignore"):
            gt = sys.nonlinear(trial)
        rt = _scaled_residual(trial, gt) if np.all(np.isfinite(gt)) else np.inf
        if rt > res and omega > 1e-6:
            omega *= 0.5
            continue
        x, gx, res = trial, gt, rt
        omega = min(0.5, omega * 1.5)
        if res < best[0]:
            best = (res, x.copy())
    converged = bool(res <= tol)
    if not converged:
        raise NoConvergence("damped iteration on the zeta/theta block did not converge", max_iter=max_iter, best_residual=best[0])
    with np.errstate(all="ignore"):
        M, b = sys.linear_system(x)
        try:
            v = linalg.solve(np.eye(L) - M, b)
        except linalg.LinAlgError as exc:
            raise NoConvergence("singular alpha/tau linear system") from exc
        lin_res = float(np.max(np.abs(sys.linear_rhs(x, v) - v) / np.maximum(1.0, np.abs(v))))
    residual = max(_scaled_residual(x, sys.nonlinear(x)), lin_res)
    return TheorySolution(
        zeta=tuple(float(t) for t in x[:-1]),
        theta=float(x[-1]),
        alpha_sq=tuple(float(t) for t in v[:-1]),
        tau_sq=float(v[-1]),
        residual=residual,
        converged=bool(residual <= max(tol, 1e-10) and np.all(np.isfinite(v))),
        method="printed",
        iterations=it,
        extras={"closure": closure, "fprime": fprime, "source": source},
    )


def printed_residual(inp: TheoryInput, sol: TheorySolution, closure="theta-as-zetaL", fprime="zeta2", source="astar") -> float:
    """Re-evaluate every printed equation at ``sol`` and return the worst scaled residual."""
    sys = _Printed(inp, closure, fprime, source)
    x = np.array(list(sol.zeta) + [sol.theta])
    v = np.array(list(sol.alpha_sq) + [sol.tau_sq])
    r1 = _scaled_residual(x, sys.nonlinear(x))
    r2 = float(np.max(np.abs(sys.linear_rhs(x, v) - v) / np.maximum(1.0, np.abs(v))))
    return max(r1, r2)


def _solve_spectral(inp: TheoryInput) -> TheorySolution:
    chain = spectrum_chain(inp)
    risk, kappa, res = ridgeless_risk(chain[-1], inp.dims[-1], inp.n)
    return TheorySolution((), float("nan"), (), risk, res, True, "spectral", 0, None, {"kappa": kappa})


def solve_sgd_system(
    inp: TheoryInput,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    *,
    method: str = "printed",
    closure: str = "theta-as-zetaL",
    fprime: str = "zeta2",
    source: str = "astar",
) -> TheorySolution:
    """Predicted min-norm test MSE.

    Parameters
    ----------
    method : {"printed", "spectral"}
    closure : {"theta-as-zetaL", "zero"}
        Value given to ``zeta_L`` inside the printed system.
    fprime : {"zeta2", "scaled"}
        Differentiation variable of ``F'``: ``x`` at ``zeta_2``, or
        ``u = c_L x`` at ``c_L zeta_2``.
    source : {"astar", "none"}
        Whether the ``4 |a_*|^2`` term of the last hidden block enters the
        ``alpha_{L-1}^2`` equation.  Without it the linear block is
        homogeneous and ``tau^2 = 0``.
    """
    if method == "spectral":
        return _solve_spectral(inp)
    if method != "printed":
        raise ValueError(f"unknown method {method!r}")
    if closure not in _CLOSURES or fprime not in _FPRIMES or source not in _SOURCES:
        raise ValueError("unknown closure, fprime or source reading")
    return _solve_printed(inp, tol, max_iter, closure, fprime, source)


# ---------------------------------------------------------------------------
# Moreau envelopes


def _prox_all_reals(mirror: MirrorMap, c: float, v: np.ndarray) -> np.ndarray:
    # h(x) = x - v + c psi'(x) is increasing with h' = 1 + c psi'' >= 1
    h = lambda x: x - v + c * mirror.gradient(x)
    lo = v - 1.0
    hi = v + 1.0
    for _ in range(200):
        bad = h(lo) > 0
        if not bad.any():
            break
        lo = np.where(bad, v - 2.0 * (v - lo), lo)
    for _ in range(200):
        bad = h(hi) < 0
        if not bad.any():
            break
        hi = np.where(bad, v + 2.0 * (hi - v), hi)
    x = np.clip(v, lo, hi)
    for _ in range(200):
        hx = h(x)
        lo = np.where(hx < 0, x, lo)
        hi = np.where(hx > 0, x, hi)
        step = hx / (1.0 + c * mirror.hessian(x))
        xn = x - step
        out = (xn <= lo) | (xn >= hi)
        xn = np.where(out, 0.5 * (lo + hi), xn)
        if np.all(np.abs(xn - x) <= 1e-15 * np.maximum(1.0, np.abs(x))):
            return xn
        x = xn
    return x


def _prox_positive(mirror: MirrorMap, c: float, v: np.ndarray) -> np.ndarray:
    # substitute x = exp(u): h(u) = e^u - v + c psi'(e^u) is increasing in u
    def h(u):
        x = np.exp(u)
        return x - v + c * mirror.gradient(x)

    lo = np.full_like(v, -745.0)
    hi = np.log(np.maximum(np.abs(v), 1.0)) + 1.0
    for _ in range(200):
        bad = h(hi) < 0
        if not bad.any():
            break
        hi = np.where(bad, hi + 2.0, hi)
    u = np.clip(np.log(np.maximum(v, 1e-300)), lo, hi)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(300):
            hu = h(u)
            lo = np.where(hu < 0, u, lo)
            hi = np.where(hu > 0, u, hi)
            x = np.exp(u)
            dh = x * (1.0 + c * mirror.hessian(x))
            un = u - hu / dh
            out = ~np.isfinite(un) | (un <= lo) | (un >= hi)
            un = np.where(out, 0.5 * (lo + hi), un)
            if np.all(np.abs(un - u) <= 1e-15 * np.maximum(1.0, np.abs(u))):
                u = un
                break
            u = un
    return np.exp(u)


def prox(mirror, c: float, v) -> np.ndarray:
    """``argmin_x (v - x)^2/(2c) + psi(x)``, elementwise.

    On the positive orthant a prox below the smallest double flushes to it.
    """
    mirror = get_mirror(mirror)
    v = np.asarray(v, dtype=np.float64)
    if mirror.domain is Domain.POSITIVE_ORTHANT:
        return _prox_positive(mirror, c, v)
    return _prox_all_reals(mirror, c, v)


def moreau_envelope(mirror, c: float, v, *, return_prox: bool = False):
    """``M_{psi;c}(v) = min_x (v - x)^2/(2c) + psi(x)`` (elementwise)."""
    if not c > 0:
        raise ValueError("c must be positive")
    mirror = get_mirror(mirror)
    v = np.asarray(v, dtype=np.float64)
    x = prox(mirror, c, v)
    val = (v - x) ** 2 / (2.0 * c) + mirror.potential(x)
    val = float(val) if val.ndim == 0 else val
    return (val, x) if return_prox else val


def expected_moreau(mirror, c: float, z_var: float, astar_var: float, a0_scalar: float, nodes: int = 64) -> float:
    """``E M_{psi;c}(a_* - grad psi(a0) - c z)`` with ``a_* ~ N(0, astar_var)``, ``z ~ N(0, z_var)``.

    Tensorized Gauss-Hermite over ``(a_*, z)`` with ``nodes`` points each.
    """
    mirror = get_mirror(mirror)
    g0 = float(mirror.gradient(np.array([a0_scalar]))[0])
    t, w = gh_standard_normal(nodes)
    A = np.sqrt(max(astar_var, 0.0)) * t[:, None]
    Z = np.sqrt(max(z_var, 0.0)) * t[None, :]
    vals = moreau_envelope(mirror, c, A - g0 - c * Z)
    return float(w @ np.atleast_2d(vals) @ w)


def _gauss_moreau(mirror, c, mean, var, nodes):
    """``E M_{psi;c}(mean + sqrt(var) g)`` by 1-D quadrature."""
    t, w = gh_standard_normal(nodes)
    return float(w @ moreau_envelope(mirror, c, mean + np.sqrt(var) * t))


# ---------------------------------------------------------------------------
# mirror saddle


class _MirrorObjective:
    """Scalar saddle objective for the Bregman interpolant with mirror ``psi``.

    Variables ``(beta, tau, s, mu)`` with ``p = d_L``, ``m = d_{L-1}``,
    ``K = Sigma_{L-1}`` and the last layer's ``rho1^2, rho2^2``::

        c   = tau / (beta n rho1^2)
        T0  = sum_k 1/(c + mu k),   T1 = sum_k k/(c + mu k)
        Q   = beta n rho2^2 / tau + T1/m,   v = s/m + beta^2 rho2^2
        Phi = beta tau (1 - m/n)/2 + tau^2 T0/(2 n^2 rho1^2) + mu s/2 + E(Q, v)

    where ``E(Q, v) = p E[M_{psi;1/Q}(a_* + (psi'(a0) - l)/Q) - (l - psi'(a0))^2/(2Q)]
    + p (a0 psi'(a0) - psi(a0))`` with ``l ~ N(0, v)``, ``a_* ~ N(0, 1/p)``.
    The predicted test MSE is ``tau^2 / n``.  Traces of ``K`` come from its
    Stieltjes transform at ``-c/mu``.
    """

    def __init__(self, inp: TheoryInput, mirror: MirrorMap, a0: float, spec_K: Spectrum, nodes: int):
        self.n = inp.n
        self.p = inp.dims[-1]
        self.m = inp.dims[-2]
        self.r1 = inp.rho1[-1] ** 2
        self.r2 = inp.rho2_sq[-1]
        self.mirror = mirror
        self.a0 = float(a0)
        self.g0 = float(mirror.gradient(np.array([a0]))[0])
        self.const = self.p * (self.a0 * self.g0 - float(mirror.potential(np.array([a0]))[0]))
        self.K = spec_K
        self.nodes = nodes
        self.quadratic = mirror.name == "squared_l2"
        # homotopy weight on E; the remainder goes to the quadratic E at a0 = 0
        self.t = 1.0

    def parts(self, u):
        beta, tau, s, mu = np.exp(u)
        n, m = self.n, self.m
        c = tau / (beta * n * self.r1)
        mk, _ = self.K.m(-c / mu)
        T0 = m / mu * mk
        T1 = (m - c * T0) / mu
        Q = beta * n * self.r2 / tau + T1 / m
        v = s / m + beta**2 * self.r2
        return beta, tau, s, mu, T0, Q, v

    def E(self, Q, v):
        if self.quadratic and self.a0 == 0.0:
            return self._E_quadratic(Q, v)
        if self.t == 1.0:
            return self._E_mirror(Q, v)
        return (1.0 - self.t) * self._E_quadratic(Q, v) + self.t * self._E_mirror(Q, v)

    def _E_quadratic(self, Q, v):
        return 0.5 - (1.0 + self.p * v) / (2.0 * (Q + 1.0))

    def _E_mirror(self, Q, v):
        p = self.p
        # sum of independent Gaussians a_* and -l/Q
        mean = self.g0 / Q
        var = 1.0 / p + v / Q**2
        em = _gauss_moreau(self.mirror, 1.0 / Q, mean, var, self.nodes)
        return p * (em - (v + self.g0**2) / (2.0 * Q)) + self.const

    def __call__(self, u) -> float:
        beta, tau, s, mu, T0, Q, v = self.parts(u)
        n, m = self.n, self.m
        return beta * tau / 2.0 * (1.0 - m / n) + tau**2 * T0 / (2.0 * n * n * self.r1) + mu * s / 2.0 + self.E(Q, v)

    @property
    def step(self) -> float:
        # quadrature noise in the general E needs a wider difference step
        return 1e-5 if self.quadratic and self.a0 == 0.0 else 1e-4

    def grad(self, u, h: float | None = None) -> np.ndarray:
        h = self.step if h is None else h
        g = np.empty(4)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            g[i] = (self(u + e) - self(u - e)) / (2.0 * h)
        return g

    def hessian(self, u, h: float = 1e-4) -> np.ndarray:
        H = np.empty((4, 4))
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            H[:, i] = (self.grad(u + e) - self.grad(u - e)) / (2.0 * h)
        return 0.5 * (H + H.T)


def _saddle_starts(obj: _MirrorObjective, inp: TheoryInput):
    # scale-aware starts: tau^2/n near the feature variance, c/mu near the mean of K
    chain = sigma_chain_scale(inp)
    base_tau = np.sqrt(inp.n * chain)
    for tau_f in (1.0, 0.3, 3.0, 0.1):
        for beta in (0.1, 1.0, 0.01, 10.0):
            tau = tau_f * base_tau
            c = tau / (beta * inp.n * obj.r1)
            for mu_f in (1.0, 0.1, 10.0):
                mu = c / (obj.K.mean * mu_f)
                for s in (0.1, 1.0, 0.01):
                    yield np.log([beta, tau, s * chain * obj.m if chain > 0 else s, mu])


def sigma_chain_scale(inp: TheoryInput) -> float:
    v = float(np.mean(inp.sigma0_eigs))
    for r1, r2 in zip(inp.rho1, inp.rho2_sq):
        v = r1 * r1 * v + r2
    return v


def _hybr(obj, u0, max_outer):
    with np.errstate(all="ignore"):
        try:
            sol = optimize.root(obj.grad, u0, method="hybr", options={"maxfev": max_outer * 10, "xtol": 1e-13})
        except (ValueError, ZeroDivisionError, FloatingPointError):
            return None, np.inf
        u = sol.x
        if not np.all(np.isfinite(u)):
            return None, np.inf
        try:
            g = obj.grad(u)
            beta, tau, s, mu, T0, Q, v = obj.parts(u)
        except (ValueError, ZeroDivisionError, FloatingPointError):
            return None, np.inf
    if not np.all(np.isfinite(g)) or not (Q > 0 and v > 0 and tau > 0):
        return None, np.inf
    return u, float(np.max(np.abs(g)))


def _saddle_search(obj, inp, tol, max_outer, starts):
    tried = 0
    for u0 in _saddle_starts(obj, inp):
        if tried >= starts:
            break
        tried += 1
        u, res = _hybr(obj, u0, max_outer)
        if u is None or res > tol:
            continue
        # flat asymptotic regions also have a vanishing gradient.  A genuine
        # saddle point has a nonsingular Hessian with two ascent directions
        # (the max variables) and two descent directions.
        if np.max(np.abs(u - u0)) > 15.0:
            continue
        with np.errstate(all="ignore"):
            eig = np.linalg.eigvalsh(obj.hessian(u))
        if not np.all(np.isfinite(eig)) or np.min(np.abs(eig)) < 1e-6 or np.sum(eig < 0) != 2:
            continue
        return u, res, tried
    raise NoConvergence("no start reached a finite stationary point", max_iter=tried)


def _continue_from_quadratic(obj, u, tol, max_outer, min_step=1e-6):
    # follow the root while E moves from the quadratic form to the target mirror
    t, dt, steps = 0.0, 0.01, 0
    res = np.inf
    while t < 1.0:
        if dt < min_step:
            raise NoConvergence("homotopy from the quadratic mirror stalled", t=round(t, 6), steps=steps)
        tn = min(1.0, t + dt)
        obj.t = tn
        un, rn = _hybr(obj, u, max_outer)
        steps += 1
        if un is not None and rn <= tol and np.max(np.abs(un - u)) < 1.0:
            u, res, t = un, rn, tn
            dt *= 1.5
        else:
            dt *= 0.5
    return u, res, steps


def solve_mirror_saddle(
    inp: TheoryInput,
    mirror="squared_l2",
    tol: float = 1e-8,
    max_outer: int = 200,
    *,
    a0_scalar: float | None = None,
    nodes: int = 80,
    starts: int = 200,
) -> TheorySolution:
    """Stationary point of the mirror saddle and its predicted test MSE.

    ``a0_scalar`` is the uniform initialization of the last layer; it
    defaults to 0 for the quadratic mirror and ``1/d_L`` on the positive
    orthant.  Stationarity is solved by Powell's hybrid method on the
    central-difference gradient in log-variables.  The quadratic problem
    with ``a0 = 0`` is searched from a fixed list of scale-aware starts and
    the first finite, non-degenerate root with gradient below ``tol`` is
    kept.  Any other mirror is reached by continuation from that root,
    blending ``E`` from the quadratic form to the target one; there the
    gradient tolerance is floored at ``1e-6`` because quadrature noise
    limits the difference gradient.
    """
    mirror = get_mirror(mirror)
    if a0_scalar is None:
        a0_scalar = 0.0 if mirror.domain is Domain.ALL_REALS else 1.0 / inp.dims[-1]
    spec_K = spectrum_chain(inp, upto=inp.L - 1)[-1]
    base = _MirrorObjective(inp, SQUARED_L2, 0.0, spec_K, nodes)
    u, res, tried = _saddle_search(base, inp, tol, max_outer, starts)
    obj = base
    if not (mirror.name == SQUARED_L2.name and a0_scalar == 0.0):
        obj = _MirrorObjective(inp, mirror, a0_scalar, spec_K, nodes)
        tol = max(tol, 1e-6)
        u, res, steps = _continue_from_quadratic(obj, u, tol, max_outer)
        tried += steps
    beta, tau, s, mu, T0, Q, v = obj.parts(u)
    state = MirrorSaddleState(float(beta), float(tau), float(s), float(mu), float(Q), float(v))
    return TheorySolution(
        (), float("nan"), (), float(tau * tau / inp.n), res, bool(res <= tol), "mirror-saddle", tried, state, {"mirror": mirror.name, "a0": a0_scalar}
    )


# ---------------------------------------------------------------------------
# conditioning diagnostic


def sigma_min_diagnostic(Phi, iters: int = 200) -> float:
    """Smallest eigenvalue of ``Phi Phi^T / D`` by inverse power iteration."""
    Phi = np.asarray(Phi, dtype=np.float64)
    n, D = Phi.shape
    G = Phi @ Phi.T / D
    try:
        fac = linalg.cho_factor(G)
    except linalg.LinAlgError:
        return float(max(np.linalg.eigvalsh(G)[0], 0.0))
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(iters):
        w = linalg.cho_solve(fac, v)
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0:
            return 0.0
        new = 1.0 / nw
        v = w / nw
        if abs(new - lam) <= 1e-14 * new:
            lam = new
            break
        lam = new
    return float(lam)

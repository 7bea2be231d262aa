"""Last-layer interpolation under the implicit bias of mirror descent.

Mirror descent run to interpolation from ``a0`` returns the Bregman
projection ``argmin D_psi(a, a0) s.t. Phi a = y``.  Its KKT conditions are

    a = (grad psi)^{-1}(grad psi(a0) + Phi^T lam),   Phi a = y,

which :func:`bregman_fit` solves by Newton's method on the dual.  For
``psi = |.|^2/2`` this is the min-norm interpolant of :func:`min_norm_fit`.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.special import xlogy

from .errors import (
    Divergence,
    DomainViolation,
    NoConvergence,
    ShapeMismatch,
    SingularGram,
)


class Domain(Enum):
    ALL_REALS = "all_reals"
    POSITIVE_ORTHANT = "positive_orthant"


@dataclass(frozen=True)
class MirrorMap:
    """Separable strictly convex potential ``psi(w) = sum_i f(w_i)``.

    All callables act elementwise; ``potential`` returns per-coordinate
    values and :meth:`value` sums them.
    """

    name: str
    potential: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    inverse_gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    conjugate: Callable[[np.ndarray], np.ndarray]
    domain: Domain
    strong_convexity: Callable[[np.ndarray], float]

    def value(self, w) -> float:
        return float(np.sum(self.potential(np.asarray(w, dtype=np.float64))))

    def contains(self, w) -> bool:
        w = np.asarray(w, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            return False
        return self.domain is Domain.ALL_REALS or bool(np.all(w > 0))

    def bregman(self, a, b) -> float:
        """``D_psi(a, b) = psi(a) - psi(b) - <grad psi(b), a - b>``."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return float(np.sum(self.potential(a) - self.potential(b) - self.gradient(b) * (a - b)))

    def default_init(self, D: int) -> np.ndarray:
        """Zero for unconstrained mirrors, the uniform vector ``1/D`` on the orthant."""
        if self.domain is Domain.ALL_REALS:
            return np.zeros(D)
        return np.full(D, 1.0 / D)


SQUARED_L2 = MirrorMap(
    name="squared_l2",
    potential=lambda w: 0.5 * w * w,
    gradient=lambda w: np.array(w, dtype=np.float64),
    inverse_gradient=lambda v: np.array(v, dtype=np.float64),
    hessian=lambda w: np.ones_like(w, dtype=np.float64),
    conjugate=lambda v: 0.5 * v * v,
    domain=Domain.ALL_REALS,
    strong_convexity=lambda w: 1.0,
)

NEG_ENTROPY = MirrorMap(
    name="neg_entropy",
    potential=lambda w: xlogy(w, w),
    gradient=lambda w: np.log(w) + 1.0,
    inverse_gradient=lambda v: np.exp(v - 1.0),
    hessian=lambda w: 1.0 / w,
    conjugate=lambda v: np.exp(v - 1.0),
    domain=Domain.POSITIVE_ORTHANT,
    strong_convexity=lambda w: 1.0 / float(np.max(w)),
)


def mirror_library() -> dict[str, MirrorMap]:
    return {SQUARED_L2.name: SQUARED_L2, NEG_ENTROPY.name: NEG_ENTROPY}


def get_mirror(name) -> MirrorMap:
    if isinstance(name, MirrorMap):
        return name
    key = str(name).strip().lower().replace("-", "_")
    aliases = {"l2": "squared_l2", "sgd": "squared_l2", "quadratic": "squared_l2", "entropy": "neg_entropy"}
    lib = mirror_library()
    key = aliases.get(key, key)
    if key not in lib:
        raise KeyError(f"unknown mirror {name!r}; choose from {sorted(lib)}")
    return lib[key]


@dataclass(frozen=True)
class InterpolationResult:
    a: np.ndarray
    residual_inf: float
    dual: np.ndarray
    iterations: int


def _check_shapes(Phi, Y, a0):
    Phi = np.asarray(Phi, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Phi.ndim != 2:
        raise ShapeMismatch("Phi must be a matrix", shape=Phi.shape)
    n, D = Phi.shape
    if Y.shape[0] != n or Y.ndim > 2:
        raise ShapeMismatch("Y must have one row per row of Phi", phi=Phi.shape, y=Y.shape)
    if n > D:
        raise ShapeMismatch("need n <= D for interpolation", n=n, D=D)
    if a0 is None:
        a0 = np.zeros(D)
    a0 = np.asarray(a0, dtype=np.float64)
    if a0.shape != (D,):
        raise ShapeMismatch("a0 must be a D-vector", D=D, got=a0.shape)
    return Phi, Y, a0


def _gram_factor(G):
    try:
        fac = linalg.cho_factor(G, lower=False, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularGram("Gram matrix is not numerically positive definite") from exc
    diag = np.abs(np.diag(fac[0]))
    if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 > 1e16:
        raise SingularGram("Gram matrix is numerically singular", cond_lower_bound=(diag.max() / max(diag.min(), 1e-300)) ** 2)
    return fac


def min_norm_fit(Phi, Y, a0=None) -> InterpolationResult:
    """Min-norm interpolant ``a = a0 + Phi^T (Phi Phi^T)^{-1} (Y - Phi a0)``.

    The Gram system is solved by Cholesky without any ridge, followed by one
    step of iterative refinement.  ``Y`` may hold several columns.
    """
    Phi, Y, a0 = _check_shapes(Phi, Y, a0)
    fac = _gram_factor(Phi @ Phi.T)
    R = Y - (Phi @ a0 if Y.ndim == 1 else (Phi @ a0)[:, None])
    dual = linalg.cho_solve(fac, R)
    dual = dual + linalg.cho_solve(fac, R - Phi @ (Phi.T @ dual))
    step = Phi.T @ dual
    a = a0 + step if Y.ndim == 1 else a0[:, None] + step
    resid = float(np.max(np.abs(Phi @ a - Y))) if Y.size else 0.0
    return InterpolationResult(a, resid, dual, 2)


def _bregman_column(Phi, y, mirror, a0, tol, max_iter):
    g0 = mirror.gradient(a0)
    lam = np.zeros(Phi.shape[0])

    def state(lam):
        v = g0 + Phi.T @ lam
        a = mirror.inverse_gradient(v)
        with np.errstate(over="ignore", invalid="ignore"):
            dual_obj = float(lam @ y - np.sum(mirror.conjugate(v)))
        return a, Phi @ a - y, dual_obj

    a, r, obj = state(lam)
    best = float(np.max(np.abs(r)))
    for it in range(max_iter + 1):
        rinf = float(np.max(np.abs(r)))
        best = min(best, rinf)
        if rinf <= tol:
            return InterpolationResult(a, rinf, lam, it)
        if it == max_iter:
            break
        J = (Phi / mirror.hessian(a)) @ Phi.T
        try:
            delta = linalg.solve(J, -r, assume_a="pos")
        except linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        slope = float(-r @ delta)
        t = 1.0
        rnorm = float(np.linalg.norm(r))
        while True:
            a_new, r_new, obj_new = state(lam + t * delta)
            ok = mirror.contains(a_new) and np.all(np.isfinite(r_new))
            if ok and (obj_new >= obj + 1e-4 * t * slope or np.linalg.norm(r_new) < rnorm):
                break
            t *= 0.5
            if t < 1e-14:
                if not ok:
                    raise DomainViolation("backtracking stalled outside the mirror domain", iteration=it)
                raise NoConvergence("line search stalled", max_iter=max_iter, best_residual=best)
        lam = lam + t * delta
        a, r, obj = a_new, r_new, obj_new
    raise NoConvergence("dual Newton did not reach tolerance", max_iter=max_iter, best_residual=best)


def bregman_fit(Phi, y, mirror, a0=None, tol: float = 1e-10, max_iter: int = 100) -> InterpolationResult:
    """Bregman projection of ``a0`` onto ``{a : Phi a = y}`` by dual Newton.

    Parameters
    ----------
    Phi : ndarray (n, D)
    y : ndarray (n,) or (n, k)
        Multiple columns are projected independently.
    mirror : MirrorMap or str
    a0 : ndarray (D,), optional
        Defaults to :meth:`MirrorMap.default_init`.
    tol : float
        Absolute tolerance on ``|Phi a - y|_inf``.
    max_iter : int
        Newton iterations per column.

    On the positive orthant a target outside the cone ``Phi R_+^D`` has no
    interpolant; the dual then diverges and surfaces as
    ``DomainViolation`` or ``NoConvergence``.
    """
    mirror = get_mirror(mirror)
    Phi = np.asarray(Phi, dtype=np.float64)
    if a0 is None and Phi.ndim == 2:
        a0 = mirror.default_init(Phi.shape[1])
    Phi, Y, a0 = _check_shapes(Phi, y, a0)
    if not mirror.contains(a0):
        raise DomainViolation("a0 lies outside the mirror domain", mirror=mirror.name)
    if Y.ndim == 1:
        return _bregman_column(Phi, Y, mirror, a0, tol, max_iter)
    cols = [_bregman_column(Phi, Y[:, k], mirror, a0, tol, max_iter) for k in range(Y.shape[1])]
    return InterpolationResult(
        np.stack([c.a for c in cols], axis=1),
        max(c.residual_inf for c in cols),
        np.stack([c.dual for c in cols], axis=1),
        max(c.iterations for c in cols),
    )


def kkt_residual(Phi, y, mirror, a0, result: InterpolationResult) -> float:
    """Max of primal infeasibility and mirror-stationarity violation."""
    mirror = get_mirror(mirror)
    Phi = np.asarray(Phi, dtype=np.float64)
    feas = np.max(np.abs(Phi @ result.a - y))
    stat = np.max(np.abs(mirror.gradient(result.a) - mirror.gradient(a0) - Phi.T @ result.dual))
    return float(max(feas, stat))


@dataclass(frozen=True)
class Loss:
    """Squared loss ``r^2/2`` or Huber loss with threshold ``delta``."""

    kind: str = "squared"
    delta: float = 1.0

    def derivative(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "squared":
            return r
        return np.clip(r, -self.delta, self.delta)

    @classmethod
    def parse(cls, spec) -> Loss:
        if isinstance(spec, Loss):
            return spec
        text = str(spec).strip().lower()
        if text == "squared":
            return cls()
        if text.startswith("huber"):
            _, _, delta = text.partition(":")
            return cls("huber", float(delta) if delta else 1.0)
        raise ValueError(f"unknown loss {spec!r}")


def smd_train(
    Phi,
    y,
    loss="squared",
    mirror="squared_l2",
    step: float = 0.1,
    max_epochs: int = 100_000,
    tol: float = 1e-10,
    a0=None,
) -> InterpolationResult:
    """Full-batch mirror descent ``grad psi(a+) = grad psi(a) - step * Phi^T loss'(Phi a - y)``.

    Stops once ``|Phi a - y|_inf <= tol``.  ``iterations`` counts the updates made.
    """
    mirror = get_mirror(mirror)
    loss = Loss.parse(loss)
    Phi = np.asarray(Phi, dtype=np.float64)
    if a0 is None and Phi.ndim == 2:
        a0 = mirror.default_init(Phi.shape[1])
    Phi, y, a0 = _check_shapes(Phi, y, a0)
    g = mirror.gradient(a0)
    r0 = None
    for epoch in range(max_epochs + 1):
        a = mirror.inverse_gradient(g)
        r = Phi @ a - y
        rinf = float(np.max(np.abs(r)))
        if r0 is None:
            r0 = max(rinf, np.finfo(float).tiny)
        if rinf <= tol:
            return InterpolationResult(a, rinf, np.zeros(Phi.shape[0]), epoch)
        if not np.isfinite(rinf) or rinf > 1e6 * r0:
            raise Divergence("residual grew by 1e6; reduce the step", epoch=epoch, residual=rinf)
        if epoch < max_epochs:
            g = g - step * (Phi.T @ loss.derivative(r))
    raise NoConvergence("mirror descent did not interpolate", max_iter=max_epochs, best_residual=rinf)

"""Random-features networks with Gaussian or sign-quantized hidden layers.

The feature map is ``x^(l) = phi(W^(l) x^(l-1))`` for ``l = 1..L`` and the
model output is ``a^T x^(L)``; only ``a`` is ever trained.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erf

from . import bitpack
from .bitpack import PackedOneBit
from .errors import DimMismatch, EmptyDims, NonOddActivation, ZeroDim

_SQRT2 = np.sqrt(2.0)


class ActivationKind(Enum):
    """Pointwise activation. ``odd`` and ``lipschitz`` are recorded per variant."""

    IDENTITY = "identity"
    TANH = "tanh"
    SCALED_ERF = "scaled_erf"
    RELU = "relu"

    @property
    def odd(self) -> bool:
        return self is not ActivationKind.RELU

    @property
    def lipschitz(self) -> float:
        if self is ActivationKind.SCALED_ERF:
            # erf(z/sqrt2)' = sqrt(2/pi) exp(-z^2/2)
            return float(np.sqrt(2.0 / np.pi))
        return 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self is ActivationKind.IDENTITY:
            return z
        if self is ActivationKind.TANH:
            return np.tanh(z)
        if self is ActivationKind.SCALED_ERF:
            return erf(z / _SQRT2)
        return np.maximum(z, 0.0)

    @classmethod
    def parse(cls, name) -> ActivationKind:
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"erf": "scaled_erf", "linear": "identity"}
        return cls(aliases.get(key, key))


class WeightKind(Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"

    @classmethod
    def parse(cls, name) -> WeightKind:
        if isinstance(name, cls):
            return name
        return cls(str(name).strip().lower())


@dataclass(frozen=True, eq=False)
class WeightLayer:
    """One hidden layer, stored dense or as packed sign bits."""

    storage: np.ndarray | PackedOneBit

    @property
    def packed(self) -> bool:
        return isinstance(self.storage, PackedOneBit)

    @property
    def d_in(self) -> int:
        return self.storage.d_in if self.packed else self.storage.shape[1]

    @property
    def d_out(self) -> int:
        return self.storage.d_out if self.packed else self.storage.shape[0]

    def dense(self) -> np.ndarray:
        """Dense matrix of the layer (unpacked if stored as bits)."""
        return bitpack.unpack(self.storage) if self.packed else self.storage

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Pre-activations ``X W^T`` for a row batch ``X``."""
        if self.packed:
            return bitpack.packed_matmul(self.storage, X)
        return X @ self.storage.T


@dataclass(frozen=True, eq=False)
class RFNetwork:
    layers: tuple[WeightLayer, ...]
    activation: ActivationKind
    dims: tuple[int, ...]

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def d_out(self) -> int:
        return self.dims[-1]


@dataclass(frozen=True)
class GroundTruth:
    a_star: np.ndarray


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise EmptyDims("need at least one weight layer", dims=list(dims))
    if min(dims) < 1:
        raise ZeroDim("all dimensions must be positive", dims=list(dims))
    return dims


def gaussian_weights(dims, seed: int) -> list[np.ndarray]:
    """Layer matrices with i.i.d. ``N(0, 1/d_in)`` entries, drawn in layer order."""
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((dout, din)) / np.sqrt(din) for din, dout in zip(dims[:-1], dims[1:])]


def sign_matrix(W: np.ndarray) -> np.ndarray:
    """``sign(W)/sqrt(d_in)`` with ``sign(0) = +1``."""
    return np.where(W >= 0, 1.0, -1.0) / np.sqrt(W.shape[1])


def build_network(
    dims,
    activation="tanh",
    weight_kind="gaussian",
    seed: int = 0,
    *,
    packed: bool = False,
    allow_non_odd: bool = False,
) -> RFNetwork:
    """Sample a network.

    A Rademacher network is the sign of the Gaussian network drawn from the
    same seed, so the two kinds are paired draw for draw.

    Parameters
    ----------
    dims : sequence of int
        ``[d_0, d_1, ..., d_L]``.
    activation : ActivationKind or str
    weight_kind : WeightKind or str
    seed : int
    packed : bool
        Store Rademacher layers as bits (forward uses the packed kernel).
        Dense sign matrices are used otherwise.
    allow_non_odd : bool
        Gate for non-odd activations (ReLU).
    """
    dims = _check_dims(dims)
    act = ActivationKind.parse(activation)
    if not act.odd and not allow_non_odd:
        raise NonOddActivation("pass allow_non_odd to use this activation", activation=act.value)
    kind = WeightKind.parse(weight_kind)
    mats = gaussian_weights(dims, seed)
    if kind is WeightKind.GAUSSIAN:
        layers = tuple(WeightLayer(W) for W in mats)
    else:
        layers = tuple(
            WeightLayer(bitpack.pack_signs(W) if packed else sign_matrix(W)) for W in mats
        )
    return RFNetwork(layers, act, dims)


def quantize(net: RFNetwork, *, packed: bool = True) -> RFNetwork:
    """Sign-quantized copy of ``net``."""
    layers = []
    for layer in net.layers:
        W = layer.dense()
        layers.append(WeightLayer(bitpack.pack_signs(W) if packed else sign_matrix(W)))
    return RFNetwork(tuple(layers), net.activation, net.dims)


def network_from_matrices(mats, activation="identity", *, allow_non_odd: bool = False) -> RFNetwork:
    """Wrap explicit dense matrices as a network."""
    mats = [np.asarray(W, dtype=np.float64) for W in mats]
    if not mats:
        raise EmptyDims("need at least one weight layer")
    dims = [mats[0].shape[1]] + [W.shape[0] for W in mats]
    for W, din in zip(mats, dims[:-1]):
        if W.shape[1] != din:
            raise DimMismatch("consecutive layer shapes do not chain", shapes=[m.shape for m in mats])
    act = ActivationKind.parse(activation)
    if not act.odd and not allow_non_odd:
        raise NonOddActivation("pass allow_non_odd to use this activation", activation=act.value)
    return RFNetwork(tuple(WeightLayer(W) for W in mats), act, tuple(_check_dims(dims)))


def forward(net: RFNetwork, X, *, return_all: bool = False):
    """Features ``x^(L)`` for each row of ``X``.

    With ``return_all`` the list ``[x^(0), ..., x^(L)]`` is returned instead.
    """
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.dims[0]:
        raise DimMismatch("input width must equal d_0", d0=net.dims[0], got=X.shape)
    outs = [X] if return_all else None
    for layer in net.layers:
        X = net.activation(layer.apply(X))
        if return_all:
            outs.append(X)
    if return_all:
        return outs
    return X[0] if squeeze else X


def predict(net: RFNetwork, a, X) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != net.d_out:
        raise DimMismatch("a must have d_L rows", d_L=net.d_out, got=a.shape)
    return forward(net, X) @ a


def sample_ground_truth(d_L: int, seed: int) -> GroundTruth:
    """``a_* ~ N(0, I/d_L)``."""
    rng = np.random.default_rng(seed)
    return GroundTruth(rng.standard_normal(d_L) / np.sqrt(d_L))


def make_labels(net: RFNetwork, a_star, X) -> np.ndarray:
    a = a_star.a_star if isinstance(a_star, GroundTruth) else a_star
    return predict(net, a, X)

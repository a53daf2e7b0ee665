"""Fully connected tanh networks with exact input jets and parameter gradients.

Arrays are kept feature-major internally: activations are ``(width, n)``,
Jacobians ``(width, n, d)`` and Hessians ``(width, n, d, d)``, so that every
affine map is a single matrix product over all collocation points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels

# Glorot variant used by ``glorot_init``; the normal variant is not implemented.
GLOROT_VARIANT = "uniform"

DEFAULT_HIDDEN = (20, 20, 20, 20)


class NonFiniteObjectiveError(FloatingPointError):
    """Raised when an objective or its gradient is not finite."""


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkArchitecture:
    """Layer widths of a ``d -> hidden... -> 1`` tanh network."""

    input_dim: int
    hidden_layers: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError(f"hidden layer widths must be positive, got {self.hidden_layers}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, 1)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for each affine layer."""
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_out, fan_in in self.layer_shapes)

    def offsets(self) -> list[tuple[int, int, int]]:
        """(weight_start, bias_start, end) offsets of every layer in the flat vector."""
        out = []
        pos = 0
        for fan_out, fan_in in self.layer_shapes:
            w_start = pos
            b_start = w_start + fan_out * fan_in
            pos = b_start + fan_out
            out.append((w_start, b_start, pos))
        return out

    def flat_index(self, layer: int, kind: str, row: int, col: int = 0) -> int:
        """Position of weight ``W[row, col]`` or bias ``b[row]`` of ``layer``.

        Weights are stored row-major, followed by the layer's biases.
        """
        fan_out, fan_in = self.layer_shapes[layer]
        w_start, b_start, _ = self.offsets()[layer]
        if not 0 <= row < fan_out:
            raise IndexError(f"row {row} out of range for layer {layer}")
        if kind == "weight":
            if not 0 <= col < fan_in:
                raise IndexError(f"col {col} out of range for layer {layer}")
            return w_start + row * fan_in + col
        if kind == "bias":
            return b_start + row
        raise ValueError(f"kind must be 'weight' or 'bias', got {kind!r}")

    def unflatten_index(self, index: int) -> tuple[int, str, int, int]:
        """Inverse of ``flat_index``."""
        for layer, (w_start, b_start, end) in enumerate(self.offsets()):
            if index < end:
                fan_in = self.layer_shapes[layer][1]
                if index < b_start:
                    row, col = divmod(index - w_start, fan_in)
                    return layer, "weight", row, col
                return layer, "bias", index - b_start, 0
        raise IndexError(f"index {index} out of range for {self.n_params} parameters")

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into ``params`` for every layer."""
        params = np.asarray(params)
        if params.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has shape {params.shape}, expected ({self.n_params},)"
            )
        layers = []
        for (fan_out, fan_in), (w_start, b_start, end) in zip(self.layer_shapes, self.offsets()):
            layers.append(
                (params[w_start:b_start].reshape(fan_out, fan_in), params[b_start:end])
            )
        return layers


def glorot_init(arch: NetworkArchitecture, seed: int | np.random.SeedSequence) -> np.ndarray:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.n_params)
    for (fan_out, fan_in), (w_start, b_start, _) in zip(arch.layer_shapes, arch.offsets()):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[w_start:b_start] = rng.uniform(-limit, limit, size=fan_out * fan_in)
    return params


@dataclass
class Jet:
    """Network output and its input derivatives at a batch of points.

    ``value`` has shape ``(n,)``, ``first`` ``(n, d)`` and ``second``
    ``(n, d, d)``. Derivatives above the requested order are ``None``. For a
    single input point the leading batch axis is dropped.
    """

    value: np.ndarray
    first: np.ndarray | None = None
    second: np.ndarray | None = None

    @property
    def order(self) -> int:
        if self.second is not None:
            return 2
        if self.first is not None:
            return 1
        return 0

    def point(self, i: int) -> "Jet":
        return Jet(
            self.value[i],
            None if self.first is None else self.first[i],
            None if self.second is None else self.second[i],
        )


def _as_batch(arch: NetworkArchitecture, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    x = np.atleast_2d(x) if x.ndim == 1 else x
    if x.ndim == 0 or x.shape[-1] != arch.input_dim:
        if x.ndim == 0 and arch.input_dim == 1:
            return x.reshape(1, 1), True
        raise ValueError(f"input of shape {np.shape(x)} does not match input_dim={arch.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("network input contains non-finite values")
    return x, single


def forward(params: np.ndarray, arch: NetworkArchitecture, x) -> np.ndarray | float:
    """Network output at one point ``(d,)`` or a batch ``(n, d)``."""
    X, single = _as_batch(arch, x)
    layers = arch.unpack(params)
    a = np.ascontiguousarray(X.T)
    for W, b in layers[:-1]:
        a = np.tanh(_affine(W, b, a))
    W, b = layers[-1]
    u = _affine(W, b, a)[0]
    return float(u[0]) if single else u


def _affine(W, b, A):
    # value channel of every layer; the jet pass uses the same call so that
    # forward() and the jet value agree bit for bit
    return W @ A + b[:, None]


def hessian_pairs(d: int) -> list[tuple[int, int]]:
    """Upper-triangular index pairs ``(i, j)``, ``i <= j``, of a ``d x d`` Hessian."""
    return [(i, j) for i in range(d) for j in range(i, d)]


class JetTape:
    """Forward jet pass over stacked channels, kept for reverse accumulation.

    Per layer the channels are ``(width, C, n)`` with ``C = 1 + d + P``:
    value, the ``d`` input-gradient components and the Hessian entries of
    the ``P`` recorded index pairs. Channels above ``order`` are dropped.
    """

    def __init__(
        self,
        arch: NetworkArchitecture,
        params: np.ndarray,
        X: np.ndarray,
        order: int,
        pairs: list[tuple[int, int]] | None = None,
    ):
        self.arch = arch
        self.X = X
        self.order = order
        d = X.shape[1]
        if order < 2:
            pairs = []
        elif pairs is None:
            pairs = hessian_pairs(d)
        self.pairs = [tuple(sorted(p)) for p in pairs]
        self._pi = np.array([p[0] for p in self.pairs], dtype=np.int64)
        self._pj = np.array([p[1] for p in self.pairs], dtype=np.int64)
        self.layers = arch.unpack(params)
        self.n_channels = 1 + (d if order >= 1 else 0) + len(self.pairs)
        self.inputs: list[np.ndarray] = []
        self.pre: list[np.ndarray] = []
        self.tanh: list[np.ndarray] = []

    def _input_channels(self) -> np.ndarray:
        n, d = self.X.shape
        S = np.zeros((d, self.n_channels, n))
        S[:, 0, :] = self.X.T
        if self.order >= 1:
            S[np.arange(d), 1 + np.arange(d), :] = 1.0
        return S

    def run(self) -> Jet:
        n, d = self.X.shape
        C = self.n_channels
        S = self._input_channels()
        A = np.ascontiguousarray(self.X.T)
        for W, b in self.layers[:-1]:
            m, k = W.shape
            Z0 = _affine(W, b, A)
            if C > 1:
                Z = (W @ S.reshape(k, C * n)).reshape(m, C, n)
                Z[:, 0, :] = Z0
            else:
                Z = Z0.reshape(m, 1, n)
            A = np.tanh(Z0)
            self.inputs.append(S)
            self.pre.append(Z)
            self.tanh.append(A)
            S = _kernels.activate(Z, A, d, self.order, self._pi, self._pj)
        self.inputs.append(S)
        W, b = self.layers[-1]
        value = _affine(W, b, A)[0]
        if C > 1:
            out = (W @ S.reshape(S.shape[0], C * n)).reshape(C, n)
        first = second = None
        if self.order >= 1:
            first = out[1 : 1 + d].T.copy()
        if self.order >= 2:
            hp = out[1 + d :].T
            second = np.full((n, d, d), np.nan)
            second[:, self._pi, self._pj] = hp
            second[:, self._pj, self._pi] = hp
        return Jet(value, first, second)

    def pullback(self, bar_value=None, bar_first=None, bar_second=None) -> np.ndarray:
        """Gradient with respect to the parameters of ``sum(bar * jet)``.

        Each ``bar_*`` is the adjoint of the matching ``Jet`` field (same
        shape) or ``None`` when the objective does not depend on it. Hessian
        entries outside the recorded pairs must have zero adjoint.
        """
        n, d = self.X.shape
        C = self.n_channels
        pi, pj = self._pi, self._pj
        if bar_first is not None and self.order < 1:
            raise UnsupportedOrderError("tape was recorded without first derivatives")
        if bar_second is not None and self.order < 2:
            raise UnsupportedOrderError("tape was recorded without second derivatives")
        G = np.zeros((C, n))
        if bar_value is not None:
            G[0] = bar_value
        if bar_first is not None:
            G[1 : 1 + d] = bar_first.T
        if bar_second is not None:
            # both mirrored entries read the same pair value
            G[1 + d :] = (bar_second[:, pi, pj] + np.where(pi != pj, bar_second[:, pj, pi], 0.0)).T

        grad = np.zeros(self.arch.n_params)
        offsets = self.arch.offsets()
        W, _ = self.layers[-1]
        w_start, b_start, end = offsets[-1]
        S = self.inputs[-1]
        k = S.shape[0]
        grad[w_start:b_start] = S.reshape(k, C * n) @ G.reshape(-1)
        grad[b_start:end] = G[0].sum()
        Sbar = W[0][:, None, None] * G[None, :, :]

        for li in range(len(self.pre) - 1, -1, -1):
            W, _ = self.layers[li]
            m, k = W.shape
            w_start, b_start, end = offsets[li]
            Zbar = _kernels.activate_vjp(self.pre[li], self.tanh[li], Sbar, d, self.order, pi, pj)
            Zflat = Zbar.reshape(m, C * n)
            grad[w_start:b_start] = (Zflat @ self.inputs[li].reshape(k, C * n).T).reshape(-1)
            grad[b_start:end] = Zbar[:, 0, :].sum(axis=1)
            if li > 0:
                Sbar = (W.T @ Zflat).reshape(k, C, n)
        return grad


def jet_with_tape(
    params: np.ndarray,
    arch: NetworkArchitecture,
    x,
    order: int = 2,
    pairs: list[tuple[int, int]] | None = None,
):
    """Batched ``eval_jet`` that also returns the tape for ``JetTape.pullback``.

    ``pairs`` restricts the propagated Hessian entries; entries outside it are
    NaN in the returned jet.
    """
    if order not in (0, 1, 2):
        raise UnsupportedOrderError(f"derivative order {order} is not supported (max 2)")
    X, _ = _as_batch(arch, x)
    tape = JetTape(arch, np.asarray(params, dtype=np.float64), X, order, pairs)
    return tape.run(), tape


def eval_jet(params: np.ndarray, arch: NetworkArchitecture, x, order: int = 2) -> Jet:
    """Exact value, gradient and Hessian of the network output with respect to ``x``.

    ``x`` may be a single point ``(d,)`` or a batch ``(n, d)``. Fields above
    ``order`` are ``None``.
    """
    if order not in (0, 1, 2):
        raise UnsupportedOrderError(f"derivative order {order} is not supported (max 2)")
    X, single = _as_batch(arch, x)
    jet = JetTape(arch, np.asarray(params, dtype=np.float64), X, order).run()
    return jet.point(0) if single else jet


Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def objective_gradient(objective: Objective, params: np.ndarray) -> tuple[float, np.ndarray]:
    """Evaluate a differentiable objective and check the result.

    ``objective`` maps a parameter vector to ``(value, grad)``; objectives
    built from ``jet_with_tape`` obtain ``grad`` by reverse accumulation
    through the recorded jet computation.
    """
    value, grad = objective(params)
    value = float(value)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(params):
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {np.shape(params)}")
    if not np.isfinite(value):
        raise NonFiniteObjectiveError(f"objective value is {value}")
    bad = ~np.isfinite(grad)
    if bad.any():
        raise NonFiniteObjectiveError(
            f"gradient has {int(bad.sum())} non-finite entries (first at index {int(np.argmax(bad))})"
        )
    return value, grad

"""Collocation points on the unit hypercube and adaptive point doubling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_Q = 5.0
DEFAULT_COUNT = 512


def _check_count(n: int) -> int:
    n = int(n)
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    return n


def _jittered_unit(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform points in the unit cube, one per cell of a ``k^d`` grid
    (``k = floor(n^(1/d))``) and the remainder i.i.d."""
    k = max(1, int(math.floor(n ** (1.0 / d) + 1e-9)))
    m = k**d
    grids = np.meshgrid(*[np.arange(k)] * d, indexing="ij")
    cells = np.stack([g.ravel() for g in grids], axis=1)
    pts = np.empty((n, d))
    pts[:m] = (cells + rng.uniform(size=(m, d))) / k
    pts[m:] = rng.uniform(size=(n - m, d))
    return pts


def _open_interval(X: np.ndarray) -> np.ndarray:
    # uniform() is in [0, 1); an exact 0 has probability ~2^-53 but must not
    # land on the boundary
    tiny = np.nextafter(0.0, 1.0)
    return np.where(X <= 0.0, tiny, X)


def sample_interior(
    d: int, n: int, rng: np.random.Generator, stratified: bool = False
) -> np.ndarray:
    """``n`` uniform points in ``(0, 1)^d`` as an ``(n, d)`` array."""
    n = _check_count(n)
    X = _jittered_unit(d, n, rng) if stratified else rng.uniform(size=(n, d))
    return _open_interval(X)


def sample_boundary(
    d: int, n: int, rng: np.random.Generator, stratified: bool = False
) -> np.ndarray:
    """``n`` uniform points on the boundary of ``[0, 1]^d``.

    Each point picks one of the ``2d`` faces with equal probability, pins the
    face's coordinate to 0 or 1 and draws the rest uniformly. With
    ``stratified`` the faces get equal shares and each face is sampled with
    jittered cells.
    """
    n = _check_count(n)
    if stratified:
        faces = np.arange(n) % (2 * d)
    else:
        faces = rng.integers(0, 2 * d, size=n)
    X = np.empty((n, d))
    for f in range(2 * d):
        idx = np.flatnonzero(faces == f)
        if len(idx) == 0:
            continue
        axis, side = divmod(f, 2)
        if d > 1:
            free = [a for a in range(d) if a != axis]
            if stratified:
                X[np.ix_(idx, free)] = _jittered_unit(d - 1, len(idx), rng)
            else:
                X[np.ix_(idx, free)] = rng.uniform(size=(len(idx), d - 1))
        X[idx, axis] = float(side)
    return X


@dataclass(frozen=True)
class CollocationSet:
    interior: np.ndarray
    boundary: np.ndarray
    seed: int = 0


class Decision(enum.Enum):
    KEEP = "keep"
    DOUBLE_INTERIOR = "double_interior"
    DOUBLE_BOUNDARY = "double_boundary"
    DOUBLE_BOTH = "double_both"

    @property
    def interior(self) -> bool:
        return self in (Decision.DOUBLE_INTERIOR, Decision.DOUBLE_BOTH)

    @property
    def boundary(self) -> bool:
        return self in (Decision.DOUBLE_BOUNDARY, Decision.DOUBLE_BOTH)


def fixed_boundary(d: int) -> np.ndarray:
    """The two boundary points of the unit interval."""
    if d != 1:
        raise ValueError("only the unit interval has a finite boundary")
    return np.array([[0.0], [1.0]])


class SeedStream:
    """Independent child generators for training and validation sets.

    Generation ``k`` of each stream is a pure function of the root seed, so
    the sequence of point sets depends only on the seed and the decisions.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._root = np.random.SeedSequence(self.seed)
        self._train, self._val = self._root.spawn(2)

    def rngs(self, generation: int) -> tuple[np.random.Generator, np.random.Generator]:
        tr = np.random.SeedSequence(self._train.entropy, spawn_key=self._train.spawn_key + (generation,))
        va = np.random.SeedSequence(self._val.entropy, spawn_key=self._val.spawn_key + (generation,))
        return np.random.default_rng(tr), np.random.default_rng(va)


@dataclass(frozen=True)
class AdaptiveState:
    dim: int
    n_interior: int
    n_boundary: int
    train: CollocationSet
    validation: CollocationSet
    q: float = DEFAULT_Q
    boundary_frozen: bool = False
    generation: int = 0
    initial_interior: int = 0
    initial_boundary: int = 0
    max_points: int | None = None


def _draw_set(d, n_i, n_b, rng, frozen, seed) -> CollocationSet:
    interior = sample_interior(d, n_i, rng)
    boundary = fixed_boundary(d) if frozen else sample_boundary(d, n_b, rng)
    return CollocationSet(interior, boundary, seed)


def _draw_sets(d, n_i, n_b, seed, generation, frozen):
    rng_t, rng_v = SeedStream(seed).rngs(generation)
    return (
        _draw_set(d, n_i, n_b, rng_t, frozen, seed),
        _draw_set(d, n_i, n_b, rng_v, frozen, seed),
    )


def initial_state(
    d: int,
    n_interior: int = DEFAULT_COUNT,
    n_boundary: int = DEFAULT_COUNT,
    seed: int = 0,
    q: float = DEFAULT_Q,
    boundary_frozen: bool | None = None,
    max_points: int | None = None,
) -> AdaptiveState:
    """Fresh training and validation sets.

    ``boundary_frozen`` defaults to ``d == 1``: the two end points then form
    the whole boundary set and ``n_boundary`` is fixed at 2. ``max_points``
    caps each count; a doubling that would exceed it is dropped. ``None``
    means no cap.
    """
    if boundary_frozen is None:
        boundary_frozen = d == 1
    if boundary_frozen:
        if d != 1:
            raise ValueError("a frozen boundary set needs d=1, where two points cover the boundary")
        n_boundary = 2
    n_interior, n_boundary = _check_count(n_interior), _check_count(n_boundary)
    if not q > 0:
        raise ValueError(f"threshold q must be positive, got {q}")
    if max_points is not None and max_points < max(n_interior, n_boundary):
        raise ValueError(f"max_points={max_points} is below the initial counts")
    train, val = _draw_sets(d, n_interior, n_boundary, seed, 0, boundary_frozen)
    return AdaptiveState(
        d, n_interior, n_boundary, train, val, float(q), boundary_frozen, 0, n_interior, n_boundary,
        max_points,
    )


def adaptive_check(train_losses, val_losses, state: AdaptiveState) -> Decision:
    """Compare each validation loss component with its training counterpart."""
    values = tuple(train_losses) + tuple(val_losses)
    if not all(np.isfinite(v) and v >= 0 for v in values):
        raise ValueError(f"losses must be finite and non-negative, got {values}")
    t_i, t_b = train_losses
    v_i, v_b = val_losses
    grow_i = v_i > state.q * t_i
    grow_b = v_b > state.q * t_b and not state.boundary_frozen
    if grow_i and grow_b:
        return Decision.DOUBLE_BOTH
    if grow_i:
        return Decision.DOUBLE_INTERIOR
    if grow_b:
        return Decision.DOUBLE_BOUNDARY
    return Decision.KEEP


def apply_doubling(state: AdaptiveState, decision: Decision) -> AdaptiveState:
    """Double the flagged counts and redraw both point sets.

    New points come from the next generation of the state's seed streams.
    """
    decision = Decision(decision)
    cap = state.max_points
    grow_i = decision.interior and (cap is None or 2 * state.n_interior <= cap)
    grow_b = decision.boundary and not state.boundary_frozen and (cap is None or 2 * state.n_boundary <= cap)
    if not (grow_i or grow_b):
        return state
    n_i = state.n_interior * (2 if grow_i else 1)
    n_b = state.n_boundary * (2 if grow_b else 1)
    gen = state.generation + 1
    train, val = _draw_sets(state.dim, n_i, n_b, state.train.seed, gen, state.boundary_frozen)
    return replace(
        state, n_interior=n_i, n_boundary=n_b, train=train, validation=val, generation=gen
    )

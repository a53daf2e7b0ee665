"""Monte-Carlo residual losses and the three ways of combining them.

Losses are means of ``|residual|^p`` over a point set. Combining strategies:

* ``original``: ``L_I + L_B``
* ``optimal_weight``: ``|O| lam L_I + |dO| (1 - lam) L_B``
* ``magnitude_normalization``: each residual sum divided by a magnitude sum,
  the interior one taken from the network itself and the boundary one from
  the boundary data.

``LossEvaluator`` computes a ``LossBreakdown`` and, on request, its exact
parameter gradient by reverse accumulation through the network jets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net import Jet, NetworkArchitecture, jet_with_tape
from .problems import LinearPDEProblem

ORIGINAL = "original"
OPTIMAL_WEIGHT = "optimal_weight"
MAGNITUDE_NORMALIZATION = "magnitude_normalization"
METHODS = (ORIGINAL, OPTIMAL_WEIGHT, MAGNITUDE_NORMALIZATION)

INTERIOR_FLOOR = 1e-30


class HomogeneousBoundaryError(ValueError):
    """Magnitude normalization with boundary data that vanishes on the sample."""


class ZeroLoss(Exception):
    """The loss is exactly zero: the optimum is reached and its log is undefined."""


@dataclass(frozen=True)
class LossStrategy:
    kind: str = ORIGINAL
    lam: float | None = None
    p: float = 2.0
    lam_complement: float | None = None
    boundary_denominator: float | None = None
    interior_floor: float = INTERIOR_FLOOR
    include_source: bool = True

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown loss strategy {self.kind!r}; expected one of {METHODS}")
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.kind == OPTIMAL_WEIGHT:
            _check_lambda(self.lam)
            if self.lam_complement is None:
                object.__setattr__(self, "lam_complement", 1.0 - self.lam)
            _check_lambda(self.lam_complement)
            if abs(self.lam + self.lam_complement - 1.0) > 1e-12:
                raise ValueError("lam and lam_complement must sum to 1")
        if self.boundary_denominator is not None and not self.boundary_denominator > 0:
            raise HomogeneousBoundaryError(
                f"boundary denominator must be positive, got {self.boundary_denominator}"
            )
        if not self.interior_floor > 0:
            raise ValueError("interior_floor must be positive")

    @classmethod
    def original(cls, p: float = 2.0) -> "LossStrategy":
        return cls(ORIGINAL, p=p)

    @classmethod
    def optimal_weight(cls, lam: float, p: float = 2.0, complement: float | None = None) -> "LossStrategy":
        """``complement`` is ``1 - lam``, worth passing when lam is close to 1."""
        return cls(OPTIMAL_WEIGHT, lam=lam, p=p, lam_complement=complement)

    @classmethod
    def magnitude_normalized(cls, p: float = 2.0, **kw) -> "LossStrategy":
        return cls(MAGNITUDE_NORMALIZATION, p=p, **kw)


@dataclass(frozen=True)
class LossBreakdown:
    """Mean losses, mean-form magnitude denominators and the assembled total.

    For strategies without normalization both denominators are 1.
    """

    interior: float
    boundary: float
    interior_denominator: float
    boundary_denominator: float
    total: float
    log_total: float


def _check_lambda(lam) -> float:
    if lam is None or not (0.0 < lam < 1.0):
        raise ValueError(f"loss weight lambda must lie in (0, 1), got {lam}")
    return float(lam)


def total_original(L_I: float, L_B: float) -> float:
    return L_I + L_B


def total_weighted(L_I: float, L_B: float, lam: float, measures=(1.0, 1.0)) -> float:
    """``|O| lam L_I + |dO| (1 - lam) L_B``."""
    lam = _check_lambda(lam)
    m_int, m_bnd = measures
    return m_int * lam * L_I + m_bnd * (1.0 - lam) * L_B


def boundary_data_magnitude(
    problem: LinearPDEProblem, rng: np.random.Generator, n: int = 100_000, p: float = 2.0
) -> float:
    """Mean ``|G|^p`` over the whole boundary, a fixed denominator for the
    boundary ratio of magnitude normalization.

    For the unit interval the two end points are used exactly.
    """
    from .sampling import fixed_boundary, sample_boundary

    if problem.dim == 1:
        X = fixed_boundary(1)
    else:
        X = sample_boundary(problem.dim, n, rng, stratified=True)
    value = float(np.mean(_pow_abs(np.asarray(problem.boundary_data(X), dtype=np.float64), p)))
    if not value > 0:
        raise HomogeneousBoundaryError(
            "boundary data vanishes; magnitude normalization would admit the zero function"
        )
    return value


def log_objective(total: float) -> float:
    if total == 0.0:
        raise ZeroLoss("loss is exactly zero")
    if not total > 0:
        raise ValueError(f"log of non-positive loss {total}")
    return math.log(total)


def _pow_abs(r: np.ndarray, p: float) -> np.ndarray:
    return r * r if p == 2 else np.abs(r) ** p


def _pow_abs_grad(r: np.ndarray, p: float) -> np.ndarray:
    # derivative of |r|^p
    return 2.0 * r if p == 2 else p * np.sign(r) * np.abs(r) ** (p - 1)


class TermData:
    """Coefficients and right-hand side of one operator evaluated on points."""

    def __init__(self, terms, rhs, X: np.ndarray):
        if len(X) == 0:
            raise ValueError("loss needs at least one point")
        self.X = X
        self.indices = [t.index for t in terms]
        self.coeffs = [np.asarray(t.coeff(X), dtype=np.float64) for t in terms]
        self.rhs = np.asarray(rhs(X), dtype=np.float64)
        self.order = max(ix.total for ix in self.indices)
        pairs = {ix.hessian_pair() for ix in self.indices}
        pairs.discard(None)
        self.pairs = sorted(pairs)

    def derivatives(self, jet: Jet) -> list[np.ndarray]:
        return [ix.select(jet) for ix in self.indices]

    def adjoint(self, jet: Jet, bars: list[np.ndarray]):
        """Turn per-term adjoints into jet adjoints for ``JetTape.pullback``."""
        n, d = self.X.shape
        bv = bf = bs = None
        for ix, bar in zip(self.indices, bars):
            if ix.total == 0:
                bv = bar if bv is None else bv + bar
            elif ix.total == 1:
                if bf is None:
                    bf = np.zeros((n, d))
                bf[:, ix.orders.index(1)] += bar
            else:
                if bs is None:
                    bs = np.zeros((n, d, d))
                i, j = ix.hessian_pair()
                bs[:, i, j] += bar
        return bv, bf, bs


def _evaluate_part(data: TermData, jet: Jet, p: float, with_magnitude: bool, include_source: bool):
    derivs = data.derivatives(jet)
    terms = [c * D for c, D in zip(data.coeffs, derivs)]
    r = sum(terms[1:], terms[0]) - data.rhs
    out = {"r": r, "terms": terms, "num": float(np.sum(_pow_abs(r, p)))}
    if with_magnitude:
        m = sum((np.abs(t) for t in terms[1:]), np.abs(terms[0]))
        if include_source:
            m = m + np.abs(data.rhs)
        out["m"] = m
        out["den"] = float(np.sum(_pow_abs(m, p)))
    return out


class LossEvaluator:
    """Losses of one network architecture on one problem under one strategy."""

    def __init__(self, problem: LinearPDEProblem, arch: NetworkArchitecture, strategy: LossStrategy):
        if arch.input_dim != problem.dim:
            raise ValueError(f"network input dim {arch.input_dim} != problem dim {problem.dim}")
        self.problem = problem
        self.arch = arch
        self.strategy = strategy
        self._cache: dict = {}

    def prepare(self, interior: np.ndarray, boundary: np.ndarray) -> tuple[TermData, TermData]:
        key = (id(interior), id(boundary))
        hit = self._cache.get(key)
        if hit is not None and hit[0] is interior and hit[1] is boundary:
            return hit[2]
        pr = self.problem
        tdi = TermData(pr.interior_terms, pr.source, np.atleast_2d(interior))
        tdb = TermData(pr.boundary_terms, pr.boundary_data, np.atleast_2d(boundary))
        if len(self._cache) >= 4:
            self._cache.clear()
        self._cache[key] = (interior, boundary, (tdi, tdb))
        return tdi, tdb

    def _boundary_denominator_sum(self, tdb: TermData) -> float:
        s = self.strategy
        if s.boundary_denominator is not None:
            # stored as a mean; rescale to the current sample
            return s.boundary_denominator * len(tdb.X)
        den = float(np.sum(_pow_abs(tdb.rhs, s.p)))
        if not den > 0:
            raise HomogeneousBoundaryError(
                "boundary data vanishes on every boundary point; magnitude normalization "
                "would admit the zero function as a minimizer"
            )
        return den

    def evaluate(self, params, interior, boundary, gradient: bool = False, log: bool = False):
        """``LossBreakdown`` on the given points, plus the gradient of the total
        (or of its log) when ``gradient`` is set."""
        s = self.strategy
        p = s.p
        tdi, tdb = self.prepare(interior, boundary)
        mag = s.kind == MAGNITUDE_NORMALIZATION
        jet_i, tape_i = jet_with_tape(params, self.arch, tdi.X, tdi.order, tdi.pairs)
        jet_b, tape_b = jet_with_tape(params, self.arch, tdb.X, tdb.order, tdb.pairs)
        pi = _evaluate_part(tdi, jet_i, p, mag, s.include_source)
        pb = _evaluate_part(tdb, jet_b, p, False, False)
        n_i, n_b = len(tdi.X), len(tdb.X)
        L_I, L_B = pi["num"] / n_i, pb["num"] / n_b

        if s.kind == ORIGINAL:
            D_I = D_B = 1.0
            w_i, w_b = 1.0, 1.0
        elif s.kind == OPTIMAL_WEIGHT:
            D_I = D_B = 1.0
            w_i = self.problem.measure_interior * s.lam
            w_b = self.problem.measure_boundary * s.lam_complement
        else:
            floored = pi["den"] <= s.interior_floor * n_i
            D_I = max(pi["den"] / n_i, s.interior_floor)
            D_B = self._boundary_denominator_sum(tdb) / n_b
            w_i, w_b = 1.0 / D_I, 1.0 / D_B
        total = w_i * L_I + w_b * L_B
        log_total = math.log(total) if total > 0 else -math.inf
        breakdown = LossBreakdown(L_I, L_B, D_I, D_B, total, log_total)
        if not gradient:
            return breakdown
        if log:
            scale = 1.0 / total if total > 0 else 0.0
            if total == 0:
                raise ZeroLoss("loss is exactly zero")
        else:
            scale = 1.0

        # adjoint of each term's contribution alpha_j * d^beta_j u
        dr_i = (scale * w_i / n_i) * _pow_abs_grad(pi["r"], p)
        bars_i = [c * dr_i for c in tdi.coeffs]
        if mag and not floored:
            # d/dtheta of -L_I * den / D_I^2 with den the mean magnitude
            dm = (-scale * L_I / (D_I * D_I) / n_i) * _pow_abs_grad(pi["m"], p)
            bars_i = [b + c * np.sign(t) * dm for b, c, t in zip(bars_i, tdi.coeffs, pi["terms"])]
        dr_b = (scale * w_b / n_b) * _pow_abs_grad(pb["r"], p)
        bars_b = [c * dr_b for c in tdb.coeffs]
        grad = tape_i.pullback(*tdi.adjoint(jet_i, bars_i))
        grad += tape_b.pullback(*tdb.adjoint(jet_b, bars_b))
        return breakdown, grad

    def objective(self, interior, boundary, log: bool = True):
        """``params -> (value, grad)`` for the optimizer; ``log`` minimizes the
        log of the total."""

        def f(params):
            br, g = self.evaluate(params, interior, boundary, gradient=True, log=log)
            return (br.log_total if log else br.total), g

        return f


def interior_loss(problem, arch, params, points, p: float = 2.0) -> float:
    """Mean ``|interior residual|^p`` of the network over ``points``."""
    td = TermData(problem.interior_terms, problem.source, np.atleast_2d(points))
    jet, _ = jet_with_tape(params, arch, td.X, td.order, td.pairs)
    return _evaluate_part(td, jet, p, False, False)["num"] / len(td.X)


def boundary_loss(problem, arch, params, points, p: float = 2.0) -> float:
    td = TermData(problem.boundary_terms, problem.boundary_data, np.atleast_2d(points))
    jet, _ = jet_with_tape(params, arch, td.X, td.order, td.pairs)
    return _evaluate_part(td, jet, p, False, False)["num"] / len(td.X)


def total_magnitude_normalized(
    problem, arch, params, interior_points, boundary_points, p: float = 2.0, strategy=None
) -> LossBreakdown:
    if strategy is None:
        strategy = LossStrategy.magnitude_normalized(p=p)
    elif strategy.kind != MAGNITUDE_NORMALIZATION or strategy.p != p:
        raise ValueError("strategy must be magnitude normalization with matching p")
    return LossEvaluator(problem, arch, strategy).evaluate(params, interior_points, boundary_points)


def unscaled_normalized_loss(problem, arch, params, interior_points, boundary_points, p=2.0):
    """``(M_B L_I + M_I L_B) / (M_I + M_B)`` with ``M_I`` taken from the network
    and ``M_B`` from the boundary data.

    Kept only to demonstrate its defect: for a problem with a trivial
    interior solution the zero function gives ``L_I = M_I = 0`` and the
    functional vanishes although the boundary conditions are violated.
    """
    tdi = TermData(problem.interior_terms, problem.source, np.atleast_2d(interior_points))
    tdb = TermData(problem.boundary_terms, problem.boundary_data, np.atleast_2d(boundary_points))
    ji, _ = jet_with_tape(params, arch, tdi.X, tdi.order, tdi.pairs)
    jb, _ = jet_with_tape(params, arch, tdb.X, tdb.order, tdb.pairs)
    pi = _evaluate_part(tdi, ji, p, True, False)
    pb = _evaluate_part(tdb, jb, p, False, False)
    vol, area = problem.measure_interior, problem.measure_boundary
    L_I, L_B = vol * pi["num"] / len(tdi.X), area * pb["num"] / len(tdb.X)
    M_I = vol * pi["den"] / len(tdi.X)
    M_B = area * float(np.mean(_pow_abs(tdb.rhs, p)))
    if M_I + M_B == 0.0:
        return L_I + L_B
    return (M_B * L_I + M_I * L_B) / (M_I + M_B)

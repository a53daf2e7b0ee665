"""Linear boundary-value problems on the unit hypercube.

A problem is a list of interior operator terms ``alpha_i(x) * d^beta_i u``
with a source ``F`` and a list of boundary terms with data ``G``. All
coefficient, source and data functions are vectorised: they map an
``(n, d)`` array of points to an ``(n,)`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .net import Jet

PointFunction = Callable[[np.ndarray], np.ndarray]
JetFunction = Callable[[np.ndarray], Jet]

SELF_CHECK_POINTS = 100
SELF_CHECK_TOL = 1e-9


class MissingDerivativeError(ValueError):
    """A term needs a derivative the jet does not carry."""


class DegenerateProblemError(ValueError):
    pass


@dataclass(frozen=True)
class MultiIndex:
    """Derivative orders per coordinate, e.g. ``(2, 0)`` for d^2/dx1^2."""

    orders: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(int(o) for o in self.orders))
        if any(o < 0 for o in self.orders):
            raise ValueError(f"negative derivative order in {self.orders}")

    @property
    def dim(self) -> int:
        return len(self.orders)

    @property
    def total(self) -> int:
        return sum(self.orders)

    @classmethod
    def identity(cls, d: int) -> "MultiIndex":
        return cls((0,) * d)

    @classmethod
    def partial(cls, d: int, *axes: int) -> "MultiIndex":
        """Index of the mixed derivative over ``axes`` (repeats allowed)."""
        orders = [0] * d
        for ax in axes:
            orders[ax] += 1
        return cls(tuple(orders))

    def hessian_pair(self) -> tuple[int, int] | None:
        if self.total != 2:
            return None
        axes = [i for i, o in enumerate(self.orders) for _ in range(o)]
        return (axes[0], axes[1])

    def select(self, jet: Jet) -> np.ndarray:
        """The derivative of ``jet`` this index refers to."""
        if self.total == 0:
            return jet.value
        if self.total == 1:
            if jet.first is None:
                raise MissingDerivativeError(f"{self.orders} needs first derivatives")
            return jet.first[..., self.orders.index(1)]
        if self.total == 2:
            if jet.second is None:
                raise MissingDerivativeError(f"{self.orders} needs second derivatives")
            i, j = self.hessian_pair()
            return jet.second[..., i, j]
        raise MissingDerivativeError(f"derivative order {self.total} exceeds 2")


@dataclass(frozen=True)
class OperatorTerm:
    coeff: PointFunction
    index: MultiIndex


def constant(c: float) -> PointFunction:
    return lambda X: np.full(len(X), float(c))


def zero_function(X: np.ndarray) -> np.ndarray:
    return np.zeros(len(X))


@dataclass(frozen=True)
class MagnitudeBounds:
    m_interior: float
    m_boundary: float
    p: float = 2.0


@dataclass(frozen=True)
class LinearPDEProblem:
    """A linear PDE with boundary conditions on ``[0, 1]^dim``.

    If ``analytic_solution`` is given it must return the exact jet (order 2)
    at a batch of points; it is checked against the interior operator at
    construction.
    """

    dim: int
    interior_terms: tuple[OperatorTerm, ...]
    source: PointFunction
    boundary_terms: tuple[OperatorTerm, ...]
    boundary_data: PointFunction
    analytic_solution: JetFunction | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    closed_form_bounds: Callable[[float], MagnitudeBounds] | None = None

    def __post_init__(self):
        object.__setattr__(self, "interior_terms", tuple(self.interior_terms))
        object.__setattr__(self, "boundary_terms", tuple(self.boundary_terms))
        if not self.interior_terms or not self.boundary_terms:
            raise ValueError("a problem needs at least one interior and one boundary term")
        for term in self.interior_terms + self.boundary_terms:
            if term.index.dim != self.dim:
                raise ValueError(f"term index {term.index.orders} does not match dim={self.dim}")
        if self.analytic_solution is not None:
            X = np.random.default_rng(12345).uniform(size=(SELF_CHECK_POINTS, self.dim))
            r = interior_residual(self, self.analytic_solution(X), X)
            worst = float(np.max(np.abs(r)))
            if not worst <= SELF_CHECK_TOL:
                raise ValueError(
                    f"analytic solution of {self.name} leaves interior residual {worst:.3e}"
                )

    @property
    def measure_interior(self) -> float:
        return 1.0

    @property
    def measure_boundary(self) -> float:
        return 2.0 * self.dim

    @property
    def derivative_order(self) -> int:
        return max(t.index.total for t in self.interior_terms + self.boundary_terms)

    @property
    def is_dirichlet(self) -> bool:
        return len(self.boundary_terms) == 1 and self.boundary_terms[0].index.total == 0

    def hessian_pairs(self, boundary: bool = False) -> list[tuple[int, int]]:
        """Hessian entries the interior (or boundary) operator reads."""
        terms = self.boundary_terms if boundary else self.interior_terms
        pairs = {t.index.hessian_pair() for t in terms}
        pairs.discard(None)
        return sorted(pairs)


def _terms_matrix(terms, jet: Jet, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    rows = []
    for term in terms:
        rows.append(term.coeff(X) * term.index.select(jet))
    return np.array(rows)


def interior_residual(problem: LinearPDEProblem, jet: Jet, x) -> np.ndarray:
    """``sum_j alpha_j(x) d^beta_j u(x) - F(x)`` for a jet at point(s) ``x``."""
    X = np.atleast_2d(x)
    r = _terms_matrix(problem.interior_terms, jet, X).sum(axis=0) - problem.source(X)
    return r if np.ndim(x) == 2 else r[0]


def boundary_residual(problem: LinearPDEProblem, jet: Jet, x) -> np.ndarray:
    X = np.atleast_2d(x)
    r = _terms_matrix(problem.boundary_terms, jet, X).sum(axis=0) - problem.boundary_data(X)
    return r if np.ndim(x) == 2 else r[0]


def magnitude_integrand_interior(
    problem: LinearPDEProblem, jet: Jet, x, p: float = 2.0, include_source: bool = False
):
    """``[sum_j |alpha_j d^beta_j u| (+ |F|)]^p``."""
    X = np.atleast_2d(x)
    s = np.abs(_terms_matrix(problem.interior_terms, jet, X)).sum(axis=0)
    if include_source:
        s = s + np.abs(problem.source(X))
    out = s**p
    return out if np.ndim(x) == 2 else out[0]


def magnitude_integrand_boundary(problem: LinearPDEProblem, jet: Jet, x, p: float = 2.0):
    X = np.atleast_2d(x)
    out = np.abs(_terms_matrix(problem.boundary_terms, jet, X)).sum(axis=0) ** p
    return out if np.ndim(x) == 2 else out[0]


def estimate_magnitude_bounds(
    problem: LinearPDEProblem,
    solution: JetFunction,
    rng: np.random.Generator,
    n_interior: int = 100_000,
    n_boundary: int = 100_000,
    p: float = 2.0,
    include_source: bool = False,
    stratified: bool = True,
) -> MagnitudeBounds:
    """Monte-Carlo estimates of the magnitude bounds ``M_I`` and ``M_B``.

    Each bound is the domain measure times the sample mean of the integrand.
    With ``stratified`` the uniform samples are jittered over a regular grid
    of cells (every sample is still uniform over the domain), which keeps
    the estimate stable for strongly localised integrands.
    """
    from .sampling import sample_boundary, sample_interior

    if n_interior < 1 or n_boundary < 1:
        raise ValueError("sample counts must be positive")
    Xi = sample_interior(problem.dim, n_interior, rng, stratified=stratified)
    Xb = sample_boundary(problem.dim, n_boundary, rng, stratified=stratified)
    mi = magnitude_integrand_interior(problem, solution(Xi), Xi, p, include_source)
    mb = magnitude_integrand_boundary(problem, solution(Xb), Xb, p)
    return MagnitudeBounds(
        problem.measure_interior * float(np.mean(mi)),
        problem.measure_boundary * float(np.mean(mb)),
        p,
    )


def optimal_lambda(bounds: MagnitudeBounds) -> float:
    """Loss weight ``M_B / (M_I + M_B)``."""
    total = bounds.m_interior + bounds.m_boundary
    if not total > 0:
        raise DegenerateProblemError("both magnitude bounds are zero")
    return bounds.m_boundary / total


def optimal_weights(bounds: MagnitudeBounds) -> tuple[float, float]:
    """``(lam, 1 - lam)`` of ``optimal_lambda``, the second computed without
    cancellation so that weights close to 1 keep full relative precision."""
    total = bounds.m_interior + bounds.m_boundary
    if not total > 0:
        raise DegenerateProblemError("both magnitude bounds are zero")
    return bounds.m_boundary / total, bounds.m_interior / total


def lambda_original(problem: LinearPDEProblem) -> float:
    """Loss weight under which the weighted loss reproduces the plain sum."""
    return problem.measure_boundary / (problem.measure_boundary + problem.measure_interior)


def delta_bound(epsilon, p, lipschitz_C, measure_interior, measure_boundary, c1, c2) -> float:
    """Loss level below which a well-posed linear problem's error is under ``epsilon``.

    ``delta = eps^p [C (c1^(-1/p) |O|^(1-1/p) + c2^(-1/p) |dO|^(1-1/p))]^(-p)``
    """
    args = dict(
        epsilon=epsilon,
        lipschitz_C=lipschitz_C,
        measure_interior=measure_interior,
        measure_boundary=measure_boundary,
        c1=c1,
        c2=c2,
    )
    for name, val in args.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    e = 1.0 - 1.0 / p
    k = lipschitz_C * (
        c1 ** (-1.0 / p) * measure_interior**e + c2 ** (-1.0 / p) * measure_boundary**e
    )
    return epsilon**p * k ** (-p)


# ---------------------------------------------------------------------------
# model problems


def _check_pi_multiple(name: str, w: float) -> None:
    k = w / math.pi
    if not (w > 0 and abs(k - round(k)) < 1e-9 and round(k) >= 1):
        raise ValueError(f"{name}={w!r} must be a positive multiple of pi")


def _dirichlet(d: int, data: PointFunction) -> tuple[tuple[OperatorTerm, ...], PointFunction]:
    return (OperatorTerm(constant(1.0), MultiIndex.identity(d)),), data


def _laplacian_terms(d: int) -> tuple[OperatorTerm, ...]:
    return tuple(OperatorTerm(constant(1.0), MultiIndex.partial(d, i, i)) for i in range(d))


def laplace_eigen(d: int = 2, frequencies=(math.pi,)) -> LinearPDEProblem:
    """Laplace's equation with solution ``exp(-w1 x1) prod_i sin(w_i x_i)``.

    ``frequencies`` are ``w_2..w_d`` and ``w1 = sqrt(sum w_i^2)``.
    """
    freqs = tuple(float(w) for w in frequencies)
    if d < 2:
        raise ValueError("laplace_eigen needs d >= 2")
    if len(freqs) != d - 1:
        raise ValueError(f"expected {d - 1} frequencies for d={d}, got {len(freqs)}")
    for i, w in enumerate(freqs):
        _check_pi_multiple(f"omega_{i + 2}", w)
    w = np.array((math.sqrt(sum(f * f for f in freqs)),) + freqs)

    def solution(X):
        X = np.atleast_2d(X)
        n = len(X)
        E = np.exp(-w[0] * X[:, 0])
        S = np.sin(w[1:] * X[:, 1:])
        Cs = np.cos(w[1:] * X[:, 1:])
        # factor per axis, its first and second derivative
        f = np.column_stack([E, S])
        df = np.column_stack([-w[0] * E, w[1:] * Cs])
        d2f = np.column_stack([w[0] ** 2 * E, -(w[1:] ** 2) * S])
        value = np.prod(f, axis=1)
        first = np.empty((n, d))
        second = np.empty((n, d, d))
        for i in range(d):
            others = np.prod(np.delete(f, i, axis=1), axis=1)
            first[:, i] = df[:, i] * others
            second[:, i, i] = d2f[:, i] * others
            for j in range(i + 1, d):
                rest = np.prod(np.delete(f, [i, j], axis=1), axis=1)
                second[:, i, j] = second[:, j, i] = df[:, i] * df[:, j] * rest
        return Jet(value, first, second)

    def data(X):
        return solution(X).value

    def bounds(p: float = 2.0) -> MagnitudeBounds:
        if p != 2:
            raise NotImplementedError("closed-form bounds only for p=2")
        w1 = float(w[0])
        half = 0.5 ** (d - 1)
        return MagnitudeBounds(
            4.0 * w1**4 * (1.0 - math.exp(-2.0 * w1)) / (2.0 * w1) * half,
            (1.0 + math.exp(-2.0 * w1)) * half,
            p,
        )

    bterms, g = _dirichlet(d, data)
    return LinearPDEProblem(
        dim=d,
        interior_terms=_laplacian_terms(d),
        source=zero_function,
        boundary_terms=bterms,
        boundary_data=g,
        analytic_solution=solution,
        name="laplace_eigen",
        params={"frequencies": freqs, "omega_1": float(w[0])},
        closed_form_bounds=bounds,
    )


def poisson_eigen(omega: float = math.pi) -> LinearPDEProblem:
    """Poisson's equation on the unit square with solution ``cos(w x) sin(w y)``."""
    _check_pi_multiple("omega", omega)
    w = float(omega)

    def solution(X):
        X = np.atleast_2d(X)
        cx, sx = np.cos(w * X[:, 0]), np.sin(w * X[:, 0])
        cy, sy = np.cos(w * X[:, 1]), np.sin(w * X[:, 1])
        u = cx * sy
        first = np.column_stack([-w * sx * sy, w * cx * cy])
        second = np.empty((len(X), 2, 2))
        second[:, 0, 0] = second[:, 1, 1] = -(w**2) * u
        second[:, 0, 1] = second[:, 1, 0] = -(w**2) * sx * cy
        return Jet(u, first, second)

    def source(X):
        X = np.atleast_2d(X)
        return -2.0 * w**2 * np.cos(w * X[:, 0]) * np.sin(w * X[:, 1])

    def bounds(p: float = 2.0) -> MagnitudeBounds:
        if p != 2:
            raise NotImplementedError("closed-form bounds only for p=2")
        return MagnitudeBounds(w**4, 1.0, p)

    bterms, g = _dirichlet(2, lambda X: solution(X).value)
    return LinearPDEProblem(
        dim=2,
        interior_terms=_laplacian_terms(2),
        source=source,
        boundary_terms=bterms,
        boundary_data=g,
        analytic_solution=solution,
        name="poisson_eigen",
        params={"omega": w},
        closed_form_bounds=bounds,
    )


PEAK_SHARPNESS = 1000.0


def poisson_peak() -> LinearPDEProblem:
    """Poisson's equation whose solution has a sharp Gaussian peak at the centre.

    ``u = sin(pi x) + exp(-1000 ((x - 1/2)^2 + (y - 1/2)^2)) - 1/2``.
    """
    k = PEAK_SHARPNESS

    def solution(X):
        X = np.atleast_2d(X)
        dx, dy = X[:, 0] - 0.5, X[:, 1] - 0.5
        g = np.exp(-k * (dx * dx + dy * dy))
        s, c = np.sin(math.pi * X[:, 0]), np.cos(math.pi * X[:, 0])
        u = s + g - 0.5
        first = np.column_stack([math.pi * c - 2 * k * dx * g, -2 * k * dy * g])
        second = np.empty((len(X), 2, 2))
        second[:, 0, 0] = -(math.pi**2) * s + (4 * k * k * dx * dx - 2 * k) * g
        second[:, 1, 1] = (4 * k * k * dy * dy - 2 * k) * g
        second[:, 0, 1] = second[:, 1, 0] = 4 * k * k * dx * dy * g
        return Jet(u, first, second)

    def source(X):
        X = np.atleast_2d(X)
        dx, dy = X[:, 0] - 0.5, X[:, 1] - 0.5
        r2 = dx * dx + dy * dy
        return -(math.pi**2) * np.sin(math.pi * X[:, 0]) + (4 * k * k * r2 - 4 * k) * np.exp(-k * r2)

    bterms, g = _dirichlet(2, lambda X: solution(X).value)
    return LinearPDEProblem(
        dim=2,
        interior_terms=_laplacian_terms(2),
        source=source,
        boundary_terms=bterms,
        boundary_data=g,
        analytic_solution=solution,
        name="poisson_peak",
        params={},
    )


def convection_diffusion(v: float = 1.0, alpha: float = 0.1, fixed_offset: bool = False):
    """1D ``v u' + alpha u'' = 0`` on ``[0, 1]`` with ``u(0) = 1/2``, ``u(1) = -1/2``.

    The exact solution is ``A + B exp(-v x / alpha)`` with
    ``B = 1 / (1 - exp(-v / alpha))`` and ``A = 1/2 - B``. With
    ``fixed_offset`` the reference solution uses ``A = -1/2`` instead, which
    misses ``u(0) = 1/2`` by about ``exp(-v / alpha)``.
    """
    if not alpha > 0:
        raise ValueError(f"diffusivity alpha must be positive, got {alpha}")
    if not (np.isfinite(v) and v != 0):
        raise ValueError(f"velocity v must be finite and non-zero, got {v}")
    v, alpha = float(v), float(alpha)
    rate = v / alpha
    B = 1.0 / -math.expm1(-rate)
    A = -0.5 if fixed_offset else 0.5 - B

    def solution(X):
        X = np.atleast_2d(X)
        E = B * np.exp(-rate * X[:, 0])
        return Jet(A + E, (-rate * E)[:, None], (rate * rate * E)[:, None, None])

    def data(X):
        X = np.atleast_2d(X)
        return np.where(X[:, 0] < 0.5, 0.5, -0.5)

    def bounds(p: float = 2.0) -> MagnitudeBounds:
        if p != 2:
            raise NotImplementedError("closed-form bounds only for p=2")
        # |v u'| = |alpha u''| = v^2/alpha B e^{-rate x}
        m_i = 4.0 * (v * rate) ** 2 * B * B * (-math.expm1(-2.0 * abs(rate))) / (2.0 * abs(rate))
        m_b = 2.0 * 0.25 if not fixed_offset else (A + B) ** 2 + (A + B * math.exp(-rate)) ** 2
        return MagnitudeBounds(m_i, m_b, p)

    bterms, g = _dirichlet(1, data)
    return LinearPDEProblem(
        dim=1,
        interior_terms=(
            OperatorTerm(constant(v), MultiIndex((1,))),
            OperatorTerm(constant(alpha), MultiIndex((2,))),
        ),
        source=zero_function,
        boundary_terms=bterms,
        boundary_data=g,
        analytic_solution=solution,
        name="convection_diffusion",
        params={"v": v, "alpha": alpha, "fixed_offset": fixed_offset},
        closed_form_bounds=bounds,
    )


FACTORIES = {
    "laplace_eigen": laplace_eigen,
    "poisson_eigen": poisson_eigen,
    "poisson_peak": poisson_peak,
    "convection_diffusion": convection_diffusion,
}

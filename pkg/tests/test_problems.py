import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wpinn.net import Jet
from wpinn.problems import (
    DegenerateProblemError,
    LinearPDEProblem,
    MagnitudeBounds,
    MissingDerivativeError,
    MultiIndex,
    OperatorTerm,
    boundary_residual,
    constant,
    convection_diffusion,
    delta_bound,
    estimate_magnitude_bounds,
    interior_residual,
    lambda_original,
    laplace_eigen,
    magnitude_integrand_boundary,
    magnitude_integrand_interior,
    optimal_lambda,
    poisson_eigen,
    poisson_peak,
    zero_function,
)
from wpinn.sampling import sample_boundary, sample_interior

PI = math.pi


def zero_jet(n, d):
    return Jet(np.zeros(n), np.zeros((n, d)), np.zeros((n, d, d)))


def all_problems():
    return [
        laplace_eigen(2, (PI,)),
        laplace_eigen(2, (4 * PI,)),
        laplace_eigen(3, (4 * PI, PI)),
        laplace_eigen(6, (4 * PI, PI, PI, PI, PI)),
        poisson_eigen(PI),
        poisson_eigen(6 * PI),
        poisson_peak(),
        convection_diffusion(1.0, 0.1),
        convection_diffusion(1.0, 1e-4),
    ]


@pytest.mark.parametrize("problem", all_problems(), ids=lambda p: f"{p.name}{p.params}")
def test_exact_solutions_have_zero_residuals(problem):
    rng = np.random.default_rng(0)
    X = sample_interior(problem.dim, 1000, rng)
    assert np.max(np.abs(interior_residual(problem, problem.analytic_solution(X), X))) <= 1e-9
    if problem.dim == 1:
        Xb = np.array([[0.0], [1.0]])
    else:
        Xb = sample_boundary(problem.dim, 1000, rng)
    assert np.max(np.abs(boundary_residual(problem, problem.analytic_solution(Xb), Xb))) <= 1e-9


def sym_jet(expr, symbols):
    first = [sp.diff(expr, s) for s in symbols]
    second = [[sp.diff(expr, a, b) for b in symbols] for a in symbols]
    f = sp.lambdify(symbols, [expr, first, second], "math")

    def jet(X):
        vals = [f(*x) for x in np.atleast_2d(X)]
        return Jet(
            np.array([v[0] for v in vals], dtype=float),
            np.array([v[1] for v in vals], dtype=float),
            np.array([v[2] for v in vals], dtype=float),
        )

    return jet


def test_analytic_jets_match_symbolic_derivatives():
    x, y, z = sp.symbols("x y z")
    w = 4 * sp.pi
    cases = [
        (laplace_eigen(3, (4 * PI, PI)), sp.exp(-sp.sqrt(w**2 + sp.pi**2) * x) * sp.sin(w * y) * sp.sin(sp.pi * z), (x, y, z)),
        (poisson_eigen(3 * PI), sp.cos(3 * sp.pi * x) * sp.sin(3 * sp.pi * y), (x, y)),
        (
            poisson_peak(),
            sp.sin(sp.pi * x) + sp.exp(-1000 * ((x - sp.Rational(1, 2)) ** 2 + (y - sp.Rational(1, 2)) ** 2)) - sp.Rational(1, 2),
            (x, y),
        ),
    ]
    X = np.random.default_rng(1).uniform(size=(20, 3))
    for problem, expr, syms in cases:
        ref = sym_jet(expr, syms)(X[:, : len(syms)])
        got = problem.analytic_solution(X[:, : len(syms)])
        np.testing.assert_allclose(got.value, ref.value, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(got.first, ref.first, rtol=1e-11, atol=1e-9)
        np.testing.assert_allclose(got.second, ref.second, rtol=1e-11, atol=1e-7)


def test_peak_source_is_symbolic_laplacian():
    x, y = sp.symbols("x y")
    u = sp.sin(sp.pi * x) + sp.exp(-1000 * ((x - sp.Rational(1, 2)) ** 2 + (y - sp.Rational(1, 2)) ** 2)) - sp.Rational(1, 2)
    F = sp.lambdify((x, y), sp.diff(u, x, 2) + sp.diff(u, y, 2), "math")
    X = np.random.default_rng(2).uniform(0.4, 0.6, size=(50, 2))
    np.testing.assert_allclose(poisson_peak().source(X), [F(*p) for p in X], rtol=1e-11)


def test_convection_diffusion_boundary_values():
    for alpha in (0.1, 1e-2, 1e-4):
        u = convection_diffusion(1.0, alpha).analytic_solution(np.array([[0.0], [1.0]])).value
        assert abs(u[0] - 0.5) <= 1e-15 and abs(u[1] + 0.5) <= 1e-15
    p = convection_diffusion(1.0, 0.1)
    x = np.array([0.5])
    assert abs(interior_residual(p, p.analytic_solution(x[None]).point(0), x)) <= 1e-9


def test_convection_diffusion_coefficients_solve_linear_system():
    v, alpha = 1.0, 0.1
    # u = A + B exp(-v x / alpha), u(0) = 1/2, u(1) = -1/2
    M = np.array([[1.0, 1.0], [1.0, math.exp(-v / alpha)]])
    A, B = np.linalg.solve(M, [0.5, -0.5])
    X = np.linspace(0, 1, 11)[:, None]
    expected = A + B * np.exp(-v * X[:, 0] / alpha)
    np.testing.assert_allclose(convection_diffusion(v, alpha).analytic_solution(X).value, expected, rtol=1e-14, atol=1e-15)


def test_fixed_offset_variant_misses_left_boundary():
    p = convection_diffusion(1.0, 0.1, fixed_offset=True)
    u0 = p.analytic_solution(np.array([[0.0]])).value[0]
    assert u0 - 0.5 == pytest.approx(math.exp(-10) / (1 - math.exp(-10)), rel=1e-6)


def test_residual_examples():
    lap = laplace_eigen(2, (PI,))
    x = np.array([0.0, 0.5])
    assert abs(boundary_residual(lap, lap.analytic_solution(x[None]).point(0), x)) <= 1e-12
    pois = poisson_eigen(2 * PI)
    X = np.random.default_rng(3).uniform(size=(5, 2))
    np.testing.assert_allclose(interior_residual(pois, zero_jet(5, 2), X), -pois.source(X))
    G = lap.boundary_data(X)
    assert np.all(boundary_residual(lap, Jet(G), X) == 0.0)
    np.testing.assert_allclose(boundary_residual(lap, Jet(G + 1.0), X), 1.0)


def test_missing_derivative_raises():
    lap = laplace_eigen(2, (PI,))
    with pytest.raises(MissingDerivativeError):
        interior_residual(lap, Jet(np.zeros(3)), np.zeros((3, 2)))


def test_magnitude_integrands():
    w = 2 * PI
    lap = laplace_eigen(2, (w,))
    X = np.random.default_rng(4).uniform(size=(20, 2))
    got = magnitude_integrand_interior(lap, lap.analytic_solution(X), X, 2.0)
    np.testing.assert_allclose(got, 4 * w**4 * np.exp(-2 * w * X[:, 0]) * np.sin(w * X[:, 1]) ** 2, rtol=1e-12)
    pois = poisson_eigen(PI)
    assert np.all(magnitude_integrand_interior(pois, zero_jet(20, 2), X, 2.0) == 0.0)
    np.testing.assert_allclose(
        magnitude_integrand_interior(pois, zero_jet(20, 2), X, 2.0, include_source=True), pois.source(X) ** 2
    )
    edge = np.column_stack([X[:, 0], np.zeros(20)])
    assert np.max(magnitude_integrand_boundary(lap, lap.analytic_solution(edge), edge, 2.0)) <= 1e-28
    left = np.array([[0.0, 0.25]])
    val = magnitude_integrand_boundary(lap, lap.analytic_solution(left), left, 2.0)[0]
    assert val == pytest.approx(math.sin(w / 4) ** 2, rel=1e-12)
    assert magnitude_integrand_boundary(lap, Jet(np.array([-3.0])), np.array([[0.0, 0.3]]), 3.0)[0] == pytest.approx(27.0)


def test_bounds_of_constant_dirichlet_data():
    prob = LinearPDEProblem(
        dim=2,
        interior_terms=(OperatorTerm(constant(1.0), MultiIndex.partial(2, 0, 0)),),
        source=zero_function,
        boundary_terms=(OperatorTerm(constant(1.0), MultiIndex.identity(2)),),
        boundary_data=constant(1.0),
    )
    one = lambda X: Jet(np.ones(len(X)), np.zeros((len(X), 2)), np.zeros((len(X), 2, 2)))
    b = estimate_magnitude_bounds(prob, one, np.random.default_rng(5), 100_000, 100_000, stratified=False)
    assert b.m_boundary == pytest.approx(4.0, rel=0.02)
    assert b.m_interior == 0.0


def test_closed_form_bounds_agree_with_quadrature():
    # trapezoid-free oracle: exact integrals by sympy
    x, y = sp.symbols("x y")
    w = 2 * sp.pi
    u = sp.exp(-w * x) * sp.sin(w * y)
    integrand = (sp.Abs(sp.diff(u, x, 2)) + sp.Abs(sp.diff(u, y, 2))) ** 2
    f = sp.lambdify((x, y), integrand, "numpy")
    X = np.random.default_rng(11).uniform(size=(30, 2))
    expected = 4 * float(w) ** 4 * np.exp(-2 * float(w) * X[:, 0]) * np.sin(float(w) * X[:, 1]) ** 2
    np.testing.assert_allclose(f(X[:, 0], X[:, 1]), expected, rtol=1e-12)
    m_i = float(sp.integrate(4 * w**4 * sp.exp(-2 * w * x) * sp.sin(w * y) ** 2, (x, 0, 1), (y, 0, 1)))
    cf = laplace_eigen(2, (2 * PI,)).closed_form_bounds(2.0)
    assert cf.m_interior == pytest.approx(m_i, rel=1e-12)
    assert cf.m_boundary == pytest.approx(0.5 * (1 + math.exp(-4 * PI)), rel=1e-14)


@pytest.mark.parametrize("w", [PI, 2 * PI, 4 * PI, 10 * PI])
def test_monte_carlo_bounds_laplace(w):
    p = laplace_eigen(2, (w,))
    b = estimate_magnitude_bounds(p, p.analytic_solution, np.random.default_rng(6))
    assert b.m_interior == pytest.approx(w**3 * (1 - math.exp(-2 * w)), rel=0.02)
    assert b.m_boundary == pytest.approx(0.5 * (1 + math.exp(-2 * w)), rel=0.02)


def test_higher_dimensional_closed_form_matches_monte_carlo():
    p = laplace_eigen(3, (4 * PI, PI))
    b = estimate_magnitude_bounds(p, p.analytic_solution, np.random.default_rng(7))
    cf = p.closed_form_bounds(2.0)
    assert b.m_interior == pytest.approx(cf.m_interior, rel=0.02)
    assert b.m_boundary == pytest.approx(cf.m_boundary, rel=0.02)


def test_estimate_is_deterministic():
    p = poisson_eigen(PI)
    a = estimate_magnitude_bounds(p, p.analytic_solution, np.random.default_rng(8), 1000, 1000)
    b = estimate_magnitude_bounds(p, p.analytic_solution, np.random.default_rng(8), 1000, 1000)
    assert a == b


def test_optimal_lambda_values():
    assert optimal_lambda(MagnitudeBounds(3.0, 3.0)) == 0.5
    lam = optimal_lambda(laplace_eigen(2, (PI,)).closed_form_bounds(2.0))
    e = math.exp(-2 * PI)
    assert lam == pytest.approx(0.5 * (1 + e) / (PI**3 * (1 - e) + 0.5 * (1 + e)), rel=1e-12)
    assert lam == pytest.approx(1.58e-2, rel=0.02)
    lam10 = optimal_lambda(laplace_eigen(2, (10 * PI,)).closed_form_bounds(2.0))
    assert lam10 == pytest.approx(1.61e-5, rel=0.02)
    assert optimal_lambda(poisson_eigen(PI).closed_form_bounds(2.0)) == pytest.approx(1 / (1 + PI**4))
    assert optimal_lambda(poisson_eigen(PI).closed_form_bounds(2.0)) == pytest.approx(1.02e-2, rel=0.02)
    with pytest.raises(DegenerateProblemError):
        optimal_lambda(MagnitudeBounds(0.0, 0.0))


def test_peak_problem_lambda():
    p = poisson_peak()
    b = estimate_magnitude_bounds(p, p.analytic_solution, np.random.default_rng(9))
    assert optimal_lambda(b) == pytest.approx(4.45e-5, rel=0.10)


def test_lambda_original():
    assert lambda_original(laplace_eigen(2, (PI,))) == pytest.approx(0.8)
    assert lambda_original(laplace_eigen(3, (PI, PI))) == pytest.approx(6 / 7)
    assert lambda_original(convection_diffusion()) == pytest.approx(2 / 3)


def test_delta_bound_examples():
    assert delta_bound(1.0, 2, 1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(0.25)
    eps, C, c1, c2 = 0.3, 2.0, 0.5, 4.0
    assert delta_bound(eps, 1, C, 7.0, 9.0, c1, c2) == pytest.approx(eps / (C * (1 / c1 + 1 / c2)))
    assert delta_bound(2 * eps, 2, C, 1.0, 4.0, c1, c2) == pytest.approx(4 * delta_bound(eps, 2, C, 1.0, 4.0, c1, c2))
    for bad in [dict(epsilon=0), dict(lipschitz_C=-1), dict(c1=0), dict(measure_boundary=0)]:
        kw = dict(epsilon=1, p=2, lipschitz_C=1, measure_interior=1, measure_boundary=1, c1=1, c2=1) | bad
        with pytest.raises(ValueError):
            delta_bound(**kw)
    with pytest.raises(ValueError):
        delta_bound(1, 0.5, 1, 1, 1, 1, 1)


@given(
    eps=st.floats(1e-6, 1e3),
    factor=st.floats(1.01, 10),
    p=st.floats(1, 4),
    C=st.floats(1e-3, 1e3),
)
@settings(max_examples=50, deadline=None)
def test_delta_bound_monotone(eps, factor, p, C):
    args = (1.0, 4.0, 0.7, 1.3)
    assert delta_bound(eps * factor, p, C, *args) > delta_bound(eps, p, C, *args)
    assert delta_bound(eps, p, C * factor, *args) < delta_bound(eps, p, C, *args)


def test_laplace_factory_frequency():
    p = laplace_eigen(3, (4 * PI, PI))
    assert p.params["omega_1"] == pytest.approx(PI * math.sqrt(17))
    assert p.measure_boundary == 6.0 and p.measure_interior == 1.0


@pytest.mark.parametrize(
    "call",
    [
        lambda: laplace_eigen(2, (2.5,)),
        lambda: laplace_eigen(2, (-PI,)),
        lambda: laplace_eigen(3, (PI,)),
        lambda: poisson_eigen(0.0),
        lambda: convection_diffusion(1.0, 0.0),
        lambda: convection_diffusion(1.0, -1.0),
    ],
)
def test_invalid_factory_arguments(call):
    with pytest.raises(ValueError):
        call()


def test_inconsistent_analytic_solution_rejected():
    wrong = lambda X: Jet(np.zeros(len(X)), np.zeros((len(X), 2)), np.ones((len(X), 2, 2)))
    with pytest.raises(ValueError, match="residual"):
        LinearPDEProblem(
            dim=2,
            interior_terms=(OperatorTerm(constant(1.0), MultiIndex.partial(2, 0, 0)),),
            source=zero_function,
            boundary_terms=(OperatorTerm(constant(1.0), MultiIndex.identity(2)),),
            boundary_data=zero_function,
            analytic_solution=wrong,
        )


def test_problem_needs_terms():
    with pytest.raises(ValueError):
        LinearPDEProblem(2, (), zero_function, (OperatorTerm(constant(1.0), MultiIndex.identity(2)),), zero_function)


def scaled(problem, c1, c2):
    return LinearPDEProblem(
        problem.dim,
        tuple(OperatorTerm(lambda X, t=t: c1 * t.coeff(X), t.index) for t in problem.interior_terms),
        lambda X: c1 * problem.source(X),
        tuple(OperatorTerm(lambda X, t=t: c2 * t.coeff(X), t.index) for t in problem.boundary_terms),
        lambda X: c2 * problem.boundary_data(X),
        problem.analytic_solution,
    )


@pytest.mark.parametrize("c1,c2", [(1e-3, 1e3), (1e3, 1.0), (-2.0, 0.5)])
def test_bounds_scale_with_coefficients(c1, c2):
    base = poisson_eigen(2 * PI)
    prob = scaled(base, c1, c2)
    b0 = estimate_magnitude_bounds(base, base.analytic_solution, np.random.default_rng(10), 2000, 2000)
    b1 = estimate_magnitude_bounds(prob, prob.analytic_solution, np.random.default_rng(10), 2000, 2000)
    assert b1.m_interior == pytest.approx(c1**2 * b0.m_interior, rel=1e-12)
    assert b1.m_boundary == pytest.approx(c2**2 * b0.m_boundary, rel=1e-12)


def test_multi_index():
    assert MultiIndex.partial(3, 1, 1).orders == (0, 2, 0)
    assert MultiIndex.partial(3, 2, 0).hessian_pair() == (0, 2)
    assert MultiIndex.identity(2).total == 0
    with pytest.raises(ValueError):
        MultiIndex((-1, 0))

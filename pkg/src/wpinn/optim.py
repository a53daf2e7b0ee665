"""L-BFGS with a strong-Wolfe line search, and Adam.

Objectives map a parameter vector to ``(value, gradient)``. Both optimizers
call ``callback(iteration, x, value, grad)`` after every iteration; the
callback may return ``Action.RESET`` when it has swapped the objective (for
example after new collocation points were drawn) or ``Action.STOP``.
"""

from __future__ import annotations

import enum
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import ZeroLoss
from .net import NonFiniteObjectiveError, objective_gradient


ROUNDING_LEVEL = 1e-12


class Action(enum.Enum):
    CONTINUE = "continue"
    RESET = "reset"
    STOP = "stop"


class Status(str, enum.Enum):
    MAX_ITERATIONS = "max_iterations"
    GRADIENT_TOLERANCE = "gradient_tolerance"
    LINE_SEARCH_FAILED = "line_search_failed"
    ZERO_LOSS = "zero_loss"
    STOPPED = "stopped"


class OptimizationError(RuntimeError):
    """Carries the trace recorded before the failure."""

    def __init__(self, message: str, trace: "OptimizerTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LBFGSConfig:
    history: int = 10
    max_iterations: int = 1000
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    grad_tolerance: float = 1e-12
    max_line_search_steps: int = 25
    curvature_skip: float = 1e-10

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.wolfe_c1}, c2={self.wolfe_c2}")
        if self.history < 1:
            raise ValueError("history must hold at least one pair")
        if self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise ValueError("iteration limits must be non-negative")


@dataclass(frozen=True)
class StepRecord:
    """One accepted iteration. ``slope0``/``slope`` are the directional
    derivatives at the start and end of the step (L-BFGS only)."""

    iteration: int
    value: float
    grad_norm: float
    step: float
    previous_value: float
    slope0: float
    slope: float
    evaluations: int
    seconds: float


@dataclass
class OptimizerTrace:
    records: list[StepRecord] = field(default_factory=list)
    status: Status | None = None
    evaluations: int = 0
    resets: int = 0

    @property
    def iterations(self) -> int:
        return len(self.records)


@dataclass
class LBFGSState:
    """Curvature pairs ``(s, y, 1 / y's)``, newest last."""

    history: int
    pairs: deque = field(default_factory=deque)

    def push(self, s, y, rho):
        self.pairs.append((s, y, rho))
        while len(self.pairs) > self.history:
            self.pairs.popleft()


def history_reset(state: LBFGSState) -> LBFGSState:
    """Drop all curvature pairs; the next direction is steepest descent."""
    state.pairs.clear()
    return state


def two_loop_direction(state: LBFGSState, g: np.ndarray) -> np.ndarray:
    """``-H g`` for the L-BFGS inverse Hessian built from the stored pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(state.pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if state.pairs:
        s, y, _ = state.pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(state.pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic matching values and slopes at ``a`` and ``b``."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if not disc >= 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if np.isfinite(t) else None


class _LineFunction:
    """The objective restricted to ``x + alpha p``."""

    def __init__(self, fun, x, p, trace):
        self.fun, self.x, self.p, self.trace = fun, x, p, trace
        self.zero_at = None

    def __call__(self, alpha):
        xa = self.x + alpha * self.p
        self.trace.evaluations += 1
        try:
            f, g = objective_gradient(self.fun, xa)
        except ZeroLoss:
            self.zero_at = xa
            raise
        except NonFiniteObjectiveError:
            return xa, math.inf, None, math.nan
        return xa, f, g, float(g @ self.p)


def strong_wolfe_search(phi: _LineFunction, f0, d0, alpha0, c1, c2, max_steps):
    """Bracketing and zoom with cubic interpolation.

    Returns ``(alpha, x, f, g, slope)`` of a point satisfying both strong
    Wolfe conditions, or ``None``. ``ZeroLoss`` propagates unchanged.

    Once the decrease is below the rounding level of ``f0`` the sufficient
    decrease test is meaningless; a point whose value agrees with ``f0`` to
    ``ROUNDING_LEVEL`` is then accepted on its slopes alone (the approximate
    Wolfe conditions of Hager and Zhang).
    """
    f_tol = ROUNDING_LEVEL * abs(f0)

    def ok_armijo(a, f):
        return f <= f0 + c1 * a * d0

    def ok_rounding(f, d):
        return f <= f0 + f_tol and d <= (1 - 2 * c1) * -d0 and abs(d) <= -c2 * d0

    def zoom(lo, hi, steps):
        a_lo, f_lo, d_lo = lo
        a_hi, f_hi, d_hi = hi
        while steps < max_steps:
            steps += 1
            width = abs(a_hi - a_lo)
            a = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo_b, hi_b = sorted((a_lo, a_hi))
            if a is None or not (lo_b + 0.1 * width <= a <= hi_b - 0.1 * width):
                a = 0.5 * (a_lo + a_hi)
            xa, f, g, d = phi(a)
            if not ok_armijo(a, f) and ok_rounding(f, d):
                return a, xa, f, g, d
            if not ok_armijo(a, f) or f >= f_lo:
                a_hi, f_hi, d_hi = a, f, d
            else:
                if abs(d) <= -c2 * d0:
                    return a, xa, f, g, d
                if d * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, d
        return None

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha0
    for i in range(max_steps):
        xa, f, g, d = phi(a)
        if not ok_armijo(a, f) and ok_rounding(f, d):
            return a, xa, f, g, d
        if not ok_armijo(a, f) or (i > 0 and f >= f_prev):
            return zoom((a_prev, f_prev, d_prev), (a, f, d), i + 1)
        if abs(d) <= -c2 * d0:
            return a, xa, f, g, d
        if d >= 0:
            return zoom((a, f, d), (a_prev, f_prev, d_prev), i + 1)
        a_prev, f_prev, d_prev = a, f, d
        a = 2.0 * a
    return None


def _quadratic_refinement(phi, f0, d0, found, c1, c2):
    """Jump to the exact line minimum when the restriction is a quadratic.

    On a quadratic, ``f(a) - f(0) = a (d0 + d_a) / 2`` holds exactly; when it
    holds to rounding the secant root of the slope is the exact minimizer.
    L-BFGS with exact steps terminates finitely on quadratics.
    """
    a, xa, f, g, d = found
    scale = abs(f0) + abs(f) + a * (abs(d0) + abs(d))
    if not abs(f - f0 - 0.5 * a * (d0 + d)) <= 1e-12 * scale or d == 0 or d0 == d:
        return found
    a_star = a * d0 / (d0 - d)
    if not (a_star > 0 and np.isfinite(a_star)) or abs(a_star - a) <= 1e-14 * a:
        return found
    xs, fs, gs, ds = phi(a_star)
    if fs <= f and fs <= f0 + c1 * a_star * d0 and abs(ds) <= -c2 * d0:
        return a_star, xs, fs, gs, ds
    return found


def lbfgs_minimize(
    fun: Callable,
    x0: np.ndarray,
    config: LBFGSConfig = LBFGSConfig(),
    callback: Callable | None = None,
    state: LBFGSState | None = None,
) -> tuple[np.ndarray, OptimizerTrace]:
    """Minimize ``fun`` from ``x0``; returns the final point and its trace.

    On a line-search failure the curvature history is dropped and the step
    is retried once along the steepest descent; if that fails too the best
    point so far is returned with status ``LINE_SEARCH_FAILED``.
    """
    trace = OptimizerTrace()
    state = state if state is not None else LBFGSState(config.history)
    x = np.array(x0, dtype=np.float64)
    t_start = time.perf_counter()

    def evaluate(at):
        trace.evaluations += 1
        try:
            return objective_gradient(fun, at)
        except NonFiniteObjectiveError as exc:
            raise OptimizationError(str(exc), trace) from exc

    try:
        f, g = evaluate(x)
    except ZeroLoss:
        trace.status = Status.ZERO_LOSS
        return x, trace

    it = 0
    while True:
        if it >= config.max_iterations:
            trace.status = Status.MAX_ITERATIONS
            break
        if not np.linalg.norm(g) >= config.grad_tolerance:
            trace.status = Status.GRADIENT_TOLERANCE
            break
        found = None
        for attempt in range(2):
            p = two_loop_direction(state, g)
            d0 = float(g @ p)
            if not d0 < 0:
                history_reset(state)
                p = -g
                d0 = float(g @ p)
            # unit step for quasi-Newton directions, a scaled first step otherwise
            alpha0 = 1.0 if state.pairs else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
            phi = _LineFunction(fun, x, p, trace)
            try:
                found = strong_wolfe_search(
                    phi, f, d0, alpha0, config.wolfe_c1, config.wolfe_c2,
                    config.max_line_search_steps,
                )
                if found is not None:
                    found = _quadratic_refinement(
                        phi, f, d0, found, config.wolfe_c1, config.wolfe_c2
                    )
            except ZeroLoss:
                found = "zero"
            if found is not None or not state.pairs:
                break
            history_reset(state)
            trace.resets += 1
        if found is None:
            trace.status = Status.LINE_SEARCH_FAILED
            break
        it += 1
        if found == "zero":
            x = phi.zero_at
            trace.status = Status.ZERO_LOSS
            break
        a, x_new, f_new, g_new, d_new = found
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > config.curvature_skip * np.linalg.norm(s) * np.linalg.norm(y):
            state.push(s, y, 1.0 / sy)
        trace.records.append(
            StepRecord(
                it, f_new, float(np.linalg.norm(g_new)), a, f, d0, d_new,
                trace.evaluations, time.perf_counter() - t_start,
            )
        )
        x, f, g = x_new, f_new, g_new
        if callback is not None:
            action = callback(it, x, f, g)
            if action == Action.STOP:
                trace.status = Status.STOPPED
                break
            if action == Action.RESET:
                history_reset(state)
                trace.resets += 1
                try:
                    f, g = evaluate(x)
                except ZeroLoss:
                    trace.status = Status.ZERO_LOSS
                    break
    return x, trace


def adam_minimize(
    fun: Callable,
    x0: np.ndarray,
    step_size: float = 1e-3,
    max_iterations: int = 1000,
    callback: Callable | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, OptimizerTrace]:
    """Adam with bias-corrected moment estimates."""
    trace = OptimizerTrace()
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    t_start = time.perf_counter()
    trace.status = Status.MAX_ITERATIONS
    for it in range(1, max_iterations + 1):
        trace.evaluations += 1
        try:
            f, g = objective_gradient(fun, x)
        except ZeroLoss:
            trace.status = Status.ZERO_LOSS
            break
        except NonFiniteObjectiveError as exc:
            raise OptimizationError(str(exc), trace) from exc
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**it)
        v_hat = v / (1 - beta2**it)
        step = step_size * m_hat / (np.sqrt(v_hat) + eps)
        x = x - step
        trace.records.append(
            StepRecord(
                it, f, float(np.linalg.norm(g)), step_size, f, math.nan, math.nan,
                trace.evaluations, time.perf_counter() - t_start,
            )
        )
        if callback is not None:
            action = callback(it, x, f, g)
            # moment estimates carry over a change of objective
            if action == Action.STOP:
                trace.status = Status.STOPPED
                break
    return x, trace

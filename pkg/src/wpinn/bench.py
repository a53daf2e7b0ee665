"""Experiment driver: train one configuration over seeds and report errors."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import problems as pm
from .losses import (
    MAGNITUDE_NORMALIZATION,
    METHODS,
    OPTIMAL_WEIGHT,
    LossEvaluator,
    LossStrategy,
    boundary_data_magnitude,
)
from .net import DEFAULT_HIDDEN, NetworkArchitecture, forward, glorot_init
from .optim import Action, LBFGSConfig, Status, adam_minimize, lbfgs_minimize
from .sampling import AdaptiveState, adaptive_check, apply_doubling, initial_state

CSV_COLUMNS = (
    "problem",
    "method",
    "seed",
    "omega_or_alpha",
    "dim",
    "rel_l2",
    "rel_linf",
    "n_interior",
    "n_boundary",
    "iterations",
    "wall_seconds",
)
GRID_MAX_DIM = 3
DEFAULT_RESOLUTION = 101
DEFAULT_EVAL_SAMPLES = 100_000
EVAL_SEED = 20240101
LAMBDA_SAMPLES = 100_000
LAMBDA_SEED = 7
EVAL_CHUNK = 65_536
DEFAULT_MAX_POINTS = 65_536


class ConfigError(ValueError):
    pass


class ZeroReferenceError(ValueError):
    """The exact solution vanishes on every evaluation point."""


class ExperimentError(RuntimeError):
    """A run failed; ``trace`` holds what was recorded up to the failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


_PI_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi|π)?\s*$")


def parse_real(text) -> float:
    """A real number, optionally a multiple of pi: ``"2pi"``, ``"4*pi"``, ``"pi"``, ``"0.1"``."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _PI_RE.match(str(text))
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ConfigError(f"cannot parse number {text!r}")
    coef = float(m.group(1)) if m.group(1) is not None else 1.0
    return coef * math.pi if m.group(2) else coef


def _parse_cap(text) -> int | None:
    if text is None or str(text).strip().lower() in ("none", "0", ""):
        return None
    return int(text)


def _parse_list(text, conv):
    if isinstance(text, (list, tuple)):
        return [conv(t) for t in text]
    return [conv(t) for t in str(text).replace(",", " ").split()]


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "laplace_eigen"
    dim: int = 2
    frequencies: tuple[float, ...] = (math.pi,)
    omega: float = math.pi
    v: float = 1.0
    alpha: float = 0.1
    fixed_offset: bool = False
    method: str = OPTIMAL_WEIGHT
    hidden_layers: tuple[int, ...] = DEFAULT_HIDDEN
    iterations: int = 5000
    n_interior: int = 512
    n_boundary: int = 512
    q: float = 5.0
    seeds: tuple[int, ...] = (0, 1, 2)
    check_every: int = 100
    optimizer: str = "lbfgs"
    adam_step: float = 1e-3
    history: int = 10
    lambda_source: str = "auto"
    eval_resolution: int = DEFAULT_RESOLUTION
    eval_samples: int = DEFAULT_EVAL_SAMPLES
    max_points: int | None = DEFAULT_MAX_POINTS
    output_dir: str = "results"
    format: str = "csv"

    def __post_init__(self):
        if self.problem not in pm.FACTORIES:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(pm.FACTORIES)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.optimizer not in ("lbfgs", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lambda_source not in ("auto", "closed_form", "monte_carlo"):
            raise ConfigError(f"unknown lambda_source {self.lambda_source!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.iterations < 0 or self.check_every < 1:
            raise ConfigError("iterations must be >= 0 and check_every >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.eval_resolution < 2 or self.eval_samples < 1:
            raise ConfigError("evaluation needs resolution >= 2 and samples >= 1")
        if self.max_points is not None and self.max_points < max(self.n_interior, self.n_boundary):
            raise ConfigError("max_points must be at least the initial point counts")
        # build once so bad problem parameters fail before any training
        self.build_problem()

    def build_problem(self) -> pm.LinearPDEProblem:
        try:
            if self.problem == "laplace_eigen":
                return pm.laplace_eigen(self.dim, self.frequencies)
            if self.problem == "poisson_eigen":
                return pm.poisson_eigen(self.omega)
            if self.problem == "poisson_peak":
                return pm.poisson_peak()
            return pm.convection_diffusion(self.v, self.alpha, self.fixed_offset)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def input_dim(self) -> int:
        return {"poisson_eigen": 2, "poisson_peak": 2, "convection_diffusion": 1}.get(
            self.problem, self.dim
        )

    @property
    def omega_or_alpha(self) -> float:
        if self.problem == "laplace_eigen":
            return self.frequencies[0]
        if self.problem == "poisson_eigen":
            return self.omega
        if self.problem == "convection_diffusion":
            return self.alpha
        return math.nan

    def architecture(self) -> NetworkArchitecture:
        return NetworkArchitecture(self.input_dim, tuple(self.hidden_layers))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        """Build from string values as found in a config file."""
        conv = {
            "dim": int,
            "omega": parse_real,
            "v": parse_real,
            "alpha": parse_real,
            "iterations": int,
            "n_interior": int,
            "n_boundary": int,
            "q": float,
            "check_every": int,
            "adam_step": float,
            "history": int,
            "eval_resolution": int,
            "eval_samples": int,
            "max_points": _parse_cap,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "frequencies":
                kw[key] = tuple(_parse_list(raw, parse_real))
            elif key == "hidden_layers":
                kw[key] = tuple(_parse_list(raw, int))
            elif key == "seeds":
                kw[key] = tuple(_parse_list(raw, int))
            elif key == "fixed_offset":
                kw[key] = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif key in conv:
                try:
                    kw[key] = conv[key](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
            else:
                kw[key] = str(raw).strip()
        if "frequencies" in kw and "dim" not in kw and kw.get("problem", "laplace_eigen") == "laplace_eigen":
            kw["dim"] = len(kw["frequencies"]) + 1
        return cls(**kw)


def load_config(path) -> ExperimentConfig:
    """Read the ``[experiment]`` section of an INI-style file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    return ExperimentConfig.from_mapping(dict(parser.items("experiment")))


# ---------------------------------------------------------------------------
# evaluation


def build_eval_points(
    d: int, resolution: int = DEFAULT_RESOLUTION, seed: int = EVAL_SEED, samples: int = DEFAULT_EVAL_SAMPLES
) -> np.ndarray:
    """Tensor grid with ``resolution`` points per axis for ``d <= 3``, else
    ``samples`` uniform points from a fixed seed."""
    if d <= GRID_MAX_DIM:
        axis = np.linspace(0.0, 1.0, resolution)
        grids = np.meshgrid(*[axis] * d, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)
    return np.random.default_rng(seed).uniform(size=(samples, d))


def predict(params, arch, X) -> np.ndarray:
    X = np.atleast_2d(X)
    return np.concatenate([forward(params, arch, X[i : i + EVAL_CHUNK]) for i in range(0, len(X), EVAL_CHUNK)])


def error_norms(u_hat, u) -> tuple[float, float]:
    """Relative L2 and max-norm distances of ``u_hat`` from ``u``."""
    u_hat, u = np.asarray(u_hat, dtype=np.float64), np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ValueError("no evaluation points")
    diff = u_hat - u
    norm2, norm_inf = math.sqrt(float(np.sum(u * u))), float(np.max(np.abs(u)))
    if norm2 == 0.0:
        raise ZeroReferenceError("exact solution is zero on all evaluation points")
    return math.sqrt(float(np.sum(diff * diff))) / norm2, float(np.max(np.abs(diff))) / norm_inf


def relative_errors(arch, params, analytic_solution, eval_points) -> tuple[float, float]:
    """Relative L2 and max-norm errors of the network against the exact solution."""
    X = np.atleast_2d(eval_points)
    if X.size == 0:
        raise ValueError("no evaluation points")
    return error_norms(predict(params, arch, X), analytic_solution(X).value)


# ---------------------------------------------------------------------------
# loss weight


def compute_bounds(problem: pm.LinearPDEProblem, source: str = "auto", p: float = 2.0):
    """Magnitude bounds from the closed form when available, else Monte-Carlo."""
    if source in ("auto", "closed_form") and problem.closed_form_bounds is not None:
        return problem.closed_form_bounds(p), "closed_form"
    if source == "closed_form":
        raise ConfigError(f"{problem.name} has no closed-form magnitude bounds")
    rng = np.random.default_rng(LAMBDA_SEED)
    bounds = pm.estimate_magnitude_bounds(
        problem, problem.analytic_solution, rng, LAMBDA_SAMPLES, LAMBDA_SAMPLES, p
    )
    return bounds, "monte_carlo"


def make_strategy(config: ExperimentConfig, problem) -> tuple[LossStrategy, float | None]:
    if config.method == OPTIMAL_WEIGHT:
        bounds, _ = compute_bounds(problem, config.lambda_source)
        lam, complement = pm.optimal_weights(bounds)
        return LossStrategy.optimal_weight(lam, complement=complement), lam
    if config.method == MAGNITUDE_NORMALIZATION:
        rng = np.random.default_rng(LAMBDA_SEED)
        den = boundary_data_magnitude(problem, rng, LAMBDA_SAMPLES)
        return LossStrategy.magnitude_normalized(boundary_denominator=den), None
    return LossStrategy.original(), None


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    train_interior: float
    train_boundary: float
    val_interior: float
    val_boundary: float
    total: float
    n_interior: int
    n_boundary: int
    wall_seconds: float
    decision: str


@dataclass
class TrainingTrace:
    records: list[TraceRecord] = field(default_factory=list)
    status: str = ""
    optimizer_iterations: int = 0
    evaluations: int = 0

    def append(self, rec: TraceRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)


class AdaptiveTrainer:
    """Runs the optimizer and grows the collocation sets on schedule."""

    def __init__(self, evaluator: LossEvaluator, state: AdaptiveState, config: ExperimentConfig):
        self.evaluator = evaluator
        self.state = state
        self.config = config
        self.trace = TrainingTrace()
        self._t0 = time.perf_counter()

    def objective(self, params):
        tr = self.state.train
        return self.evaluator.objective(tr.interior, tr.boundary, log=True)(params)

    def check(self, iteration: int, params) -> bool:
        """Run the adaptive check; True when the point sets were regenerated."""
        st = self.state
        tr = self.evaluator.evaluate(params, st.train.interior, st.train.boundary)
        va = self.evaluator.evaluate(params, st.validation.interior, st.validation.boundary)
        decision = adaptive_check((tr.interior, tr.boundary), (va.interior, va.boundary), st)
        self.trace.append(
            TraceRecord(
                iteration, tr.interior, tr.boundary, va.interior, va.boundary, tr.total,
                st.n_interior, st.n_boundary, time.perf_counter() - self._t0, decision.value,
            )
        )
        self.state = apply_doubling(st, decision)
        return self.state is not st

    def callback(self, iteration, x, value, grad):
        if iteration % self.config.check_every == 0:
            if self.check(iteration, x):
                return Action.RESET
        return Action.CONTINUE

    def run(self, params):
        """Train for the configured budget.

        A stalled optimizer (failed line search or exactly zero loss) triggers
        an immediate adaptive check; training resumes if that grew the point
        sets and ends otherwise.
        """
        cfg = self.config
        done = 0
        status = Status.MAX_ITERATIONS
        while done < cfg.iterations:
            offset = done

            def shifted(iteration, x, value, grad):
                return self.callback(offset + iteration, x, value, grad)

            remaining = cfg.iterations - done
            if cfg.optimizer == "lbfgs":
                lcfg = LBFGSConfig(history=cfg.history, max_iterations=remaining, grad_tolerance=0.0)
                params, otrace = lbfgs_minimize(self.objective, params, lcfg, shifted)
            else:
                params, otrace = adam_minimize(self.objective, params, cfg.adam_step, remaining, shifted)
            done += otrace.iterations
            self.trace.evaluations += otrace.evaluations
            status = Status(otrace.status)
            if status not in (Status.LINE_SEARCH_FAILED, Status.ZERO_LOSS):
                break
            checked = self.trace.records and self.trace.records[-1].iteration == done
            if checked or not self.check(done, params):
                break
        self.trace.status = status.value
        self.trace.optimizer_iterations = done
        return params


@dataclass
class ResultRecord:
    problem: str
    method: str
    seed: int
    omega_or_alpha: float
    dim: int
    rel_l2: float
    rel_linf: float
    n_interior: int
    n_boundary: int
    iterations: int
    wall_seconds: float
    loss_weight: float | None = None
    status: str = ""
    final_loss: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


def train_single(config: ExperimentConfig, seed: int):
    """Train one seed; returns ``(record, params, trace)``."""
    problem = config.build_problem()
    arch = config.architecture()
    strategy, lam = make_strategy(config, problem)
    params = glorot_init(arch, seed)
    state = initial_state(
        problem.dim, config.n_interior, config.n_boundary, seed=seed, q=config.q,
        max_points=config.max_points,
    )
    trainer = AdaptiveTrainer(LossEvaluator(problem, arch, strategy), state, config)
    t0 = time.perf_counter()
    try:
        params = trainer.run(params)
    except Exception as exc:
        raise ExperimentError(f"seed {seed}: {exc}", trainer.trace) from exc
    wall = time.perf_counter() - t0
    st = trainer.state
    final = trainer.evaluator.evaluate(params, st.train.interior, st.train.boundary)
    X = build_eval_points(problem.dim, config.eval_resolution, samples=config.eval_samples)
    l2, linf = relative_errors(arch, params, problem.analytic_solution, X)
    record = ResultRecord(
        problem.name, config.method, seed, config.omega_or_alpha, problem.dim, l2, linf,
        st.n_interior, st.n_boundary, trainer.trace.optimizer_iterations, wall, lam,
        trainer.trace.status or ("max_iterations" if config.iterations == 0 else ""),
        dataclasses.asdict(final), config.to_dict(),
    )
    return record, params, trainer.trace


def run_experiment(config: ExperimentConfig, on_seed=None) -> list[ResultRecord]:
    """One record per seed. ``on_seed(record, params, trace)`` sees each run."""
    records = []
    for seed in config.seeds:
        rec, params, trace = train_single(config, seed)
        if on_seed is not None:
            on_seed(rec, params, trace)
        records.append(rec)
    return records


def best_record(records: list[ResultRecord]) -> ResultRecord:
    return min(records, key=lambda r: r.rel_l2)


# ---------------------------------------------------------------------------
# output


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def emit_results(records, fmt: str, path) -> None:
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in records:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump([dataclasses.asdict(r) for r in records], fh, indent=2, default=_json_default)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_json_records(path) -> list[ResultRecord]:
    with open(path) as fh:
        return [ResultRecord(**r) for r in json.load(fh)]


def dump_field(arch, params, problem, resolution, path) -> None:
    """CSV of ``x1..xd, u_hat, u_exact, abs_error`` on the evaluation points."""
    X = build_eval_points(problem.dim, resolution)
    u_hat = predict(params, arch, X)
    u = problem.analytic_solution(X).value
    cols = [f"x{i + 1}" for i in range(problem.dim)] + ["u_hat", "u_exact", "abs_error"]
    data = np.column_stack([X, u_hat, u, np.abs(u_hat - u)])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def write_trace(trace: TrainingTrace, path) -> None:
    cols = [f.name for f in dataclasses.fields(TraceRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in trace.records:
            w.writerow([getattr(r, c) for c in cols])


def save_params(path, params, arch: NetworkArchitecture, seed: int) -> None:
    header = json.dumps({"input_dim": arch.input_dim, "hidden_layers": list(arch.hidden_layers), "seed": seed})
    np.savetxt(path, np.asarray(params), fmt="%.17g", header=header)


def load_params(path) -> tuple[np.ndarray, NetworkArchitecture, int]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValueError(f"{path}: missing parameter header")
    meta = json.loads(first[1:])
    arch = NetworkArchitecture(int(meta["input_dim"]), tuple(meta["hidden_layers"]))
    params = np.atleast_1d(np.loadtxt(path, dtype=np.float64))
    if params.shape != (arch.n_params,):
        raise ValueError(f"{path}: expected {arch.n_params} values, found {params.size}")
    return params, arch, int(meta["seed"])

"""Bayesian-optimization loops (standard, Monte-Carlo composite, optimistic, linearized composite).

Each loop starts from the same initial samples, then alternates: train
surrogates on all samples, minimize an acquisition (or solve the optimistic
auxiliary problem), query the system once, append.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .acquisition import AcquisitionKind, AcquisitionSpec, make_acquisition
from .composite import CompositeProblem, OpCounter, _predict_batch, clip_to_bounds
from .gp import Dataset, KernelConfig, train_gp
from .optimize import BoxDomain, confidence_box, minimize_box, solve_opbo_auxiliary

logger = logging.getLogger(__name__)

REGRET_FLOOR = -16.0


class Algorithm(str, Enum):
    SBO = "SBO"
    MCBO = "MCBO"
    OPBO = "OPBO"
    BOIS = "BOIS"


@dataclass(frozen=True)
class TrialConfig:
    algorithm: Algorithm
    init_points: np.ndarray
    iterations: int = 10
    kappa: float = 2.0
    mc_samples: int = 100
    af_starts: int = 50
    seed: int = 0
    problem_id: str = ""
    gp_restarts: int = 2
    nu: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        pts = np.atleast_2d(np.asarray(self.init_points, dtype=float))
        if pts.shape[0] < 2:
            raise ValueError("need at least two initial points")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        object.__setattr__(self, "init_points", pts)


@dataclass
class TrialResult:
    config: TrialConfig
    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    F: list = field(default_factory=list)
    best_trace: list = field(default_factory=list)
    regret_trace: list = field(default_factory=list)
    counter_trace: list = field(default_factory=list)
    wall_time_per_iter: list = field(default_factory=list)
    proposals: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def n_init(self) -> int:
        return self.config.init_points.shape[0]

    @property
    def samples(self) -> list:
        return list(zip(self.X, self.Y, self.F))

    @property
    def best_f(self) -> float:
        return self.best_trace[-1] if self.best_trace else float("nan")

    @property
    def best_x(self) -> np.ndarray:
        return np.asarray(self.X[int(np.argmin(self.F))])


def regret(trace, f_star: float) -> np.ndarray:
    """log10 of the relative gap to f_star, floored at -16 where the gap is zero."""
    if f_star == 0:
        raise ValueError("relative regret is undefined for f_star = 0")
    gap = np.abs((np.asarray(trace, dtype=float) - f_star) / f_star)
    with np.errstate(divide="ignore"):
        out = np.log10(gap)
    return np.maximum(out, REGRET_FLOOR)


def iteration_seeds(seed: int, iteration: int):
    """Independent (acquisition, Monte-Carlo, GP-fit) seeds for one BO iteration."""
    a, b, c = np.random.SeedSequence([int(seed), int(iteration)]).generate_state(3)
    return int(a), int(b), int(c)


def train_composite(problem: CompositeProblem, X, Y, seed=0, warm=None, restarts=2, nu=2.5):
    """Train one GP per intermediate; returns (trained problem, kernel configs by node)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    warm = warm or {}
    models, kernels = {}, {}
    for j, node in enumerate(problem.nodes):
        inputs = problem.node_inputs(node, X, Y)
        bounds = problem.node_input_bounds(node)
        model = train_gp(Dataset(inputs, Y[:, j]), bounds=bounds, nu=nu, restarts=restarts,
                         seed=seed + j, warm_start=warm.get(node.name))
        models[node.name] = model
        kernels[node.name] = model.kernel
    return problem.with_models(models), kernels


def _record(result: TrialResult, problem, x, y, f, counter):
    result.X.append(np.asarray(x, dtype=float).copy())
    result.Y.append(None if y is None else np.asarray(y, dtype=float).copy())
    result.F.append(float(f))
    best = min(result.F)
    result.best_trace.append(best)
    if problem.f_star is not None:
        result.regret_trace.append(float(regret([best], problem.f_star)[0]))
    result.counter_trace.append(counter.snapshot())


def _query(problem, x, counter):
    y = problem.sample(x)
    counter.system_samples += 1
    f = float(problem.f(x[None, :], y[None, :])[0])
    counter.whitebox_evals += 1
    return y, f


def run_trial(cfg: TrialConfig, problem: CompositeProblem, acquisition_factory=None) -> TrialResult:
    """Run one seeded trial of ``cfg.algorithm`` on ``problem``.

    ``acquisition_factory(trained_problem, spec, counter)`` may replace the
    composite acquisition surface (used by oracle tests).  A failing system
    query or surrogate fit ends the trial early with ``result.error`` set.
    """
    counter = OpCounter()
    result = TrialResult(cfg)
    if not problem.in_box(cfg.init_points):
        raise ValueError("initial points must lie in the design box")
    domain = BoxDomain(problem.lower, problem.upper)
    try:
        for x in cfg.init_points:
            y, f = _query(problem, x, counter)
            _record(result, problem, x, y, f, counter)
    except Exception as exc:  # the system oracle is user code
        result.error = f"initial sample failed: {exc!r}"
        result.counters = counter.snapshot()
        return result

    warm: dict = {}
    f_kernel: KernelConfig | None = None
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        af_seed, mc_seed, gp_seed = iteration_seeds(cfg.seed, it)
        X = np.array(result.X)
        try:
            if cfg.algorithm is Algorithm.SBO:
                model = train_gp(Dataset(X, np.array(result.F)), bounds=(problem.lower, problem.upper),
                                 nu=cfg.nu, restarts=cfg.gp_restarts, seed=gp_seed, warm_start=f_kernel)
                f_kernel = model.kernel
                spec = AcquisitionSpec(AcquisitionKind.LCB, cfg.kappa)
                af = make_acquisition(spec, model, counter)
                x_new = minimize_box(af, domain, cfg.af_starts, af_seed, batch=True).argmin
            else:
                trained, warm = train_composite(problem, X, np.array(result.Y), gp_seed, warm,
                                                cfg.gp_restarts, cfg.nu)
                if cfg.algorithm is Algorithm.OPBO:
                    x_new, y_opt, val = solve_opbo_auxiliary(trained, cfg.kappa, cfg.af_starts, af_seed, counter)
                    lo, hi = confidence_box(trained, x_new[None, :], cfg.kappa)
                    result.proposals.append({"x": x_new, "y": y_opt, "lower": lo[0], "upper": hi[0], "value": val})
                else:
                    kind = AcquisitionKind.LCB_CF if cfg.algorithm is Algorithm.MCBO else AcquisitionKind.LCB_BOIS
                    spec = AcquisitionSpec(kind, cfg.kappa, cfg.mc_samples, mc_seed)
                    if acquisition_factory is None:
                        af = make_acquisition(spec, trained, counter)
                    else:
                        af = acquisition_factory(trained, spec, counter)
                    x_new = minimize_box(af, domain, cfg.af_starts, af_seed, batch=True).argmin
        except Exception as exc:
            result.error = f"iteration {it}: proposal failed: {exc!r}"
            logger.warning(result.error)
            break
        try:
            y, f = _query(problem, x_new, counter)
        except Exception as exc:
            result.error = f"iteration {it}: system query failed: {exc!r}"
            logger.warning(result.error)
            break
        _record(result, problem, x_new, y, f, counter)
        result.wall_time_per_iter.append(time.perf_counter() - t0)
    result.counters = counter.snapshot()
    return result


def _check(cfg, algo):
    if Algorithm(cfg.algorithm) is not algo:
        raise ValueError(f"config is for {cfg.algorithm}, not {algo.value}")


def run_sbo(cfg: TrialConfig, problem: CompositeProblem) -> TrialResult:
    _check(cfg, Algorithm.SBO)
    return run_trial(cfg, problem)


def run_mcbo(cfg: TrialConfig, problem: CompositeProblem) -> TrialResult:
    _check(cfg, Algorithm.MCBO)
    return run_trial(cfg, problem)


def run_opbo(cfg: TrialConfig, problem: CompositeProblem) -> TrialResult:
    _check(cfg, Algorithm.OPBO)
    return run_trial(cfg, problem)


def run_bois(cfg: TrialConfig, problem: CompositeProblem, acquisition_factory=None) -> TrialResult:
    _check(cfg, Algorithm.BOIS)
    return run_trial(cfg, problem, acquisition_factory)


def clipped_mean_objective(problem: CompositeProblem):
    """Deterministic surrogate f(x, clip(m_y(x))) as a batch callable."""
    def fun(X):
        X = np.atleast_2d(X)
        pred = _predict_batch(problem, X)
        return problem.f(X, clip_to_bounds(pred.raw_mean, problem.y_lower, problem.y_upper))
    return fun

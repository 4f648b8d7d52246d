"""Problem registry: id -> problem factory, reference optimum and init-point rule."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable

import numpy as np

from .composite import CompositeProblem
from .sims import chemproc, pbr, toys

GRID_LEVELS = 5


def reference_optima() -> dict:
    """Committed brute-force optima of the shipped simulators."""
    text = resources.files("greybox_bo").joinpath("data/reference_optima.json").read_text()
    return json.loads(text)


def uniform_init(problem: CompositeProblem, n_points: int, trial_index: int, seed: int) -> np.ndarray:
    """``n_points`` uniform draws in the design box from ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
    u = rng.uniform(size=(n_points, problem.dx))
    return problem.lower + u * (problem.upper - problem.lower)


def grid_init(problem: CompositeProblem, n_points: int, trial_index: int, seed: int) -> np.ndarray:
    """Trial k starts at point k of a ``GRID_LEVELS``-per-axis grid plus seeded uniform partners.

    Indices beyond the grid size wrap around.
    """
    levels = np.linspace(0.0, 1.0, GRID_LEVELS)
    idx = np.unravel_index(trial_index % GRID_LEVELS ** problem.dx, (GRID_LEVELS,) * problem.dx)
    anchor = problem.lower + levels[list(idx)] * (problem.upper - problem.lower)
    if n_points == 1:
        return anchor[None, :]
    partners = uniform_init(problem, n_points - 1, trial_index, seed)
    return np.vstack([anchor, partners])


INIT_RULES: dict[str, Callable] = {"uniform": uniform_init, "grid": grid_init}


@dataclass(frozen=True)
class ProblemEntry:
    problem_id: str
    factory: Callable[..., CompositeProblem]
    description: str
    init_rule: str = "uniform"
    dump: Callable[[np.ndarray], dict] | None = None
    dump_flag: str | None = None

    def f_star(self):
        entry = reference_optima().get(self.problem_id)
        return None if entry is None else float(entry["f_star"])

    def build(self, f_star=None) -> CompositeProblem:
        """Problem instance with ``f_star`` (default: the committed reference optimum)."""
        return self.factory(f_star=self.f_star() if f_star is None else f_star)

    def metadata(self) -> dict:
        p = self.build()
        return {
            "problem_id": self.problem_id,
            "d_x": p.dx,
            "d_y": p.dy,
            "lower": [float(v) for v in p.lower],
            "upper": [float(v) for v in p.upper],
            "x_names": list(p.x_names),
            "y_names": list(p.node_names),
            "f_star": p.f_star,
            "description": self.description,
        }


def _with_f_star(factory):
    def build(f_star=None):
        p = factory()
        if f_star is None:
            return p
        return replace(p, f_star=f_star)
    return build


def _chemproc_state(x) -> dict:
    _, f, state = chemproc.simulate(x)
    out = state.to_dict()
    out["f"] = f
    return out


REGISTRY: dict[str, ProblemEntry] = {
    e.problem_id: e
    for e in (
        ProblemEntry("chemproc", chemproc.make_problem,
                     "equilibrium reactor, flash and recycle; operating cost in USD/hr",
                     "uniform", _chemproc_state, "dump_state"),
        ProblemEntry("pbr", pbr.make_problem,
                     "photobioreactor techno-economics; minimum selling price in USD/kg",
                     "grid", pbr.ledger_json, "dump_ledger"),
        ProblemEntry("toy_affine", _with_f_star(toys.affine_problem), "affine h in two intermediates"),
        ProblemEntry("toy_quadratic", _with_f_star(toys.quadratic_problem), "quadratic h in two intermediates"),
        ProblemEntry("toy_nested", _with_f_star(toys.nested_problem), "two chained intermediates, one bounded"),
        ProblemEntry("toy_line", _with_f_star(toys.line_problem), "one design variable, one intermediate"),
        ProblemEntry("toy_plane", _with_f_star(toys.plane_problem), "two design variables, one bounded intermediate"),
    )
}


def get(problem_id: str) -> ProblemEntry:
    try:
        return REGISTRY[problem_id]
    except KeyError:
        raise KeyError(f"unknown problem {problem_id!r}; registered: {', '.join(sorted(REGISTRY))}") from None

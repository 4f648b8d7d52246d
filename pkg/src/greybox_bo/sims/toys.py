"""Small synthetic composite problems with closed-form intermediates.

Used by the test-suite oracles and as cheap registry entries.
"""

from __future__ import annotations

import numpy as np

from ..composite import CompositeProblem, IntermediateNode

AFFINE_COEFFS = np.array([2.0, -1.5])
AFFINE_OFFSET = 0.3


def _affine_y(x):
    x = np.asarray(x, dtype=float)
    return np.array([np.sin(3.0 * x[0]) + x[1], x[0] * np.cos(2.0 * x[1])])


def affine_problem() -> CompositeProblem:
    """h is affine in y with constant coefficients; no feasibility bounds."""
    nodes = (
        IntermediateNode("y1", x_inputs=(0, 1)),
        IntermediateNode("y2", x_inputs=(0, 1)),
    )
    return CompositeProblem(
        name="toy_affine",
        lower=np.zeros(2),
        upper=np.ones(2),
        nodes=nodes,
        g=lambda X: (np.atleast_2d(X)[:, 0] - 0.5) ** 2,
        h=lambda X, Y: np.atleast_2d(Y) @ AFFINE_COEFFS + AFFINE_OFFSET,
        sampler=_affine_y,
        x_names=("x1", "x2"),
    )


def _quad_y(x):
    x = np.asarray(x, dtype=float)
    return np.array([np.sin(2.0 * x[0]) + 0.5 * x[1], np.exp(-x[0]) * (1.0 + x[1] ** 2)])


def _quad_h(X, Y):
    Y = np.atleast_2d(Y)
    return (Y[:, 0] - 1.0) ** 2 + 0.5 * Y[:, 0] * Y[:, 1] + Y[:, 1] ** 2


def quadratic_problem() -> CompositeProblem:
    """Smooth quadratic h of two independent intermediates."""
    nodes = (
        IntermediateNode("y1", x_inputs=(0, 1)),
        IntermediateNode("y2", x_inputs=(0, 1)),
    )
    return CompositeProblem(
        name="toy_quadratic",
        lower=np.zeros(2),
        upper=np.ones(2),
        nodes=nodes,
        g=lambda X: 0.1 * np.atleast_2d(X).sum(axis=1),
        h=_quad_h,
        sampler=_quad_y,
        x_names=("x1", "x2"),
    )


def _nested_y(x):
    x = np.asarray(x, dtype=float)
    a = 0.5 + 0.45 * np.sin(4.0 * x[0])
    b = a * a + x[1]
    return np.array([a, b])


def nested_problem() -> CompositeProblem:
    """Chain a -> b with a bounded to [1e-6, 1]."""
    nodes = (
        IntermediateNode("a", x_inputs=(0,), lower_bound=1e-6, upper_bound=1.0),
        IntermediateNode("b", x_inputs=(1,), y_inputs=("a",)),
    )
    return CompositeProblem(
        name="toy_nested",
        lower=np.zeros(2),
        upper=np.ones(2),
        nodes=nodes,
        g=lambda X: 0.2 * (np.atleast_2d(X)[:, 1] - 0.4) ** 2,
        h=lambda X, Y: (np.atleast_2d(Y)[:, 1] - 0.8) ** 2 + np.atleast_2d(Y)[:, 0],
        sampler=_nested_y,
        x_names=("x1", "x2"),
    )


def _line_y(x):
    x = np.asarray(x, dtype=float)
    return np.array([np.sin(6.0 * x[0]) + x[0]])


def line_problem() -> CompositeProblem:
    """1-d design, one intermediate, h = 2 y (affine)."""
    nodes = (IntermediateNode("y", x_inputs=(0,)),)
    return CompositeProblem(
        name="toy_line",
        lower=np.zeros(1),
        upper=np.ones(1),
        nodes=nodes,
        g=lambda X: 0.5 * np.atleast_2d(X)[:, 0],
        h=lambda X, Y: 2.0 * np.atleast_2d(Y)[:, 0],
        sampler=_line_y,
        f_star=None,
        x_names=("x",),
    )


def _plane_y(x):
    x = np.asarray(x, dtype=float)
    return np.array([np.cos(3.0 * x[0]) * x[1] + 0.5 * x[0]])


def plane_problem() -> CompositeProblem:
    """2-d design, one positive-coefficient affine intermediate; for the optimistic-solver oracle."""
    nodes = (IntermediateNode("y", x_inputs=(0, 1), lower_bound=-0.5, upper_bound=2.0),)
    return CompositeProblem(
        name="toy_plane",
        lower=np.zeros(2),
        upper=np.ones(2),
        nodes=nodes,
        g=lambda X: (np.atleast_2d(X)[:, 0] - 0.3) ** 2 + (np.atleast_2d(X)[:, 1] - 0.7) ** 2,
        h=lambda X, Y: 1.5 * np.atleast_2d(Y)[:, 0],
        sampler=_plane_y,
        x_names=("x1", "x2"),
    )

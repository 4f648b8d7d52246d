"""Lower-confidence-bound acquisition functions (minimization convention).

Every AF is available as a scalar evaluator and, through
:func:`make_acquisition`, as a batch callable ``X -> values`` suitable for
:func:`greybox_bo.optimize.minimize_box` with ``batch=True``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .composite import CompositeProblem, _as_batch, _bois_batch, _mc_batch, bois_moments, mc_moments
from .gp import GpModel, posterior


class AcquisitionKind(str, Enum):
    LCB = "LCB"
    LCB_CF = "LCB_CF"
    LCB_BOIS = "LCB_BOIS"


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: AcquisitionKind
    kappa: float = 2.0
    mc_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AcquisitionKind(self.kind))
        if not self.kappa >= 0:
            raise ValueError("kappa must be nonnegative")
        if self.kind is AcquisitionKind.LCB_CF and self.mc_samples < 2:
            raise ValueError("LCB_CF needs at least two Monte-Carlo samples")


def eval_lcb(model: GpModel, x, kappa: float) -> float:
    m, v = posterior(model, x)
    return m - kappa * np.sqrt(v)


def eval_lcb_cf(problem: CompositeProblem, x, kappa: float, S: int = 100, seed: int = 0,
                counter=None) -> float:
    est = mc_moments(problem, x, S, seed, counter)
    if counter is not None:
        counter.af_probes += 1
    return float(est.mean - kappa * est.stdev)


def eval_lcb_bois(problem: CompositeProblem, x, kappa: float, counter=None) -> float:
    est = bois_moments(problem, x, counter)
    if counter is not None:
        counter.af_probes += 1
    return float(est.mean - kappa * est.stdev)


def make_acquisition(spec: AcquisitionSpec, target, counter=None):
    """Batch AF over design rows.

    ``target`` is a :class:`GpModel` for LCB and a trained
    :class:`CompositeProblem` otherwise.  For LCB_CF the seed is frozen, so
    the returned callable is a deterministic surface.
    """
    kappa = spec.kappa
    if spec.kind is AcquisitionKind.LCB:
        model = target

        def lcb(X):
            X = np.atleast_2d(X)
            m, v = model.predict(X)
            if counter is not None:
                n = X.shape[0]
                counter.af_probes += n
                counter.gp_posterior_calls += n
                counter.gp_mean_queries += n
                counter.gp_var_queries += n
            return m - kappa * np.sqrt(v)
        return lcb

    problem = target
    if spec.kind is AcquisitionKind.LCB_CF:
        S, seed = spec.mc_samples, spec.seed

        def lcb_cf(X):
            X, _ = _as_batch(X, problem.dx)
            est = _mc_batch(problem, X, S, seed, counter)
            if counter is not None:
                counter.af_probes += X.shape[0]
            return est.mean - kappa * est.stdev
        return lcb_cf

    def lcb_bois(X):
        X, _ = _as_batch(X, problem.dx)
        est = _bois_batch(problem, X, counter)
        if counter is not None:
            counter.af_probes += X.shape[0]
        return est.mean - kappa * est.stdev
    return lcb_bois

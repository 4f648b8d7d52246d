"""Locate reference optima of the shipped simulators by coarse-to-fine search.

A full-factorial coarse grid is evaluated, then the best grid points seed
a compass pattern search in unit coordinates (step halving until 1e-7).
The best result is written to ``src/greybox_bo/data/reference_optima.json``.

    python3 tools/reference_optima.py [--levels 6] [--seeds 8]
"""

from __future__ import annotations

import argparse
import itertools
import json
import time
from pathlib import Path

import numpy as np

from greybox_bo.sims import chemproc, pbr, toys

OUT = Path(__file__).resolve().parents[1] / "src" / "greybox_bo" / "data" / "reference_optima.json"


def pattern_search(fun, u0, f0, step=0.125, min_step=1e-7, max_evals=20000):
    """Compass search on the unit box; returns (u, f, evals)."""
    u, f = u0.copy(), f0
    d = u.size
    evals = 0
    while step >= min_step and evals < max_evals:
        improved = False
        for i in range(d):
            for s in (step, -step):
                v = u.copy()
                v[i] = np.clip(v[i] + s, 0.0, 1.0)
                if v[i] == u[i]:
                    continue
                fv = fun(v)
                evals += 1
                if fv < f:
                    u, f, improved = v, fv, True
                    break
        if not improved:
            step /= 2.0
    return u, f, evals


def search(objective, lower, upper, levels, n_seeds):
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)

    def fun(u):
        try:
            v = float(objective(lower + u * (upper - lower)))
        except Exception:
            return np.inf
        return v if np.isfinite(v) else np.inf

    grid = np.linspace(0.0, 1.0, levels)
    pts = np.array(list(itertools.product(grid, repeat=lower.size)))
    vals = np.array([fun(u) for u in pts])
    order = np.lexsort((np.arange(len(vals)), vals))[:n_seeds]
    best_u, best_f, total = None, np.inf, len(pts)
    for k in order:
        u, f, n = pattern_search(fun, pts[k], vals[k])
        total += n
        if f < best_f:
            best_u, best_f = u, f
    return lower + best_u * (upper - lower), best_f, total


PROBLEMS = {
    "chemproc": (lambda x: chemproc.simulate(x)[1], chemproc.LOWER, chemproc.UPPER),
    "pbr": (pbr.msp, pbr.LOWER, pbr.UPPER),
}


def _toy(factory):
    p = factory()

    def obj(x):
        y = p.sample(x)
        return p.f(x[None, :], y[None, :])[0]
    return obj, p.lower, p.upper


for _name, _fac in (("toy_affine", toys.affine_problem), ("toy_quadratic", toys.quadratic_problem),
                    ("toy_nested", toys.nested_problem), ("toy_line", toys.line_problem),
                    ("toy_plane", toys.plane_problem)):
    PROBLEMS[_name] = _toy(_fac)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=6)
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--only", nargs="*")
    args = ap.parse_args()
    table = json.loads(OUT.read_text()) if OUT.exists() else {}
    for name, (obj, lo, hi) in PROBLEMS.items():
        if args.only and name not in args.only:
            continue
        t0 = time.time()
        x, f, n = search(obj, lo, hi, args.levels, args.seeds)
        table[name] = {"f_star": float(f), "x_star": [float(v) for v in x], "evaluations": int(n),
                       "method": f"{args.levels}-level grid, best {args.seeds} refined by compass search"}
        print(f"{name}: f*={f:.12g} at {np.round(x, 6).tolist()} ({n} evals, {time.time() - t0:.0f}s)")
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(table, indent=2) + "\n")


if __name__ == "__main__":
    main()

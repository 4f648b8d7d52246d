"""Command-line entry point: ``greybox-bo {run,moments,list}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import registry
from .composite import bois_moments, mc_moments
from .engine import Algorithm, TrialConfig, TrialResult, regret, run_trial, train_composite
from .manifest import RunManifest

logger = logging.getLogger("greybox_bo")

THREADS_ENV = "GREYBOX_BO_THREADS"
DESIGN_POINTS = 40


def fmt(v) -> str:
    """17 significant digits; empty for missing values."""
    if v is None:
        return ""
    v = float(v)
    if np.isnan(v):
        return "nan"
    return "%.17g" % v


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(1, n)


def results_header(x_names) -> list:
    return (["trial", "iteration", "algorithm"] + [f"x_{n}" for n in x_names]
            + ["f", "best_f", "regret", "gp_calls", "f_evals"])


def result_rows(trial: int, res: TrialResult, f_star) -> list:
    """One row per sample; initial samples get iterations 1-n_init .. 0."""
    n_init = res.n_init
    best = np.minimum.accumulate(res.F) if res.F else np.array([])
    reg = regret(best, f_star) if (f_star is not None and len(best)) else [None] * len(best)
    rows = []
    for k, (x, f) in enumerate(zip(res.X, res.F)):
        c = res.counter_trace[k]
        rows.append([str(trial), str(k + 1 - n_init), res.config.algorithm.value]
                    + [fmt(v) for v in x]
                    + [fmt(f), fmt(best[k]), fmt(reg[k]), str(c["gp_posterior_calls"]), str(c["whitebox_evals"])])
    return rows


def timing_rows(trial: int, res: TrialResult) -> list:
    return [[str(trial), str(i + 1), res.config.algorithm.value, "%.6f" % t]
            for i, t in enumerate(res.wall_time_per_iter)]


def summarize(manifest: RunManifest, results: dict) -> dict:
    out = {"problem_id": manifest.problem_id, "f_star": manifest.resolved_f_star,
           "trials": manifest.trials, "iterations": manifest.iterations, "algorithms": {}}
    for algo in manifest.algorithms:
        runs = [results[(t, algo)] for t in range(manifest.trials) if (t, algo) in results]
        bests = np.array([r.best_f for r in runs], dtype=float)
        entry = {
            "completed": sum(r.error is None for r in runs),
            "failed": sum(r.error is not None for r in runs),
            "best_f": {"min": float(bests.min()), "median": float(np.median(bests)),
                       "max": float(bests.max())} if bests.size else None,
            "best_f_per_trial": [float(b) for b in bests],
        }
        if manifest.resolved_f_star is not None and bests.size:
            entry["final_regret_median"] = float(np.median(regret(bests, manifest.resolved_f_star)))
        errors = {str(t): results[(t, algo)].error for t in range(manifest.trials)
                  if (t, algo) in results and results[(t, algo)].error}
        if errors:
            entry["errors"] = errors
        out["algorithms"][algo] = entry
    return out


def _run_one(manifest: RunManifest, problem, trial: int, algo: str) -> TrialResult:
    cfg = TrialConfig(
        algorithm=Algorithm(algo),
        init_points=manifest.init_points_for(problem, trial),
        iterations=manifest.iterations,
        kappa=manifest.kappa,
        mc_samples=manifest.mc_samples,
        af_starts=manifest.af_starts,
        seed=manifest.seed(trial),
        problem_id=manifest.problem_id,
        gp_restarts=manifest.gp_restarts,
    )
    t0 = time.perf_counter()
    res = run_trial(cfg, problem)
    logger.info("trial %d %s done in %.1fs, best %.6g%s", trial, algo, time.perf_counter() - t0,
                res.best_f, f" (error: {res.error})" if res.error else "")
    return res


def run_manifest(manifest: RunManifest, out_dir=None, dump_state=False, dump_ledger=False) -> int:
    """Execute every (trial, algorithm) job and write the output files; returns an exit code."""
    entry = registry.get(manifest.problem_id)
    dump_state = dump_state or manifest.dump_state
    dump_ledger = dump_ledger or manifest.dump_ledger
    for flag, on in (("dump_state", dump_state), ("dump_ledger", dump_ledger)):
        if on and entry.dump_flag != flag:
            print(f"error: --{flag.replace('_', '-')} is not available for problem {manifest.problem_id!r}",
                  file=sys.stderr)
            return 2
    problem = entry.build(manifest.resolved_f_star)
    f_star = problem.f_star
    out = Path(out_dir or manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.yaml").write_text(manifest.dump(), encoding="utf-8")

    jobs = [(t, a) for t in range(manifest.trials) for a in manifest.algorithms]
    results: dict = {}
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh, \
            open(out / "timings.csv", "w", newline="", encoding="utf-8") as th, \
            ThreadPoolExecutor(max_workers=worker_count()) as pool:
        writer = csv.writer(fh, lineterminator="\n")
        timer = csv.writer(th, lineterminator="\n")
        writer.writerow(results_header(problem.x_names or [str(i) for i in range(problem.dx)]))
        timer.writerow(["trial", "iteration", "algorithm", "iter_seconds"])
        futures = [pool.submit(_run_one, manifest, problem, t, a) for t, a in jobs]
        # single serializer: rows go out in job order whatever the completion order
        for (t, a), fut in zip(jobs, futures):
            try:
                res = fut.result()
            except Exception as exc:
                logger.error("trial %d %s aborted: %r", t, a, exc)
                res = TrialResult(TrialConfig(Algorithm(a), manifest.init_points_for(problem, t)))
                res.error = f"aborted: {exc!r}"
            results[(t, a)] = res
            writer.writerows(result_rows(t, res, f_star))
            timer.writerows(timing_rows(t, res))
            fh.flush()
            th.flush()

    summary = summarize(manifest, results)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if dump_state or dump_ledger:
        dumps = [{"trial": t, "algorithm": a, "iteration": k + 1 - res.n_init, "data": entry.dump(x)}
                 for (t, a), res in results.items() for k, x in enumerate(res.X)]
        name = "states.json" if dump_state else "ledgers.json"
        (out / name).write_text(json.dumps(dumps, indent=1) + "\n", encoding="utf-8")

    failed = [(t, a, r.error) for (t, a), r in results.items() if r.error]
    for t, a, err in failed:
        print(f"trial {t} {a}: {err}", file=sys.stderr)
    return 1 if failed else 0


def parity_table(problem_id: str, n_points: int, s_list, seed: int, design_points: int = DESIGN_POINTS):
    """Header and rows comparing linearized and Monte-Carlo moments at random designs."""
    entry = registry.get(problem_id)
    problem = entry.build()
    rng = np.random.default_rng(seed)
    span = problem.upper - problem.lower
    design = problem.lower + rng.uniform(size=(design_points, problem.dx)) * span
    Y = np.array([problem.sample(x) for x in design])
    trained, _ = train_composite(problem, design, Y, seed=seed)
    pts = problem.lower + rng.uniform(size=(n_points, problem.dx)) * span

    names = problem.x_names or [str(i) for i in range(problem.dx)]
    header = [f"x_{n}" for n in names] + ["m_bois", "s_bois"]
    for S in s_list:
        header += [f"m_mc_{S}", f"s_mc_{S}"]
    header += ["t_bois"] + [f"t_mc_{S}" for S in s_list]

    rows = []
    for x in pts:
        t0 = time.perf_counter()
        b = bois_moments(trained, x)
        t_b = time.perf_counter() - t0
        vals, times = [], []
        for S in s_list:
            t0 = time.perf_counter()
            m = mc_moments(trained, x, S, seed)
            times.append(time.perf_counter() - t0)
            vals += [m.mean, m.stdev]
        rows.append(list(x) + [b.mean, b.stdev] + vals + [t_b] + times)
    return header, rows


def cmd_run(args) -> int:
    try:
        manifest = RunManifest.load(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_manifest(manifest, args.out, args.dump_state, args.dump_ledger)


def cmd_moments(args) -> int:
    try:
        s_list = [int(s) for s in args.samples.split(",") if s.strip()]
    except ValueError:
        print("error: --samples must be a comma-separated list of integers", file=sys.stderr)
        return 2
    if not s_list or min(s_list) < 2:
        print("error: every sample count must be at least 2", file=sys.stderr)
        return 2
    try:
        header, rows = parity_table(args.problem, args.points, s_list, args.seed, args.design_points)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "parity.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[fmt(v) for v in r] for r in rows])
    return 0


def cmd_list(args) -> int:
    for pid in sorted(registry.REGISTRY):
        m = registry.get(pid).metadata()
        box = ", ".join(f"{n}[{lo:g}, {hi:g}]" for n, lo, hi in zip(m["x_names"], m["lower"], m["upper"]))
        print(f"{pid}: d_x={m['d_x']} d_y={m['d_y']} y=({', '.join(m['y_names'])}) box: {box}")
        print(f"    {m['description']}" + (f"; f*={m['f_star']:.10g}" if m["f_star"] is not None else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greybox-bo", description="Grey-box Bayesian optimization benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the trials described by a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory (overrides the manifest)")
    r.add_argument("--dump-state", action="store_true", help="write stream tables of every sample (chemproc)")
    r.add_argument("--dump-ledger", action="store_true", help="write cost ledgers of every sample (pbr)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("moments", help="linearized vs Monte-Carlo moment parity table")
    m.add_argument("problem")
    m.add_argument("--points", type=int, default=500)
    m.add_argument("--samples", default="10,100,1000")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--design-points", type=int, default=DESIGN_POINTS, help="training design size")
    m.add_argument("--out", help="output directory")
    m.set_defaults(func=cmd_moments)

    ls = sub.add_parser("list", help="list registered problems")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

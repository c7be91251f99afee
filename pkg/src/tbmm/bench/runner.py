"""Seeded multi-trial execution and CSV emission."""

from __future__ import annotations

import concurrent.futures
import csv
import io
import os

import numpy as np

from .. import problems, solvers
from ..errors import ConfigError, TbmmError

TRACE_HEADER = ["solver", "trial", "iter", "elapsed_s", "objective", "rel_error",
                "stationarity", "delta_n"]
AGG_HEADER = ["solver", "iter", "mean_rel_error", "std_rel_error", "mean_objective",
              "mean_stationarity"]
TIME_HEADER = ["solver", "checkpoint", "time_s", "mean_rel_error", "std_rel_error"]
SUMMARY_HEADER = ["solver", "trial", "status", "termination", "iters", "final_rel_error",
                  "final_objective", "message"]
CHECKPOINTS = 64

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One step of the SplitMix64 output function on a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def trial_seed(base_seed, t):
    """Seed for trial ``t``: ``splitmix64(base_seed + t * golden)`` modulo ``2^64``."""
    return splitmix64((base_seed + t * _GOLDEN) & _MASK)


def trial_streams(base_seed, t):
    """``(data_seed, init_rng, noise_seed)`` for one trial, from independent spawned streams."""
    data, init, noise = np.random.SeedSequence(trial_seed(base_seed, t)).spawn(3)
    return (int(data.generate_state(1, np.uint64)[0]), np.random.default_rng(init),
            int(noise.generate_state(1, np.uint64)[0]))


FACTORIES = {
    "ncpd": problems.make_ncpd,
    "nmf": problems.make_nmf,
    "matrec": problems.make_matrix_recovery,
    "inexact_rgd": problems.make_matrix_recovery,
    "stiefel_proxgrad": problems.make_sparse_pca,
}


def build_problem(cfg, data_seed):
    return FACTORIES[cfg.name](**cfg.problem_kwargs(), seed=data_seed)


def run_solver(cfg, entry, problem, init, noise_seed):
    sc = entry.config.replace(seed=noise_seed)
    if entry.kind == "niht":
        return solvers.niht_run(problem, sc.max_iters, init, seed=noise_seed, clock=sc.clock,
                                safeguard=entry.safeguard)
    if entry.kind == "block_pgd":
        return solvers.block_pgd_run(problem, sc, init)
    if entry.kind == "rgd":
        return solvers.inexact_rgd_run(problem, sc, init)
    if cfg.name == "stiefel_proxgrad":
        return solvers.stiefel_proxgrad_run(problem, sc, init, lam=entry.lam)
    return solvers.tbmm_run(problem, sc, init)


def run_trial(cfg, t):
    """All configured solvers on trial ``t``; every solver starts from the same point."""
    data_seed, init_rng, noise_seed = trial_streams(cfg.base_seed, t)
    problem = build_problem(cfg, data_seed)
    init = problem.initial_point(init_rng)
    out = []
    for entry in cfg.solvers:
        try:
            tr = run_solver(cfg, entry, problem, init, noise_seed)
        except TbmmError as exc:
            tr = solvers.RunTrace([], init, "Aborted", status="aborted", message=str(exc))
        out.append((entry.name, tr))
    return out


def _fmt(x):
    return "%.17g" % x


def trace_csv(solver_name, trial, trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in trace.records:
        w.writerow([solver_name, trial, r.iter, _fmt(r.elapsed), _fmt(r.objective),
                    _fmt(r.rel_error), _fmt(r.stationarity), _fmt(r.delta_n)])
    return buf.getvalue()


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def _table(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _mean_std(values):
    v = np.asarray(values, dtype=float)
    std = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
    return float(np.mean(v)), std


def aggregate_by_iter(runs):
    """Rows of :data:`AGG_HEADER` for every solver, over the trials that reached each iter."""
    rows = []
    for name, traces in runs.items():
        longest = max((len(tr.records) for tr in traces), default=0)
        for k in range(longest):
            recs = [tr.records[k] for tr in traces if len(tr.records) > k]
            m_err, s_err = _mean_std([r.rel_error for r in recs])
            rows.append([name, k, _fmt(m_err), _fmt(s_err),
                         _fmt(np.mean([r.objective for r in recs])),
                         _fmt(np.mean([r.stationarity for r in recs]))])
    return rows


def time_grid(runs, points=CHECKPOINTS):
    """Log-spaced checkpoints from the earliest first step to the shortest run's end."""
    traces = [tr for trs in runs.values() for tr in trs if len(tr.records) > 1]
    if not traces:
        return np.array([])
    t0 = min(tr.records[1].elapsed for tr in traces)
    t1 = min(tr.records[-1].elapsed for tr in traces)
    if not t1 > t0 > 0:
        return np.array([t1]) if t1 > 0 else np.array([])
    return np.geomspace(t0, t1, points)


def resample(trace, grid, column="rel_error"):
    """Last observation carried forward onto ``grid``."""
    t = trace.column("elapsed")
    v = trace.column(column)
    idx = np.searchsorted(t, grid, side="right") - 1
    return v[np.maximum(idx, 0)]


def aggregate_by_time(runs, grid):
    rows = []
    means = {}
    for name, traces in runs.items():
        traces = [tr for tr in traces if tr.records]
        if not traces:
            continue
        vals = np.array([resample(tr, grid) for tr in traces])
        means[name] = vals.mean(axis=0)
        for j, t in enumerate(grid):
            m, s = _mean_std(vals[:, j])
            rows.append([name, j, _fmt(t), _fmt(m), _fmt(s)])
    return rows, means


PLOT_SCRIPT = '''\
"""Re-render the figures for experiment {name!r} from its aggregate CSVs.

Usage: python {name}_plot.py [OUTPUT_DIR]
"""
import os
import sys

from tbmm.bench.report import plot_experiment

here = os.path.dirname(os.path.abspath(__file__))
plot_experiment(sys.argv[1] if len(sys.argv) > 1 else here, {name!r})
'''


def run_experiment(cfg, out_dir=None, parallel=1, render=True):
    """Run all trials and write CSVs, the plot script and (optionally) figures.

    Returns ``(runs, paths)`` where ``runs`` maps solver name to its list
    of traces in trial order.
    """
    out_dir = out_dir or cfg.output_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    if parallel < 1:
        raise ConfigError("--parallel must be >= 1")
    if parallel == 1:
        results = [run_trial(cfg, t) for t in range(cfg.trials)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run_trial, [cfg] * cfg.trials, range(cfg.trials)))
    runs = {e.name: [] for e in cfg.solvers}
    paths = []
    summary = []
    for t, trial in enumerate(results):
        for name, tr in trial:
            runs[name].append(tr)
            path = os.path.join(out_dir, f"{cfg.name}_{name}_trial{t}.csv")
            _write(path, trace_csv(name, t, tr))
            paths.append(path)
            last = tr.records[-1] if tr.records else None
            summary.append([name, t, tr.status, tr.termination,
                            last.iter if last else 0,
                            _fmt(last.rel_error) if last else "nan",
                            _fmt(last.objective) if last else "nan", tr.message])
    files = {
        "aggregate": (f"{cfg.name}_aggregate.csv", _table(AGG_HEADER, aggregate_by_iter(runs))),
        "summary": (f"{cfg.name}_summary.csv", _table(SUMMARY_HEADER, summary)),
        "plot": (f"{cfg.name}_plot.py", PLOT_SCRIPT.format(name=cfg.name)),
    }
    grid = time_grid(runs)
    time_rows, _ = aggregate_by_time(runs, grid)
    files["time"] = (f"{cfg.name}_time_aggregate.csv", _table(TIME_HEADER, time_rows))
    for fname, text in files.values():
        path = os.path.join(out_dir, fname)
        _write(path, text)
        paths.append(path)
    if render:
        from .report import plot_experiment
        paths.extend(plot_experiment(out_dir, cfg.name))
    return runs, paths

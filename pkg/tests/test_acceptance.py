"""Acceptance criteria 1-10, each at its stated tolerance.

Run the file directly (``python tests/test_acceptance.py``) or through
pytest; either way one PASS/FAIL line per criterion is printed at the end.
Regression runs are cached and shared between criteria.
"""

import functools
import os
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from tbmm import problems, solvers, verify
from tbmm.bench import load_config
from tbmm.bench.runner import aggregate_by_time, run_trial, time_grid, trial_streams

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, os.pardir, "configs")
BLOCKS = {"matrec": 1, "inexact_rgd": 1, "ncpd": 3, "nmf": 2, "stiefel_proxgrad": 1}
# NIHT has no descent guarantee; it is reported, not audited
AUDITED = {"tbmm", "rgd", "block_pgd"}


def _load(name, clock=None, **problem):
    cfg = load_config(os.path.join(CONFIGS, name + ".ini"))
    cfg.problem.update({k: str(v) for k, v in problem.items()})
    if clock:
        cfg.clock = clock
        for e in cfg.solvers:
            e.config = e.config.replace(clock=clock)
    return cfg


@functools.lru_cache(maxsize=None)
def regression(name, clock=None, **problem):
    """``(cfg, {solver: [traces]}, seconds)`` for every trial of a config file."""
    cfg = _load(name, clock, **problem)
    t0 = time.perf_counter()
    runs = {e.name: [] for e in cfg.solvers}
    for t in range(cfg.trials):
        for sname, tr in run_trial(cfg, t):
            runs[sname].append(tr)
    return cfg, runs, time.perf_counter() - t0


# criterion 6 asks for wall-clock checkpoints, so the NCPD/NMF regressions run on the wall clock
SUITE_RUNS = [("matrec", None), ("inexact_rgd", None), ("ncpd", "wall"), ("ncpd_unconstrained", "wall"),
              ("nmf", "wall"), ("nmf_unconstrained", "wall"), ("stiefel_proxgrad", None)]


def test_criterion_1_descent_audit(criterion):
    worst, n_runs, bad, info, seconds = -np.inf, 0, [], [], 0.0
    for fname, clock in SUITE_RUNS:
        cfg, runs, sec = regression(fname, clock)
        seconds += sec
        kinds = {e.name: e.kind for e in cfg.solvers}
        tol = None
        for sname, traces in runs.items():
            for t, tr in enumerate(traces):
                rep = verify.descent_audit(tr, BLOCKS[cfg.name])
                if kinds[sname] not in AUDITED:
                    info.append(rep.worst_value / rep.tolerance)
                    continue
                n_runs += 1
                worst = max(worst, rep.worst_value / rep.tolerance)
                if not rep.passed or tr.status != "ok":
                    bad.append(f"{fname}/{sname}/trial{t}")
    ok = not bad and seconds < 300
    detail = (f"{n_runs} audited runs, {len(bad)} violating, worst violation/tol = {worst:.3g}, "
              f"regression time {seconds:.0f}s (< 300s); niht worst/tol = {max(info):.3g} "
              f"(not audited)")
    criterion(1, ok, detail)
    assert not bad, bad
    assert seconds < 300


def test_criterion_2_matrix_recovery(criterion):
    _, r450, s450 = regression("matrec")
    _, r300, s300 = regression("matrec", p=300)
    # "reaches within 500 iterations": some iterate n <= 500 is at or below 1e-3
    best = {k: [float(min(tr.column("rel_error")[:501])) for tr in v] for k, v in r450.items()}
    ok_tbmm = sum(e <= 1e-3 for e in best["tbmm"])
    ok_niht = sum(e <= 1e-3 for e in best["niht"])
    m300 = {k: float(np.mean([tr.records[500].rel_error for tr in v])) for k, v in r300.items()}
    seconds = s450 + s300
    ok = ok_tbmm == 10 and ok_niht == 10 and m300["tbmm"] < m300["niht"] and seconds < 120
    detail = (f"p=450: tbmm {ok_tbmm}/10, niht {ok_niht}/10 reach 1e-3 "
              f"(niht best {', '.join(f'{e:.2g}' for e in best['niht'])}); "
              f"p=300 mean at 500: tbmm {m300['tbmm']:.3g} < niht {m300['niht']:.3g}; {seconds:.0f}s")
    criterion(2, ok, detail)
    assert ok_tbmm == 10
    assert m300["tbmm"] < m300["niht"]
    assert ok_niht == 10
    assert seconds < 120


def test_criterion_3_sampling_ratios(criterion):
    a = problems.make_matrix_recovery(p=300)
    b = problems.make_matrix_recovery(p=450)
    got = (a.rho, a.mu, b.rho, b.mu)
    want = (Fraction(1, 2), Fraction(59, 100), Fraction(3, 4), Fraction(59, 150))
    criterion(3, got == want, f"rho/mu = {', '.join(str(x) for x in got)}")
    assert got == want
    assert float(b.mu) == pytest.approx(0.3933333333333333, abs=1e-15)


def test_criterion_4_complexity_rate(criterion):
    t0 = time.perf_counter()
    slopes = []
    for t in range(10):
        data_seed, init_rng, _ = trial_streams(2024, t)
        prob = problems.make_matrix_recovery(p=450, seed=data_seed)
        tr = solvers.tbmm_run(prob, solvers.SolverConfig(max_iters=2000), prob.initial_point(init_rng))
        slopes.append(solvers.min_stationarity_curve(tr)[1])
    seconds = time.perf_counter() - t0
    good = sum(s <= -0.4 for s in slopes)
    criterion(4, good >= 8 and seconds < 120,
              f"{good}/10 slopes <= -0.4 ({', '.join(f'{s:.2f}' for s in slopes)}), {seconds:.0f}s")
    assert good >= 8
    assert seconds < 120


def test_criterion_5_inexact_robustness(criterion):
    cfg, runs, seconds = regression("inexact_rgd")
    noise = {e.name: e.config.noise for e in cfg.solvers}
    finals = np.array([[tr.records[-1].rel_error for tr in runs[name]] for name in noise])
    spread = float(np.max(finals.max(axis=0) / finals.min(axis=0)))
    ident = 0.0
    for name, c in noise.items():
        for tr in runs[name]:
            n = len(tr.records) - 1
            exact = float(c * sum(Fraction(1, (k + 1) ** 2) for k in range(n)))
            total = float(np.sum(tr.column("delta_n")[1:]))
            assert np.isfinite(total)
            ident = max(ident, abs(total - exact))
    ok = spread <= 10 and ident <= 1e-12 and seconds < 60
    criterion(5, ok, f"worst per-seed final rel_error ratio across c = {spread:.3g} (<= 10), "
                     f"|sum delta - c sum 1/(n+1)^2| <= {ident:.2g}, {seconds:.0f}s")
    assert spread <= 10
    assert ident <= 1e-12
    assert seconds < 60


def test_criterion_6_ncpd_nmf_ordering(criterion):
    parts, ok, seconds = [], True, 0.0
    for fname in ("ncpd", "ncpd_unconstrained", "nmf", "nmf_unconstrained"):
        _, runs, sec = regression(fname, "wall")
        seconds += sec
        grid = time_grid(runs)
        _, means = aggregate_by_time(runs, grid)
        viol = int(np.sum(means["tbmm"][10:] > means["block_pgd"][10:]))
        ok &= viol == 0
        parts.append(f"{fname} {viol}/{grid.size - 10} violating")
    ok &= seconds < 300
    criterion(6, ok, "; ".join(parts) + f" (wall clock, {seconds:.0f}s)")
    assert ok


def test_criterion_7_geometry(criterion):
    t0 = time.perf_counter()
    reps = [verify.tangent_projection_check(500), verify.stiefel_retraction_check(200),
            verify.fixed_rank_retraction_check(200), verify.eckart_young_check(200),
            verify.retraction_order_suite(50), verify.retraction_first_order_check(100),
            verify.svd_invariants_check(1000)]
    seconds = time.perf_counter() - t0
    failed = [r.name for r in reps if not r.passed]
    criterion(7, not failed and seconds < 60,
              f"{len(reps) - len(failed)}/{len(reps)} suites pass, {seconds:.1f}s"
              + (f"; failed {failed}" if failed else ""))
    assert not failed
    assert seconds < 60


def test_criterion_8_subproblems(criterion):
    t0 = time.perf_counter()
    rep = verify.gap_soundness_check(samples=500)
    seconds = time.perf_counter() - t0
    criterion(8, rep.passed and seconds < 30,
              f"worst deficit {rep.worst_value:.3g} over {rep.samples} instances, {seconds:.1f}s")
    assert rep.passed
    assert seconds < 30


def test_criterion_9_gradients(criterion):
    t0 = time.perf_counter()
    worst = {}
    for name, prob in (("matrec", problems.make_matrix_recovery(p=300, seed=1)),
                       ("ncpd", problems.make_ncpd(seed=1)), ("nmf", problems.make_nmf(seed=1))):
        rng = np.random.default_rng(5)
        w = 0.0
        for k in range(20):
            x = prob.initial_point(rng)
            for i in range(prob.num_blocks):
                w = max(w, verify.fd_gradient_check(prob, x, i, samples=2, seed=k).worst_value)
        worst[name] = w
    seconds = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-5 and seconds < 30
    criterion(9, ok, ", ".join(f"{k} {v:.2g}" for k, v in worst.items()) + f" (<= 1e-5), {seconds:.1f}s")
    assert max(worst.values()) <= 1e-5
    assert seconds < 30


def test_criterion_10_determinism(criterion, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        for name in ("matrec", "ncpd"):
            proc = subprocess.run(
                [sys.executable, "-m", "tbmm.cli", "run", os.path.join(CONFIGS, name + ".ini"),
                 "--trials", "2", "--out", str(out), "--no-figures"],
                capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir() if "_trial" in p.name)
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    criterion(10, files and all(same), f"{sum(same)}/{len(files)} per-trial CSVs byte-identical")
    assert files and all(same)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

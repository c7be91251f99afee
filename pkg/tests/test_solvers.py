import numpy as np
import pytest

from tbmm import linalg, manifolds as mf, problems, solvers
from tbmm.errors import CapabilityError, ConfigError
from tbmm.manifolds import Constraint, TangentVector
from tbmm.solvers import (Constant, Exact, Fixed, FromLipschitz, Inexact, LineSearch, SolverConfig,
                          TheoremStep)
from tbmm.surrogates import l1

E = Constraint.WHOLE


def quad(a, nonsmooth=None):
    a = [np.asarray(x, float) for x in a]
    return problems.CallbackProblem(
        [(mf.euclidean(*x.shape), E) for x in a],
        lambda b: 0.5 * sum(float(np.sum((x - y) ** 2)) for x, y in zip(b, a)),
        lambda b, i: b[i] - a[i], nonsmooth=nonsmooth, lipschitz=[1.0] * len(a))


def test_config_validation():
    with pytest.raises(ConfigError):
        Constant(0.0)
    with pytest.raises(ConfigError):
        Constant(1.5)
    with pytest.raises(ConfigError):
        LineSearch(gamma=1.0)
    with pytest.raises(ConfigError):
        Fixed((1.0, -1.0))
    with pytest.raises(ConfigError):
        FromLipschitz(0.5)
    with pytest.raises(ConfigError):
        SolverConfig(noise=-1)
    with pytest.raises(ConfigError):
        SolverConfig(clock="cpu")
    with pytest.raises(ConfigError):
        Inexact(budget=0)


def test_single_quadratic_block_one_iteration():
    a = np.array([1.0, -2.0, 3.0])
    pr = quad([a])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=3, lam=Fixed((1.0,))), [np.zeros(3)])
    np.testing.assert_allclose(tr.records[1].objective, 0.0, atol=1e-30)
    np.testing.assert_array_equal(tr.final_point[0], a)
    assert tr.termination == "MaxIters" and len(tr.records) == 4


def test_two_separable_blocks_zero_after_one_sweep():
    pr = quad([np.zeros(2), np.zeros((2, 2))])
    init = [np.array([3.0, -1.0]), np.ones((2, 2))]
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=1), init)
    assert all(np.all(b == 0) for b in tr.final_point)
    # inputs are never mutated
    assert init[0][0] == 3.0


def line_problem():
    return problems.CallbackProblem([(mf.euclidean(1), E)], lambda b: -b[0][0] + 2 * b[0][0] ** 2,
                                    lambda b, i: np.array([-1 + 4 * b[0][0]]))


def test_line_search_accepts_full_step():
    pr = quad([np.array([2.0])])
    V = TangentVector(np.zeros(1), ambient_=np.array([2.0]))
    alpha, x, _ = solvers.line_search(pr, 0, [np.zeros(1)], V, rho=1.0)
    assert alpha == 1.0 and x[0] == 2.0


def test_line_search_two_failures():
    V = TangentVector(np.zeros(1), ambient_=np.ones(1))
    alpha, x, _ = solvers.line_search(line_problem(), 0, [np.zeros(1)], V, rho=1.0, gamma=0.5)
    assert alpha == 0.25 and x[0] == 0.25


def test_line_search_ascent_returns_zero():
    pr = quad([np.array([2.0])])
    V = TangentVector(np.zeros(1), ambient_=np.array([-1.0]))
    alpha, x, _ = solvers.line_search(pr, 0, [np.zeros(1)], V, rho=1.0)
    assert alpha == 0.0 and x[0] == 0.0


def test_line_search_respects_orthant():
    pr = problems.CallbackProblem([(mf.euclidean(1), Constraint.NONNEG)],
                                  lambda b: -b[0][0], lambda b, i: -np.ones(1))
    V = TangentVector(np.array([1.0]), ambient_=np.array([-4.0]))
    # every step into x < 0 lowers nothing here but must be rejected as infeasible
    alpha, x, _ = solvers.line_search(pr, 0, [np.array([1.0])], V, rho=1e-9)
    assert alpha == 0.0


def test_broken_gradient_skips_blocks():
    a = np.array([1.0, 1.0])
    pr = problems.CallbackProblem([(mf.euclidean(2), E)], lambda b: 0.5 * np.sum((b[0] - a) ** 2),
                                  lambda b, i: a - b[0], lipschitz=[1.0])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=3, step=LineSearch()), [np.zeros(2)])
    assert tr.skipped == [(1, 0), (2, 0), (3, 0)]
    assert np.all(tr.final_point[0] == 0)


def test_linesearch_run_on_matrec_descends():
    pr = problems.make_matrix_recovery(m=12, n=8, r=2, p=80, seed=1)
    init = pr.initial_point(np.random.default_rng(0))
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=30, step=LineSearch()), init)
    obj = tr.column("objective")
    assert np.all(np.diff(obj) <= 0)
    assert obj[-1] < 1e-2 * obj[0]


def test_inexact_rgd_zero_noise_matches_exact():
    pr = problems.make_matrix_recovery(m=12, n=8, r=2, p=80, seed=2)
    init = pr.initial_point(np.random.default_rng(1))
    cfg = SolverConfig(max_iters=20)
    a = solvers.inexact_rgd_run(pr, cfg, init).column("objective")
    b = solvers.tbmm_run(pr, cfg, init).column("objective")
    assert np.max(np.abs(a - b)) <= 1e-12


def test_noise_norm_schedule():
    pr = problems.CallbackProblem([(mf.euclidean(3, 2), E)], lambda b: 0.0,
                                  lambda b, i: np.zeros((3, 2)), lipschitz=[1.0])
    tr = solvers.inexact_rgd_run(pr, SolverConfig(max_iters=4, noise=2.0, seed=7), [np.ones((3, 2))])
    norms = [r.step_norms[0] for r in tr.records[1:]]
    np.testing.assert_allclose(norms, [2.0, 0.5, 2 / 9, 2 / 16], rtol=1e-14)
    np.testing.assert_allclose(tr.column("delta_n")[1:], norms, rtol=1e-14)


def test_inexact_rgd_rejects_nonsmooth():
    pr = quad([np.zeros(2)], nonsmooth=[l1(0.1)])
    with pytest.raises(ConfigError):
        solvers.inexact_rgd_run(pr, SolverConfig(), [np.zeros(2)])


def test_determinism_and_seeded_noise():
    pr = problems.make_matrix_recovery(m=12, n=8, r=2, p=80, seed=3)
    init = pr.initial_point(np.random.default_rng(2))
    cfg = SolverConfig(max_iters=15, noise=1.0, seed=11)
    a = solvers.inexact_rgd_run(pr, cfg, init)
    b = solvers.inexact_rgd_run(pr, cfg, init)
    c = solvers.inexact_rgd_run(pr, cfg.replace(seed=12), init)
    assert np.array_equal(a.column("objective"), b.column("objective"))
    assert np.array_equal(a.column("elapsed"), b.column("elapsed"))
    assert not np.array_equal(a.column("objective"), c.column("objective"))


def test_theorem_step_cap():
    rng = np.random.default_rng(4)
    pr = quad([rng.standard_normal((3, 3))], nonsmooth=[l1(0.2)])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=5, lam=Fixed((2.0,)), step=TheoremStep(M2=1.5)),
                          [np.zeros((3, 3))])
    cap = 2.0 / (2.0 + 2 * 0.2 * 3.0 * 1.5)
    assert all(r.alpha_used[0] <= cap + 1e-15 for r in tr.records[1:])
    assert tr.records[1].alpha_used[0] == pytest.approx(cap)


def test_rank_collapse_aborts():
    spec = mf.fixed_rank(3, 3, 2)
    pr = problems.CallbackProblem([(spec, E)], lambda b: 0.5 * np.sum(b[0] ** 2),
                                  lambda b, i: b[0], lipschitz=[1.0])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=5), [np.diag([2.0, 1.0, 0.0])])
    assert tr.status == "aborted" and tr.termination == "Aborted"
    assert len(tr.records) == 1 and "rank" in tr.message


def test_nonfinite_objective_aborts():
    pr = problems.CallbackProblem([(mf.euclidean(1), E)],
                                  lambda b: np.nan if abs(b[0][0]) > 5 else 0.5 * b[0][0] ** 2,
                                  lambda b, i: np.array([-10.0]), lipschitz=[1.0])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=3), [np.zeros(1)])
    assert tr.status == "aborted" and "non-finite" in tr.message


def test_stationarity_and_time_termination():
    pr = problems.make_matrix_recovery(m=12, n=8, r=2, p=80, seed=5)
    init = pr.initial_point(np.random.default_rng(3))
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=500, stationarity_tol=1e-3), init)
    assert tr.termination == "StationarityTol" and tr.records[-1].stationarity <= 1e-3
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=500, time_limit=1e-4), init)
    assert tr.termination == "TimeLimit" and len(tr.records) < 501
    assert np.all(np.diff(tr.column("elapsed")) >= 0)


def test_wall_clock_runs():
    pr = quad([np.ones(2)])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=3, clock="wall"), [np.zeros(2)])
    assert np.all(np.diff(tr.column("elapsed")) >= 0) and tr.records[-1].elapsed > 0


def test_bad_init_rejected():
    pr = problems.make_matrix_recovery(m=5, n=4, r=2, p=20)
    with pytest.raises(mf.DomainError):
        solvers.tbmm_run(pr, SolverConfig(max_iters=1), [np.eye(5, 4)])


def identity_recovery(m=6, n=4, r=2, seed=0):
    rng = np.random.default_rng(seed)
    mats = np.eye(m * n).reshape(m * n, m, n)
    Xs = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    op = problems.SensingOperator(mats, Xs.ravel())
    return problems.MatrixRecovery(op, r, [Xs])


def test_niht_identity_operator_alpha_one():
    pr = identity_recovery()
    init = pr.initial_point(np.random.default_rng(1))
    tr = solvers.niht_run(pr, 5, init)
    for r in tr.records[1:]:
        assert r.alpha_used[0] == pytest.approx(1.0, rel=1e-12)
    assert tr.records[-1].rel_error <= 1e-12


def test_niht_at_truth_is_stationary():
    pr = problems.make_matrix_recovery(m=10, n=6, r=2, p=50, seed=4)
    Xs = pr.ground_truth[0]
    tr = solvers.niht_run(pr, 3, [Xs.copy()])
    assert max(tr.column("rel_error")) <= 1e-12
    assert tr.message.startswith("alpha fallbacks")


def test_niht_needs_operator():
    with pytest.raises(CapabilityError):
        solvers.niht_run(quad([np.zeros(2)]), 1, [np.zeros(2)])


def test_niht_safeguard_enforces_step_bound():
    pr = problems.make_matrix_recovery(m=20, n=8, r=2, p=70, seed=6)
    init = pr.initial_point(np.random.default_rng(5))
    tr = solvers.niht_run(pr, 60, init, safeguard=True)
    assert tr.status == "ok" and tr.records[-1].rel_error < tr.records[0].rel_error


def test_block_pgd_matches_tbmm_on_euclidean():
    rng = np.random.default_rng(6)
    pr = quad([rng.standard_normal(4), rng.standard_normal((2, 3))], nonsmooth=[l1(0.1), l1(0.0)])
    init = [np.zeros(4), np.zeros((2, 3))]
    cfg = SolverConfig(max_iters=4, lam=Fixed((3.0, 2.0)))
    a = solvers.block_pgd_run(pr, cfg, init)
    b = solvers.tbmm_run(pr, cfg, init)
    for x, y in zip(a.final_point, b.final_point):
        np.testing.assert_allclose(x, y, atol=1e-15)


def test_block_pgd_full_svd_counter_and_nmf_descent():
    pr = problems.make_nmf(seed=3)
    init = pr.initial_point(np.random.default_rng(7))
    tr = solvers.block_pgd_run(pr, SolverConfig(max_iters=8), init)
    assert tr.counter.calls("svd_full:50x10") == 8
    obj = tr.column("objective")
    assert np.all(np.diff(obj) <= 1e-9 * (1 + abs(obj[0])))


def test_tbmm_fixed_rank_never_full_size_svd(monkeypatch):
    pr = problems.make_matrix_recovery(m=30, n=10, r=2, p=150, seed=2)
    init = pr.initial_point(np.random.default_rng(1))
    seen = []
    orig = linalg.svd_thin

    def spy(A):
        seen.append(np.shape(A))
        return orig(A)

    monkeypatch.setattr(linalg, "svd_thin", spy)
    full = []
    for iters in (2, 10):
        seen.clear()
        solvers.tbmm_run(pr, SolverConfig(max_iters=iters), init)
        full.append(sum(s == (30, 10) for s in seen))
        assert max(max(s) for s in seen if s != (30, 10)) <= 4
    # full-size factorizations happen only at start-up
    assert full[0] == full[1]


def test_ncpd_nmf_tbmm_descent():
    for pr in (problems.make_ncpd(dims=(12, 8, 6), R=4, r=2, seed=1),
               problems.make_nmf(p=15, N=12, R=6, r=3, seed=1)):
        init = pr.initial_point(np.random.default_rng(2))
        tr = solvers.tbmm_run(pr, SolverConfig(max_iters=25), init)
        obj = tr.column("objective")
        assert tr.status == "ok"
        assert np.all(np.diff(obj) <= 1e-9 * (1 + abs(obj[0])))
        assert tr.records[-1].rel_error < tr.records[0].rel_error


def test_stiefel_zero_weight_is_rgd():
    pr = problems.make_sparse_pca(n=12, k=2, support=3, weight=0.0, seed=3)
    x0 = pr.initial_point(np.random.default_rng(3))
    lam = 5.0
    tr = solvers.stiefel_proxgrad_run(pr, SolverConfig(max_iters=1), x0, lam=lam)
    spec = pr.block_specs[0][0]
    g = mf.riemannian_gradient(spec, x0[0], pr.euclid_grad(x0, 0)).ambient()
    s = linalg.svd_thin(x0[0] - g / (2 * lam))
    np.testing.assert_allclose(tr.final_point[0], s.U @ s.V.T, atol=1e-12)


def test_stiefel_stationary_init_is_fixed():
    pr = problems.make_sparse_pca(n=12, k=2, support=3, weight=0.0, seed=4)
    w, Q = np.linalg.eigh(pr.S)
    x0 = [Q[:, ::-1][:, :2].copy()]
    tr = solvers.stiefel_proxgrad_run(pr, SolverConfig(max_iters=5), x0)
    assert np.abs(tr.final_point[0] - x0[0]).max() <= 1e-12
    assert max(r.step_norms[0] for r in tr.records[1:]) <= 1e-12


def test_stiefel_requires_stiefel_block():
    with pytest.raises(ConfigError):
        solvers.stiefel_proxgrad_run(quad([np.zeros(2)]), SolverConfig(), [np.zeros(2)])


def test_min_stationarity_curve():
    env, slope = solvers.min_stationarity_curve(np.full(50, 0.3))
    assert slope == pytest.approx(0.0, abs=1e-12)
    n = np.arange(1, 401)
    env, slope = solvers.min_stationarity_curve(1 / np.sqrt(n))
    assert abs(slope + 0.5) <= 1e-6
    vals = np.array([3, 1, 2, 0.5, 4, 0.4, 1, 1, 1, 1.0])
    env, _ = solvers.min_stationarity_curve(vals)
    np.testing.assert_array_equal(env, [3, 1, 1, 0.5, 0.5, 0.4, 0.4, 0.4, 0.4, 0.4])
    with pytest.raises(ValueError):
        solvers.min_stationarity_curve(np.ones(5))

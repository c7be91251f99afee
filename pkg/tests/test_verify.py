import numpy as np
import pytest

from tbmm import manifolds as mf, problems, solvers, verify
from tbmm.solvers import IterRecord, RunTrace, SolverConfig


def make_trace(objectives, deltas=None):
    deltas = deltas if deltas is not None else [0.0] * len(objectives)
    recs = [IterRecord(k, float(k), f, 0.0, 1.0, d) for k, (f, d) in enumerate(zip(objectives, deltas))]
    return RunTrace(recs, [], "MaxIters")


def test_report_pass_flag():
    assert verify.CheckReport("a", 1.0, 1.0, 1).passed
    assert not verify.CheckReport("a", 1.0 + 1e-12, 1.0, 1).passed
    assert "PASS" in verify.CheckReport("a", 0.0, 1.0, 3).line()


def test_jacobi_eigh_oracle():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((6, 6))
    S = B + B.T
    w, Q = verify.jacobi_eigh(S)
    np.testing.assert_allclose(Q @ np.diag(w) @ Q.T, S, atol=1e-12)
    np.testing.assert_allclose(Q.T @ Q, np.eye(6), atol=1e-12)
    assert np.all(np.diff(w) <= 0)
    np.testing.assert_allclose(w, np.sort(np.linalg.eigvalsh(S))[::-1], atol=1e-12)


def test_fd_on_quadratic_and_linear():
    a = np.array([1.0, -2.0, 0.5])
    quad = problems.CallbackProblem([(mf.euclidean(3), mf.Constraint.WHOLE)],
                                    lambda b: 0.5 * np.sum((b[0] - a) ** 2), lambda b, i: b[0] - a)
    rep = verify.fd_gradient_check(quad, [np.zeros(3)], 0, samples=10)
    assert rep.worst_value <= 1e-9 and rep.passed
    c = np.array([3.0, 1.0, -1.0])
    lin = problems.CallbackProblem([(mf.euclidean(3), mf.Constraint.WHOLE)],
                                   lambda b: float(c @ b[0]), lambda b, i: c)
    assert verify.fd_gradient_check(lin, [np.ones(3)], 0).worst_value <= 1e-9
    with pytest.raises(ValueError):
        verify.fd_gradient_check(lin, [np.ones(3)], 0, step=0)


def test_fd_detects_wrong_gradient():
    pr = problems.CallbackProblem([(mf.euclidean(3), mf.Constraint.WHOLE)],
                                  lambda b: 0.5 * np.sum(b[0] ** 2), lambda b, i: 1.1 * b[0])
    assert not verify.fd_gradient_check(pr, [np.ones(3)], 0).passed


def test_fd_ncpd_instance():
    pr = problems.make_ncpd(seed=2)
    x = pr.initial_point(np.random.default_rng(0))
    for i in range(3):
        assert verify.fd_gradient_check(pr, x, i).passed


def test_descent_audit_cases():
    assert verify.descent_audit(make_trace([3.0, 2.0, 1.0, 1.0]), 1).worst_value <= 0
    bad = verify.descent_audit(make_trace([3.0, 2.0, 2.0 + 1e-3, 1.0]), 1)
    assert not bad.passed and bad.worst_value == pytest.approx(1e-3)
    # a rise covered by m * delta is allowed
    ok = verify.descent_audit(make_trace([3.0, 3.1, 3.0], [0.0, 0.05, 0.0]), 2)
    assert ok.passed


def test_descent_audit_exact_and_inexact_runs():
    a = np.arange(4.0)
    pr = problems.CallbackProblem([(mf.euclidean(4), mf.Constraint.WHOLE)],
                                  lambda b: 0.5 * np.sum((b[0] - a) ** 2), lambda b, i: b[0] - a,
                                  lipschitz=[1.0])
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=5, lam=solvers.Fixed((2.0,))), [np.zeros(4)])
    assert verify.descent_audit(tr, 1).worst_value <= 0
    pr = problems.make_nmf(p=12, N=9, R=5, r=3, seed=3)
    tr = solvers.tbmm_run(pr, SolverConfig(max_iters=20, subproblem=solvers.Inexact(1e-2, 3)),
                          pr.initial_point(np.random.default_rng(1)))
    assert verify.descent_audit(tr, 2).passed


def test_rate_check():
    assert verify.rate_check(1 / np.sqrt(np.arange(1, 201))).passed
    assert not verify.rate_check(np.full(200, 0.5)).passed
    with pytest.raises(ValueError):
        verify.rate_check(np.ones(50))


@pytest.mark.parametrize("check", [verify.gap_soundness_check, verify.tangent_projection_check,
                                   verify.stiefel_retraction_check, verify.fixed_rank_retraction_check,
                                   verify.eckart_young_check, verify.retraction_order_suite,
                                   verify.retraction_first_order_check, verify.svd_invariants_check])
def test_builtin_checks_pass(check):
    rep = check(samples=30)
    assert rep.passed, rep.line()


def test_run_suite_filter_and_custom():
    reps = verify.run_suite("rate_synth")
    assert [r.name for r in reps] == ["rate_synthetic"]
    custom = {"x": lambda: verify.CheckReport("ignored", 2.0, 1.0, 1)}
    (rep,) = verify.run_suite(None, custom)
    assert rep.name == "x" and not rep.passed
    assert len(verify.SUITE) == 17

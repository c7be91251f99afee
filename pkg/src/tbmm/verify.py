"""Independent oracles and checkers.

Each check returns a :class:`CheckReport` whose ``passed`` flag is exactly
``worst_value <= tolerance``. :data:`SUITE` maps check names to zero-argument
callables; :func:`run_suite` runs the ones matching a name filter. All
randomness is seeded, so reports are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, manifolds as mf, problems, solvers
from .manifolds import Constraint
from .surrogates import (NONE, ProxLinearSurrogate, l1, solve_exact_separable, solve_inexact,
                         surrogate_value)


@dataclass(frozen=True)
class CheckReport:
    name: str
    worst_value: float
    tolerance: float
    samples: int

    @property
    def passed(self):
        return bool(self.worst_value <= self.tolerance)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: worst={self.worst_value:.3e} "
                f"tol={self.tolerance:.1e} samples={self.samples}")


def jacobi_eigh(S, tol=1e-14, max_sweeps=50):
    """Eigenvalues (descending) and eigenvectors of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(S, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    n = A.shape[0]
    Q = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta)) if theta else 1.0
                c = 1 / np.hypot(1.0, t)
                s = t * c
                J = np.array([[c, s], [-s, c]])
                idx = [p, q]
                A[:, idx] = A[:, idx] @ J
                A[idx, :] = J.T @ A[idx, :]
                Q[:, idx] = Q[:, idx] @ J
    w = np.diag(A).copy()
    order = np.argsort(-w)
    return w[order], Q[:, order]


# problem-level checks

def fd_gradient_check(problem, point, i, step=1e-6, samples=5, seed=0, tol=1e-5):
    """Central differences of the smooth part along random unit directions of block ``i``.

    The error is normalized by ``max(1, ||grad||)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = np.random.default_rng(seed)
    g = problem.euclid_grad(point, i)
    scale = max(1.0, float(np.linalg.norm(g)))
    worst = 0.0
    for _ in range(samples):
        d = rng.standard_normal(g.shape)
        d /= np.linalg.norm(d)
        plus = list(point)
        minus = list(point)
        plus[i] = point[i] + step * d
        minus[i] = point[i] - step * d
        fd = (problem.smooth(plus) - problem.smooth(minus)) / (2 * step)
        worst = max(worst, abs(fd - float(np.vdot(g, d))) / scale)
    return CheckReport(f"fd_gradient[{problem.name}:{i}]", worst, tol, samples)


def descent_audit(trace, m, name="descent"):
    """Worst ``F(n) - F(n-1) - m delta_n`` against ``1e-9 (1 + |F(0)|)``."""
    obj = trace.column("objective")
    delta = trace.column("delta_n")
    tol = solvers.DESCENT_RTOL * (1 + abs(obj[0]))
    if obj.size < 2:
        return CheckReport(name, -np.inf, tol, 0)
    worst = float(np.max(np.diff(obj) - m * delta[1:]))
    return CheckReport(name, worst, tol, obj.size - 1)


def rate_check(trace, threshold=-0.4, name="rate"):
    """Passes when the running-min stationarity decays like ``N^threshold`` or faster."""
    n = len(trace.records) if isinstance(trace, solvers.RunTrace) else len(trace)
    if n < 100:
        raise ValueError("rate_check needs at least 100 records")
    _, slope = solvers.min_stationarity_curve(trace)
    return CheckReport(name, slope, threshold, n)


def _random_separable(rng):
    shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    lam = float(rng.uniform(0.5, 5.0))
    cspec = Constraint.NONNEG if rng.random() < 0.5 else Constraint.WHOLE
    psi = l1(float(rng.uniform(0, 1))) if rng.random() < 0.6 else NONE
    theta = rng.standard_normal(shape)
    if cspec is Constraint.NONNEG:
        theta = np.abs(theta)
    g = rng.standard_normal(shape) * rng.uniform(0.1, 5)
    s = ProxLinearSurrogate(float(rng.standard_normal()), mf.TangentVector(theta, ambient_=g), lam)
    return s, psi, theta, cspec


def gap_soundness_check(samples=500, seed=0, tol=1e-8):
    """Inexact gap estimates never undercut the true gap; outputs match the exact minimizer.

    Worst value is the larger of the certificate deficit
    ``(G(V) - G(V*)) - gap_estimate`` over every inner budget ``1..4`` and
    ``lam ||V - V*|| - tol`` for a converged run; zero or below passes.
    """
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        s, psi, theta, cspec = _random_separable(rng)
        star = solve_exact_separable(s, psi, theta, cspec)
        g_star = surrogate_value(s, psi, theta, star.V)
        for budget in range(1, 5):
            res = solve_inexact(s, psi, theta, cspec, budget=budget, tol=0.0)
            true_gap = surrogate_value(s, psi, theta, res.V) - g_star
            worst = max(worst, true_gap - res.gap_estimate - 1e-12)
        res = solve_inexact(s, psi, theta, cspec, budget=100, tol=tol)
        dist = s.lam * np.linalg.norm(res.V.ambient() - star.V.ambient())
        worst = max(worst, dist - tol)
    return CheckReport("gap_soundness", float(worst), 0.0, samples)


# geometry checks

_KINDS = (mf.euclidean(4, 3), mf.sphere(5), mf.stiefel(5, 2), mf.fixed_rank(6, 5, 2))


def tangent_projection_check(samples=500, seed=0):
    """Idempotence ``P(P u) = P u`` and self-adjointness ``<P u, w> = <u, P w>``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in _KINDS:
        for _ in range(samples):
            x = mf.random_point(spec, rng)
            f = mf.point_factors(spec, x) if spec.kind == "fixed_rank" else None
            u, w = rng.standard_normal(spec.shape), rng.standard_normal(spec.shape)
            pu = mf.tangent_project(spec, x, u, f).ambient()
            pw = mf.tangent_project(spec, x, w, f).ambient()
            ppu = mf.tangent_project(spec, x, pu, f).ambient()
            scale = 1 + np.linalg.norm(u) * np.linalg.norm(w)
            worst = max(worst, np.abs(ppu - pu).max(),
                        abs(np.vdot(pu, w) - np.vdot(u, pw)) / scale)
    return CheckReport("tangent_projection", float(worst), 1e-10, samples * len(_KINDS))


def stiefel_retraction_check(samples=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, n + 1))
        spec = mf.stiefel(n, k)
        x = mf.random_point(spec, rng)
        v = mf.random_tangent(spec, x, rng, unit=False)
        y = mf.retract(spec, x, v, float(rng.uniform(0, 1)))
        worst = max(worst, np.abs(y.T @ y - np.eye(k)).max())
    return CheckReport("stiefel_retraction", float(worst), 1e-10, samples)


def fixed_rank_retraction_check(samples=200, seed=0):
    """Factored small-core retraction against the dense truncated-SVD path."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        m, n = int(rng.integers(2, 13)), int(rng.integers(2, 13))
        r = int(rng.integers(1, min(m, n) + 1))
        spec = mf.fixed_rank(m, n, r)
        x = mf.random_point(spec, rng)
        f = mf.point_factors(spec, x)
        v = mf.random_tangent(spec, x, rng, f, unit=False)
        alpha = float(rng.uniform(0.05, 1))
        fast, _ = mf.retract_fixed_rank(spec, x, v, alpha, f)
        dense = linalg.svd_truncated(x + alpha * v.ambient(), r).matrix()
        worst = max(worst, np.linalg.norm(fast - dense) / max(1.0, np.linalg.norm(dense)))
    return CheckReport("fixed_rank_retraction", float(worst), 1e-9, samples)


def eckart_young_check(samples=200, seed=0):
    """``||A - A_r||_F^2 = sum_{i>r} sigma_i^2`` against eigenvalues from :func:`jacobi_eigh`."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        m, n = int(rng.integers(2, 10)), int(rng.integers(2, 10))
        r = int(rng.integers(1, min(m, n) + 1))
        A = rng.standard_normal((m, n))
        ev, _ = jacobi_eigh(A.T @ A if n <= m else A @ A.T)
        tail = float(np.sum(np.maximum(ev[r:], 0.0)))
        res = np.linalg.norm(A - linalg.svd_truncated(A, r).matrix()) ** 2
        worst = max(worst, abs(res - tail) / np.sum(A * A))
    return CheckReport("eckart_young", float(worst), 1e-9, samples)


def retraction_order_suite(samples=50, seed=0):
    """Second-order ratio table stays bounded (worst ``max/min`` ratio at most 10)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in _KINDS[1:]:
        for _ in range(samples):
            x = mf.random_point(spec, rng)
            f = mf.point_factors(spec, x) if spec.kind == "fixed_rank" else None
            v = mf.random_tangent(spec, x, rng, f)
            table = mf.retraction_order_check(spec, x, v, f)
            lo, hi = table.ratios.min(), table.ratios.max()
            worst = max(worst, 0.0 if hi == 0 else (hi / lo if lo > 0 else np.inf))
    return CheckReport("retraction_order", float(worst), 10.0, samples * 3)


def retraction_first_order_check(samples=100, seed=0):
    """``||Rtr_x(t v) - x|| <= 2 t ||v||`` for ``t <= 0.1``; worst ratio against 2."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in _KINDS:
        for _ in range(samples):
            x = mf.random_point(spec, rng)
            f = mf.point_factors(spec, x) if spec.kind == "fixed_rank" else None
            v = mf.random_tangent(spec, x, rng, f)
            for t in (0.1, 0.03, 0.01, 1e-3):
                y = mf.retract(spec, x, v, t, f)
                worst = max(worst, np.linalg.norm(y - x) / (t * v.norm()))
    return CheckReport("retraction_first_order", float(worst), 2.0, samples * len(_KINDS))


def svd_invariants_check(samples=300, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        m, n = int(rng.integers(1, 21)), int(rng.integers(1, 21))
        A = rng.standard_normal((m, n))
        s = linalg.svd_thin(A)
        k = s.rank
        worst = max(worst,
                    np.abs(s.U.T @ s.U - np.eye(k)).max(),
                    np.abs(s.V.T @ s.V - np.eye(k)).max(),
                    np.linalg.norm(s.matrix() - A) / np.linalg.norm(A),
                    max(0.0, float(np.max(np.diff(s.sigma), initial=0.0))))
    return CheckReport("svd_invariants", float(worst), 1e-10, samples)


# solver-level checks

def _fd_family(name, make, points=4):
    def check():
        prob = make()
        rng = np.random.default_rng(7)
        worst, count = 0.0, 0
        for k in range(points):
            x = prob.initial_point(rng)
            for i in range(prob.num_blocks):
                rep = fd_gradient_check(prob, x, i, samples=3, seed=k)
                worst = max(worst, rep.worst_value)
                count += rep.samples
        return CheckReport(f"fd_gradient_{name}", worst, 1e-5, count)
    return check


def _descent_matrec():
    prob = problems.make_matrix_recovery(p=450, seed=0)
    x0 = prob.initial_point(np.random.default_rng(1))
    tr = solvers.tbmm_run(prob, solvers.SolverConfig(max_iters=100), x0)
    return descent_audit(tr, 1, "descent_matrec")


def _descent_nmf():
    prob = problems.make_nmf(seed=0)
    x0 = prob.initial_point(np.random.default_rng(1))
    tr = solvers.tbmm_run(prob, solvers.SolverConfig(max_iters=30, subproblem=solvers.Inexact()),
                          x0)
    return descent_audit(tr, 2, "descent_nmf_inexact")


def _descent_stiefel():
    prob = problems.make_sparse_pca(seed=0)
    x0 = prob.initial_point(np.random.default_rng(1))
    tr = solvers.stiefel_proxgrad_run(prob, solvers.SolverConfig(max_iters=60), x0)
    return descent_audit(tr, 1, "descent_stiefel_proxgrad")


def _rate_matrec():
    # 300 iterations: long enough for the fit, short of the double-precision floor
    prob = problems.make_matrix_recovery(p=450, seed=0)
    x0 = prob.initial_point(np.random.default_rng(1))
    tr = solvers.tbmm_run(prob, solvers.SolverConfig(max_iters=300), x0)
    return rate_check(tr, name="rate_matrec")


def _rate_synthetic():
    return rate_check(1.0 / np.sqrt(np.arange(1, 401)), name="rate_synthetic")


SUITE = {
    "svd_invariants": svd_invariants_check,
    "eckart_young": eckart_young_check,
    "tangent_projection": tangent_projection_check,
    "stiefel_retraction": stiefel_retraction_check,
    "fixed_rank_retraction": fixed_rank_retraction_check,
    "retraction_order": retraction_order_suite,
    "retraction_first_order": retraction_first_order_check,
    "gap_soundness": gap_soundness_check,
    "fd_gradient_matrec": _fd_family("matrec", lambda: problems.make_matrix_recovery(p=300)),
    "fd_gradient_ncpd": _fd_family("ncpd", lambda: problems.make_ncpd()),
    "fd_gradient_nmf": _fd_family("nmf", lambda: problems.make_nmf()),
    "fd_gradient_sparse_pca": _fd_family("sparse_pca", lambda: problems.make_sparse_pca()),
    "descent_matrec": _descent_matrec,
    "descent_nmf_inexact": _descent_nmf,
    "descent_stiefel_proxgrad": _descent_stiefel,
    "rate_synthetic": _rate_synthetic,
    "rate_matrec": _rate_matrec,
}


def run_suite(name_filter=None, suite=None):
    """Run every check whose name contains ``name_filter``; returns the reports in order."""
    suite = SUITE if suite is None else suite
    out = []
    for name, fn in suite.items():
        if name_filter and name_filter not in name:
            continue
        rep = fn()
        out.append(CheckReport(name, rep.worst_value, rep.tolerance, rep.samples))
    return out

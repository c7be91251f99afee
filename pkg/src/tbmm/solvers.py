"""Outer-loop drivers.

``tbmm_run`` is the block majorization-minimization driver: for each block
in turn it builds a prox-linear surrogate in the tangent space, minimizes
it (exactly or inexactly), picks a step, retracts and, for fixed-rank
blocks with nonnegativity, projects back. The baselines (inexact RGD,
Stiefel proximal gradient, NIHT and block PGD) share its trace format.

Elapsed time comes from a pluggable clock. ``"ops"`` (the default)
converts charged flops into seconds at :data:`NOMINAL_FLOPS` per second,
which makes traces machine independent and exactly reproducible;
``"wall"`` uses ``time.perf_counter``. Diagnostics (objective, error,
stationarity) are never clocked.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from ._ops import OpCounter, charge, counting
from .errors import CapabilityError, ConfigError, DomainError, RetractionError
from .manifolds import (Constraint, check_constraint, check_membership, point_factors,
                        project_constraint_factored, project_to_manifold, retract,
                        retract_fixed_rank, riemannian_gradient, tangent_project)
from .surrogates import (ProxLinearSurrogate, solve_exact_separable, solve_exact_unconstrained,
                         solve_inexact, solve_tangent_l1, stationarity_value)

log = logging.getLogger(__name__)

NOMINAL_FLOPS = 1e9
MAX_SHRINKS = 60
DESCENT_RTOL = 1e-9


# step-size modes

@dataclass(frozen=True)
class Constant:
    alpha: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"constant step must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class LineSearch:
    """Backtracking ``alpha0 * gamma^k``; ``rho=None`` uses the block's ``lam``."""

    gamma: float = 0.5
    rho: float | None = None
    alpha0: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"line-search gamma must lie in (0, 1), got {self.gamma}")
        if self.rho is not None and self.rho <= 0:
            raise ConfigError("line-search rho must be positive")
        if not 0 < self.alpha0 <= 1:
            raise ConfigError("line-search alpha0 must lie in (0, 1]")


@dataclass(frozen=True)
class TheoremStep:
    """``alpha = rho / (rho + 2 L_psi M2)`` with ``rho = lam``.

    ``L_psi=None`` takes the l1 weight times the square root of the block
    size (zero for blocks without an l1 term).
    """

    M2: float = 1.0
    L_psi: float | None = None


# proximal-parameter modes

@dataclass(frozen=True)
class Fixed:
    values: tuple

    def __post_init__(self):
        if any(not v > 0 for v in self.values):
            raise ConfigError(f"fixed lambda values must be positive, got {self.values}")


@dataclass(frozen=True)
class FromLipschitz:
    safety: float = 1.0

    def __post_init__(self):
        if self.safety < 1:
            raise ConfigError("Lipschitz safety factor must be >= 1")


# subproblem modes

@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class Inexact:
    """Inner tolerance ``tol0 / (n + 1)^2`` at outer iteration ``n`` (0-based), ``budget`` steps."""

    tol0: float = 1e-2
    budget: int = 50

    def __post_init__(self):
        if self.tol0 < 0 or self.budget < 1:
            raise ConfigError("inexact mode needs tol0 >= 0 and budget >= 1")


# iterative solves on curved blocks in "exact" mode
EXACT_INNER_TOL = 1e-10
EXACT_INNER_BUDGET = 500


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    step: object = Constant()
    lam: object = FromLipschitz()
    subproblem: object = Exact()
    noise: float = 0.0
    seed: int = 0
    time_limit: float | None = None
    stationarity_tol: float | None = None
    clock: str = "ops"
    keep_points: bool = False

    def __post_init__(self):
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.noise < 0:
            raise ConfigError("gradient noise level must be nonnegative")
        if self.clock not in ("ops", "wall"):
            raise ConfigError(f"clock must be 'ops' or 'wall', got {self.clock!r}")
        if not isinstance(self.step, (Constant, LineSearch, TheoremStep)):
            raise ConfigError(f"unknown step mode {self.step!r}")
        if not isinstance(self.lam, (Fixed, FromLipschitz)):
            raise ConfigError(f"unknown lambda mode {self.lam!r}")
        if not isinstance(self.subproblem, (Exact, Inexact)):
            raise ConfigError(f"unknown subproblem mode {self.subproblem!r}")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class IterRecord:
    iter: int
    elapsed: float
    objective: float
    rel_error: float
    stationarity: float
    delta_n: float
    step_norms: tuple = ()
    alpha_used: tuple = ()


@dataclass
class RunTrace:
    records: list
    final_point: list
    termination: str
    status: str = "ok"
    message: str = ""
    points: list = field(default_factory=list)
    counter: OpCounter | None = None
    skipped: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)


class _OpClock:
    def __init__(self):
        self.counter = OpCounter()

    def running(self):
        return counting(self.counter)

    @property
    def elapsed(self):
        return self.counter.flops / NOMINAL_FLOPS


class _WallClock:
    def __init__(self):
        self.counter = OpCounter()
        self._total = 0.0

    class _Span:
        def __init__(self, clock):
            self.clock = clock

        def __enter__(self):
            self._ctx = counting(self.clock.counter)
            self._ctx.__enter__()
            self._t0 = time.perf_counter()

        def __exit__(self, *exc):
            self.clock._total += time.perf_counter() - self._t0
            return self._ctx.__exit__(*exc)

    def running(self):
        return self._Span(self)

    @property
    def elapsed(self):
        return self._total


def _make_clock(kind):
    return _OpClock() if kind == "ops" else _WallClock()


def _safe_relerr(problem, point):
    try:
        return problem.relative_error(point)
    except CapabilityError:
        return float("nan")


def _copy_point(point):
    return [np.array(b, dtype=float, copy=True) for b in point]


def _check_init(problem, point):
    if len(point) != problem.num_blocks:
        raise DomainError(f"expected {problem.num_blocks} blocks, got {len(point)}")
    for (spec, cspec), x in zip(problem.block_specs, point):
        check_membership(spec, x)
        if cspec is Constraint.NONNEG:
            check_constraint(cspec, spec, x)


def _block_lambda(problem, cfg, point, i):
    if isinstance(cfg.lam, Fixed):
        vals = cfg.lam.values
        if len(vals) != problem.num_blocks:
            raise ConfigError(f"need {problem.num_blocks} lambda values, got {len(vals)}")
        return float(vals[i])
    L = problem.lipschitz(point, i)
    # a vanishing block Lipschitz constant would make the surrogate degenerate
    return cfg.lam.safety * max(L, 1e-12)


def _with_block(point, i, x):
    out = list(point)
    out[i] = x
    return out


def _feasible(cspec, spec, x):
    return cspec is not Constraint.NONNEG or x.min() >= -1e-12


def _move(problem, i, point, V, alpha, factors):
    """Retract ``alpha V`` and restore the constraint; returns ``(x, factors)``."""
    spec, cspec = problem.block_specs[i]
    x = point[i]
    if spec.kind == "fixed_rank":
        y, f = retract_fixed_rank(spec, x, V, alpha, factors)
        if cspec is Constraint.NONNEG_FIXED_RANK:
            z, f2 = project_constraint_factored(cspec, spec, y)
            return z, (f2 if f2 is not None else f)
        return y, f
    y = retract(spec, x, V, alpha)
    if cspec is Constraint.NONNEG:
        # guards against roundoff in x + V on the orthant
        y = np.maximum(y, 0.0)
    return y, None


def line_search(problem, i, point, V, rho, gamma=0.5, alpha0=1.0, factors=None):
    """Largest ``alpha0 * gamma^k`` (``k <= 60``) with sufficient decrease and feasibility.

    Sufficient decrease is ``F(new) - F(old) <= -(rho alpha / 4) ||V||^2`` on the
    full objective with the other blocks fixed. Returns ``(alpha, x, factors)``
    and ``alpha = 0`` (with the old block) when every trial fails.
    """
    if not 0 < gamma < 1 or not 0 < alpha0 <= 1:
        raise ValueError("line search needs gamma in (0, 1) and alpha0 in (0, 1]")
    spec, cspec = problem.block_specs[i]
    f0 = problem.objective(point)
    v2 = V.norm() ** 2
    alpha = alpha0
    for _ in range(MAX_SHRINKS + 1):
        try:
            x, f = _move(problem, i, point, V, alpha, factors)
        except RetractionError:
            x = None
        if x is not None and _feasible(cspec, spec, x):
            f1 = problem.objective(_with_block(point, i, x))
            if f1 - f0 <= -(rho * alpha / 4.0) * v2:
                return alpha, x, f
        alpha *= gamma
    return 0.0, point[i], factors


def _theorem_alpha(step, lam, psi, size):
    Lpsi = step.L_psi if step.L_psi is not None else psi.lipschitz(size)
    return lam / (lam + 2.0 * Lpsi * step.M2)


def _solve_block(s, psi, theta, spec, cspec, factors, mode, n):
    if mode == "exact":
        tol, budget = EXACT_INNER_TOL, EXACT_INNER_BUDGET
    else:
        tol, budget = mode.tol0 / (n + 1) ** 2, mode.budget
    if spec.kind == "euclidean":
        if mode == "exact":
            return solve_exact_separable(s, psi, theta, cspec)
        return solve_inexact(s, psi, theta, cspec, budget=budget, tol=tol)
    if psi.kind == "indicator_nonneg":
        raise ConfigError(f"{spec}: indicator terms are only supported on Euclidean blocks")
    if psi.active and spec.kind != "fixed_rank":
        return solve_tangent_l1(s, psi, theta, spec, factors, budget=budget, tol=tol)
    # on fixed-rank blocks psi enters through the objective only
    return solve_exact_unconstrained(s)


def _perturbation(spec, x, factors, rng, size):
    d = tangent_project(spec, x, rng.standard_normal(spec.shape), factors)
    nd = d.norm()
    return d.scaled(size / nd) if nd > 0 else d


def _diagnostics(problem, point, factors, sols, surr):
    """Objective, relative error and summed stationarity at ``point`` (not clocked)."""
    with counting(None):
        obj = problem.objective(point)
        rel = _safe_relerr(problem, point)
        stat = 0.0
        for i, (spec, cspec) in enumerate(problem.block_specs):
            rg = riemannian_gradient(spec, point[i], problem.euclid_grad(point, i), factors[i])
            if sols is None or sols[i] is None:
                stat += rg.norm()
            else:
                stat += stationarity_value(rg, problem.nonsmooth[i], point[i], sols[i].V,
                                           surr[i], cspec)
    return obj, rel, stat


def _factors_for(problem, point):
    return [point_factors(spec, x) if spec.kind == "fixed_rank" else None
            for (spec, _), x in zip(problem.block_specs, point)]


def tbmm_run(problem, cfg, init):
    """Tangential block MM from ``init``; see the module docstring."""
    _check_init(problem, init)
    point = _copy_point(init)
    factors = _factors_for(problem, point)
    m = problem.num_blocks
    clock = _make_clock(cfg.clock)
    noise_rng = np.random.default_rng(cfg.seed)
    mode = "exact" if isinstance(cfg.subproblem, Exact) else cfg.subproblem
    obj, rel, stat = _diagnostics(problem, point, factors, None, None)
    records = [IterRecord(0, 0.0, obj, rel, stat, 0.0, (0.0,) * m, (0.0,) * m)]
    trace = RunTrace(records, point, "MaxIters", counter=clock.counter)
    if cfg.keep_points:
        trace.points.append(_copy_point(point))
    for n in range(cfg.max_iters):
        sols, surr, alphas, norms, gaps = [None] * m, [None] * m, [], [], []
        noise = cfg.noise / (n + 1) ** 2
        try:
            with clock.running():
                for i, (spec, cspec) in enumerate(problem.block_specs):
                    theta = point[i]
                    psi = problem.nonsmooth[i]
                    rg = riemannian_gradient(spec, theta, problem.euclid_grad(point, i),
                                             factors[i])
                    if noise > 0:
                        rg = rg.plus(_perturbation(spec, theta, factors[i], noise_rng, noise))
                    lam = _block_lambda(problem, cfg, point, i)
                    s = ProxLinearSurrogate(float("nan"), rg, lam)
                    sol = _solve_block(s, psi, theta, spec, cspec, factors[i], mode, n)
                    if isinstance(cfg.step, LineSearch):
                        rho = cfg.step.rho if cfg.step.rho is not None else lam
                        alpha, x, f = line_search(problem, i, point, sol.V, rho, cfg.step.gamma,
                                                  cfg.step.alpha0, factors[i])
                        if alpha == 0.0:
                            trace.skipped.append((n + 1, i))
                            log.warning("line search failed on block %d at iteration %d; "
                                        "block left unchanged", i, n + 1)
                    else:
                        alpha = (cfg.step.alpha if isinstance(cfg.step, Constant)
                                 else _theorem_alpha(cfg.step, lam, psi, spec.size))
                        x, f = _move(problem, i, point, sol.V, alpha, factors[i])
                    point = _with_block(point, i, x)
                    if spec.kind == "fixed_rank":
                        factors[i] = f if f is not None else point_factors(spec, x)
                    sols[i], surr[i] = sol, s
                    alphas.append(alpha)
                    norms.append(sol.V.norm())
                    gaps.append(sol.gap_estimate)
            obj, rel, stat = _diagnostics(problem, point, factors, sols, surr)
        except (RetractionError, DomainError, linalg.NumericalError) as exc:
            trace.status, trace.message, trace.termination = "aborted", str(exc), "Aborted"
            break
        if not np.isfinite(obj):
            trace.status, trace.message, trace.termination = "aborted", "non-finite objective", "Aborted"
            break
        delta = max(gaps) + noise
        records.append(IterRecord(n + 1, clock.elapsed, obj, rel, stat, delta,
                                  tuple(norms), tuple(alphas)))
        trace.final_point = point
        if cfg.keep_points:
            trace.points.append(_copy_point(point))
        if cfg.stationarity_tol is not None and stat <= cfg.stationarity_tol:
            trace.termination = "StationarityTol"
            break
        if cfg.time_limit is not None and clock.elapsed >= cfg.time_limit:
            trace.termination = "TimeLimit"
            break
    return trace


def inexact_rgd_run(problem, cfg, init):
    """Riemannian gradient descent with gradient noise of norm ``cfg.noise / (n + 1)^2``.

    Noise directions are uniformly random unit tangent vectors drawn from
    ``cfg.seed``; with ``noise = 0`` this is exact RGD.
    """
    if problem.num_blocks != 1 or problem.nonsmooth[0].active:
        raise ConfigError("inexact RGD needs a single smooth block")
    return tbmm_run(problem, cfg.replace(subproblem=Exact()), init)


def stiefel_proxgrad_run(problem, cfg, init, lam=None):
    """Proximal gradient on a Stiefel block with an l1 term.

    ``lam`` is the coefficient of ``lam ||V||^2`` in the per-step model, so
    the surrogate's proximal parameter is ``2 lam``. ``lam=None`` uses the
    smooth part's Lipschitz constant.
    """
    if problem.num_blocks != 1 or problem.block_specs[0][0].kind != "stiefel":
        raise ConfigError("Stiefel proximal gradient needs a single Stiefel block")
    if lam is None:
        lam = problem.lipschitz(init, 0)
    sub = cfg.subproblem if isinstance(cfg.subproblem, Inexact) else Inexact(1e-6, 200)
    return tbmm_run(problem, cfg.replace(lam=Fixed((2.0 * lam,)), subproblem=sub), init)


def _plain_record(problem, n, clock, point, factors):
    with counting(None):
        obj = problem.objective(point)
        rel = _safe_relerr(problem, point)
        stat = 0.0
        for i, (spec, _) in enumerate(problem.block_specs):
            stat += riemannian_gradient(spec, point[i], problem.euclid_grad(point, i),
                                        factors[i]).norm()
    return IterRecord(n, clock.elapsed, obj, rel, stat, 0.0)


NIHT_C = 0.01
NIHT_KAPPA = 2.0


def niht_run(problem, max_iters, init, seed=0, clock="ops", safeguard=False):
    """Normalized iterative hard thresholding for matrix recovery.

    Step ``alpha = ||P_U g||^2 / ||A(P_U g)||^2`` with ``P_U`` the projector on
    the current column space; a zero denominator falls back to ``alpha = 1``.

    ``safeguard=True`` adds the step check of the original method: when the
    column space moves, ``alpha`` is divided by ``kappa (1 - c)`` until
    ``alpha <= (1 - c) ||X+ - X||^2 / ||A(X+ - X)||^2``.
    """
    op = getattr(problem, "op", None)
    if op is None:
        raise CapabilityError("NIHT needs a problem exposing a sensing operator")
    spec = problem.block_specs[0][0]
    r = spec.rank
    _check_init(problem, init)
    X = np.array(init[0], dtype=float)
    s = point_factors(spec, X)
    clk = _make_clock(clock)
    records = [_plain_record(problem, 0, clk, [X], [s])]
    trace = RunTrace(records, [X], "MaxIters", counter=clk.counter)
    fallbacks = 0
    for n in range(max_iters):
        try:
            with clk.running():
                g = op.adjoint(op.apply(X) - op.b)
                Pg = s.U @ (s.U.T @ g)
                charge(4 * g.size * r, "niht")
                num = float(np.vdot(Pg, Pg))
                APg = op.apply(Pg)
                den = float(APg @ APg)
                if den > 0:
                    alpha = num / den
                else:
                    alpha = 1.0
                    fallbacks += 1
                    log.info("NIHT: gradient annihilated by the operator; using alpha = 1")
                s_new = linalg.svd_truncated(X - alpha * g, r)
                X_new = s_new.matrix()
                if safeguard:
                    for _ in range(MAX_SHRINKS):
                        overlap = np.linalg.norm(s.U.T @ s_new.U) ** 2
                        if r - overlap <= 1e-12:
                            break
                        D = X_new - X
                        AD = op.apply(D)
                        omega = (1 - NIHT_C) * float(np.vdot(D, D)) / max(float(AD @ AD), 1e-300)
                        if alpha <= omega:
                            break
                        alpha /= NIHT_KAPPA * (1 - NIHT_C)
                        s_new = linalg.svd_truncated(X - alpha * g, r)
                        X_new = s_new.matrix()
                s, X = s_new, X_new
            check_membership(spec, X, s)
        except (DomainError, linalg.NumericalError) as exc:
            trace.status, trace.message, trace.termination = "aborted", str(exc), "Aborted"
            break
        records.append(_plain_record(problem, n + 1, clk, [X], [s]))
        records[-1].alpha_used = (alpha,)
        trace.final_point = [X]
    trace.message = f"alpha fallbacks: {fallbacks}" if fallbacks else trace.message
    return trace


def block_pgd_run(problem, cfg, init):
    """Cyclic ``project(P_M(prox(theta - grad / lam)))`` with full projections."""
    _check_init(problem, init)
    point = _copy_point(init)
    clk = _make_clock(cfg.clock)
    factors = _factors_for(problem, point)
    records = [_plain_record(problem, 0, clk, point, factors)]
    trace = RunTrace(records, point, "MaxIters", counter=clk.counter)
    if cfg.keep_points:
        trace.points.append(_copy_point(point))
    for n in range(cfg.max_iters):
        try:
            with clk.running():
                for i, (spec, cspec) in enumerate(problem.block_specs):
                    lam = _block_lambda(problem, cfg, point, i)
                    g = problem.euclid_grad(point, i)
                    y = point[i] - g / lam
                    psi = problem.nonsmooth[i]
                    if psi.kind == "l1":
                        y = linalg.soft_threshold(y, psi.weight / lam)
                    if psi.kind == "indicator_nonneg":
                        y = np.maximum(y, 0.0)
                    charge(4 * y.size, "pgd_step")
                    f = None
                    if spec.kind == "fixed_rank":
                        f = linalg.svd_truncated(y, spec.rank)
                        charge(0, f"svd_full:{spec.shape[0]}x{spec.shape[1]}")
                        y = f.matrix()
                        y, f2 = project_constraint_factored(cspec, spec, y)
                        f = f2 if f2 is not None else f
                        check_membership(spec, y, f)
                    elif spec.kind in ("sphere", "stiefel"):
                        y = project_to_manifold(spec, y)
                    elif cspec is Constraint.NONNEG:
                        y = np.maximum(y, 0.0)
                    point = _with_block(point, i, y)
                    factors[i] = f
        except (RetractionError, DomainError, linalg.NumericalError) as exc:
            trace.status, trace.message, trace.termination = "aborted", str(exc), "Aborted"
            break
        rec = _plain_record(problem, n + 1, clk, point, factors)
        if not np.isfinite(rec.objective):
            trace.status, trace.message, trace.termination = "aborted", "non-finite objective", "Aborted"
            break
        records.append(rec)
        trace.final_point = point
        if cfg.keep_points:
            trace.points.append(_copy_point(point))
        if cfg.time_limit is not None and clk.elapsed >= cfg.time_limit:
            trace.termination = "TimeLimit"
            break
    return trace


def min_stationarity_curve(trace_or_values):
    """Running minimum of stationarity and its log-log slope over the second half.

    Accepts a :class:`RunTrace` (record 0, the initial point, is skipped) or
    a plain sequence indexed from ``n = 1``.
    """
    if isinstance(trace_or_values, RunTrace):
        vals = trace_or_values.column("stationarity")[1:]
    else:
        vals = np.asarray(trace_or_values, dtype=float)
    if vals.size < 10:
        raise ValueError("need at least 10 stationarity values")
    env = np.minimum.accumulate(vals)
    n = np.arange(1, env.size + 1)
    half = env.size // 2
    x = np.log(n[half:])
    y = np.log(np.maximum(env[half:], np.finfo(float).tiny))
    slope = float(np.polyfit(x, y, 1)[0])
    return env, slope

"""Prox-linear tangential surrogates and their subproblem solvers.

At a block iterate ``theta`` with Riemannian gradient ``g`` the surrogate is

    G(eta) = f(theta) + <g, eta> + (lam / 2) ||eta||^2 + psi(theta + eta)

over the tangent space (intersected with the shifted orthant
``{eta : theta + eta >= 0}`` on nonnegative Euclidean blocks). On a
Euclidean block both ``psi`` and the constraint are separable, so the
minimizer is one soft-threshold-and-clip. On curved blocks carrying an
l1 term the problem couples through the tangent projection and is solved
iteratively on its box-constrained dual, which also certifies the gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from ._ops import charge
from .manifolds import Constraint, TangentVector, tangent_project


@dataclass(frozen=True)
class NonsmoothTerm:
    """Convex block term ``psi``: ``none``, ``l1`` (``weight * ||x||_1``) or ``indicator_nonneg``."""

    kind: str = "none"
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "l1", "indicator_nonneg"):
            raise ValueError(f"unknown nonsmooth term {self.kind!r}")
        if self.weight < 0:
            raise ValueError("l1 weight must be nonnegative")

    @property
    def active(self):
        return self.kind == "indicator_nonneg" or (self.kind == "l1" and self.weight > 0)

    def value(self, x):
        if self.kind == "l1":
            return self.weight * float(np.abs(x).sum())
        if self.kind == "indicator_nonneg":
            return 0.0 if np.min(x) >= -1e-12 else np.inf
        return 0.0

    def lipschitz(self, size):
        """Lipschitz constant of ``psi`` w.r.t. the Frobenius norm on ``size`` entries."""
        return self.weight * np.sqrt(size) if self.kind == "l1" else 0.0


NONE = NonsmoothTerm()


def l1(weight):
    return NonsmoothTerm("l1", weight)


@dataclass(frozen=True)
class ProxLinearSurrogate:
    base_value: float
    rgrad: TangentVector
    lam: float
    lipschitz: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"proximal parameter must be positive, got {self.lam}")
        if self.lipschitz is not None and self.lam < self.lipschitz:
            raise ValueError(f"lam = {self.lam} is below the Lipschitz constant "
                             f"{self.lipschitz}; the surrogate would not majorize")


@dataclass(frozen=True)
class SubproblemResult:
    V: TangentVector
    gap_estimate: float
    inner_iters: int
    residual: float
    gap_history: tuple = ()


def surrogate_value(s, psi, theta, eta):
    amb = eta.ambient()
    return (s.base_value + s.rgrad.inner(eta) + 0.5 * s.lam * eta.norm() ** 2
            + psi.value(theta + amb))


def solve_exact_unconstrained(s):
    """``V = -g / lam``: the smooth, unconstrained minimizer."""
    return SubproblemResult(s.rgrad.scaled(-1.0 / s.lam), 0.0, 0, 0.0)


def _separable_prox(y, psi, lam, constraint):
    if psi.kind == "l1":
        y = linalg.soft_threshold(y, psi.weight / lam)
    if constraint is Constraint.NONNEG or psi.kind == "indicator_nonneg":
        y = np.maximum(y, 0.0)
    charge(3 * y.size, "prox")
    return y


def solve_exact_separable(s, psi, theta, constraint=Constraint.WHOLE):
    """Closed-form minimizer on a Euclidean block.

    ``z = clip(soft(theta - g / lam, w / lam))`` minimizes
    ``(lam / 2) ||z - (theta - g / lam)||^2 + w ||z||_1`` over ``z >= 0``
    entry by entry; shrink-then-clip is exact because both maps are
    monotone and separable.
    """
    z = _separable_prox(theta - s.rgrad.ambient() / s.lam, psi, s.lam, constraint)
    return SubproblemResult(TangentVector(theta, ambient_=z - theta), 0.0, 0, 0.0)


def solve_inexact(s, psi, theta, constraint=Constraint.WHOLE, budget=10, tol=0.0):
    """Proximal-gradient iterations on ``G`` for a Euclidean block.

    Starts at ``eta = 0`` and stops when ``lam * ||eta_k - eta_{k+1}|| <= tol``
    or after ``budget`` steps. The returned ``gap_estimate`` is
    ``r^2 / (2 lam)`` for the residual ``r`` of the final step.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    g = s.rgrad.ambient()
    lam = s.lam
    eta = np.zeros_like(theta)
    history = []
    r = 0.0
    k = 0
    while k < budget:
        grad_q = g + lam * eta
        nxt = _separable_prox(theta + eta - grad_q / lam, psi, lam, constraint) - theta
        r = lam * float(np.linalg.norm(nxt - eta))
        eta = nxt
        k += 1
        history.append(r * r / (2 * lam))
        if r <= tol:
            break
    return SubproblemResult(TangentVector(theta, ambient_=eta), history[-1], k, r,
                            tuple(history))


def solve_tangent_l1(s, psi, theta, spec, factors=None, budget=200, tol=0.0):
    """Minimize ``<g, eta> + (lam/2)||eta||^2 + w ||theta + eta||_1`` over ``T_theta M``.

    Accelerated projected gradient on the dual

        max_{|u| <= w}  <u, theta> + <P u, c> - ||P u||^2 / (2 lam) - (lam/2)||c||^2,

    with ``c = -g / lam`` and ``P`` the tangent projection; the primal
    point for a dual ``u`` is ``c - P u / lam``. The duality gap of the best
    primal/dual pair bounds ``G(V) - inf G``.
    """
    lam = s.lam
    w = psi.weight
    c = -s.rgrad.ambient() / lam

    def proj(u):
        return tangent_project(spec, theta, u, factors).ambient()

    def primal(eta):
        return float(-lam * np.vdot(c, eta) + 0.5 * lam * np.vdot(eta, eta)
                     + w * np.abs(theta + eta).sum())

    const = -0.5 * lam * float(np.vdot(c, c))
    u = np.clip(w * np.sign(theta + c), -w, w)
    y, t = u.copy(), 1.0
    best_p, best_eta, best_d = np.inf, c, -np.inf
    gap = np.inf
    history = []
    k = 0
    size = theta.size
    while k < budget:
        Pu = proj(u)
        eta = c - Pu / lam
        pv = primal(eta)
        dv = float(np.vdot(u, theta) + np.vdot(Pu, c) - np.vdot(Pu, Pu) / (2 * lam)) + const
        charge(12 * size, "dual_l1")
        if pv < best_p:
            best_p, best_eta = pv, eta
        best_d = max(best_d, dv)
        gap = max(best_p - best_d, 0.0)
        history.append(gap)
        k += 1
        if gap <= tol * tol / (2 * lam):
            break
        Py = proj(y)
        u_next = np.clip(y + lam * (theta + c - Py / lam), -w, w)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = u_next + ((t - 1) / t_next) * (u_next - u)
        u, t = u_next, t_next
        charge(8 * size, "dual_l1")
    V = tangent_project(spec, theta, best_eta, factors)
    return SubproblemResult(V, gap, k, float(np.sqrt(2 * lam * gap)), tuple(history))


def stationarity_value(rgrad_full, psi, theta, V, s, constraint=Constraint.WHOLE):
    """First-order residual ``||grad_i phi + Proj_T xi||`` at the new iterate.

    ``xi`` is the subgradient certified by the subproblem,
    ``Proj_T xi = -g - lam V`` (it makes ``V`` optimal for the surrogate).
    With no nonsmooth term and no constraint ``xi = 0`` and the value is
    the plain Riemannian gradient norm.
    """
    if not psi.active and constraint is Constraint.WHOLE:
        return rgrad_full.norm()
    cert = s.rgrad.plus(V.scaled(s.lam))
    return float(np.linalg.norm(rgrad_full.ambient() - cert.ambient()))

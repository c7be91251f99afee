"""Embedded-submanifold geometry used by the block solvers.

Every manifold lives in a Euclidean space of arrays with the Frobenius
inner product. Retractions are metric projections of ``x + alpha * v``:

* Euclidean - identity translation,
* Sphere - normalization,
* Stiefel - polar factor ``U V^T`` of the thin SVD,
* FixedRank - rank-``r`` truncated SVD. For factored tangent vectors this
  only needs the SVD of a ``2r x 2r`` core matrix.

A fixed-rank point is carried as its ambient matrix. Callers that already
know its rank-``r`` factors pass them as ``factors`` so they are not
recomputed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from ._ops import charge
from .errors import DomainError, RankCollapseError, RetractionError
from .linalg import ThinSvd

RANK_TOL = 1e-10
MEMBERSHIP_TOL = 1e-8
NONNEG_TOL = 1e-12
CONSTRAINT_ROUNDS = 5


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    shape: tuple
    rank: int | None = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "sphere", "stiefel", "fixed_rank"):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if any(d < 1 for d in self.shape):
            raise ValueError(f"dimensions must be positive, got {self.shape}")
        if self.kind == "stiefel":
            n, k = self.shape
            if not n >= k >= 1:
                raise ValueError(f"Stiefel({n},{k}) needs n >= k >= 1")
        if self.kind == "fixed_rank":
            m, n = self.shape
            if self.rank is None or not 1 <= self.rank <= min(m, n):
                raise ValueError(f"FixedRank({m},{n},{self.rank}) needs 1 <= r <= min(m, n)")

    @property
    def size(self):
        return int(np.prod(self.shape))

    def __str__(self):
        dims = ",".join(str(d) for d in self.shape)
        if self.kind == "fixed_rank":
            return f"FixedRank({dims},{self.rank})"
        return f"{self.kind.capitalize()}({dims})"


def euclidean(*shape):
    return ManifoldSpec("euclidean", tuple(shape))


def sphere(n):
    return ManifoldSpec("sphere", (n,))


def stiefel(n, k):
    return ManifoldSpec("stiefel", (n, k))


def fixed_rank(m, n, r):
    return ManifoldSpec("fixed_rank", (m, n), r)


class Constraint(enum.Enum):
    WHOLE = "whole"
    NONNEG = "nonneg"
    NONNEG_FIXED_RANK = "nonneg_fixed_rank"


def check_constraint_spec(cspec, spec):
    if cspec is Constraint.NONNEG and spec.kind != "euclidean":
        raise ValueError("the nonnegative orthant constraint attaches only to Euclidean blocks")
    if cspec is Constraint.NONNEG_FIXED_RANK and spec.kind != "fixed_rank":
        raise ValueError("nonnegative fixed-rank constraint attaches only to FixedRank blocks")


@dataclass(frozen=True)
class TangentVector:
    """Tangent vector at ``base``.

    Either ``ambient`` is set, or (fixed-rank only) the factored triple
    ``(M, Up, Vp)`` relative to ``factors = (U, sigma, V)`` of the base:
    ``v = U M V^T + Up V^T + U Vp^T`` with ``U^T Up = 0`` and ``V^T Vp = 0``.
    """

    base: np.ndarray
    ambient_: np.ndarray | None = None
    M: np.ndarray | None = None
    Up: np.ndarray | None = None
    Vp: np.ndarray | None = None
    factors: ThinSvd | None = field(default=None, repr=False)

    @property
    def is_factored(self):
        return self.ambient_ is None

    def ambient(self):
        if self.ambient_ is not None:
            return self.ambient_
        U, V = self.factors.U, self.factors.V
        return U @ (self.M @ V.T + self.Vp.T) + self.Up @ V.T

    def norm(self):
        if self.ambient_ is not None:
            return float(np.linalg.norm(self.ambient_))
        return float(np.sqrt(np.sum(self.M**2) + np.sum(self.Up**2) + np.sum(self.Vp**2)))

    def inner(self, other):
        if self.is_factored and other.is_factored:
            return float(np.sum(self.M * other.M) + np.sum(self.Up * other.Up)
                         + np.sum(self.Vp * other.Vp))
        return float(np.vdot(self.ambient(), other.ambient()))

    def scaled(self, c):
        if self.ambient_ is not None:
            return TangentVector(self.base, ambient_=c * self.ambient_)
        return TangentVector(self.base, M=c * self.M, Up=c * self.Up, Vp=c * self.Vp,
                             factors=self.factors)

    def plus(self, other):
        if self.is_factored and other.is_factored:
            return TangentVector(self.base, M=self.M + other.M, Up=self.Up + other.Up,
                                 Vp=self.Vp + other.Vp, factors=self.factors)
        return TangentVector(self.base, ambient_=self.ambient() + other.ambient())


def zero_tangent(spec, x, factors=None):
    if spec.kind == "fixed_rank":
        factors = factors if factors is not None else point_factors(spec, x)
        m, n = spec.shape
        r = spec.rank
        return TangentVector(x, M=np.zeros((r, r)), Up=np.zeros((m, r)), Vp=np.zeros((n, r)),
                             factors=factors)
    return TangentVector(x, ambient_=np.zeros(spec.shape))


def _check_shape(spec, x):
    if tuple(np.shape(x)) != spec.shape:
        raise DomainError(f"{spec}: expected shape {spec.shape}, got {np.shape(x)}")


def point_factors(spec, x):
    """Rank-``r`` factors of a fixed-rank point, validating membership."""
    _check_shape(spec, x)
    s = linalg.svd_thin(x)
    r = spec.rank
    if s.sigma[0] == 0 or s.sigma[r - 1] <= RANK_TOL * s.sigma[0]:
        raise DomainError(f"{spec}: sigma_r below rank tolerance")
    if r < s.rank and s.sigma[r] > MEMBERSHIP_TOL * s.sigma[0]:
        raise DomainError(f"{spec}: rank exceeds {r} (sigma_(r+1)/sigma_1 = "
                          f"{s.sigma[r] / s.sigma[0]:.3g})")
    return ThinSvd(s.U[:, :r].copy(), s.sigma[:r].copy(), s.V[:, :r].copy())


def check_membership(spec, x, factors=None):
    """Raise :class:`DomainError` when ``x`` is off the manifold (tolerance 1e-8)."""
    _check_shape(spec, x)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{spec}: non-finite entries")
    if spec.kind == "sphere":
        if abs(np.linalg.norm(x) - 1.0) > MEMBERSHIP_TOL:
            raise DomainError(f"{spec}: point is not unit norm")
    elif spec.kind == "stiefel":
        k = spec.shape[1]
        if np.abs(x.T @ x - np.eye(k)).max() > MEMBERSHIP_TOL:
            raise DomainError(f"{spec}: columns are not orthonormal")
    elif spec.kind == "fixed_rank" and factors is None:
        point_factors(spec, x)


def check_constraint(cspec, spec, x, tol=NONNEG_TOL):
    if cspec is Constraint.NONNEG and x.min() < -tol:
        raise DomainError(f"{spec}: negative entry {x.min():.3g} in a nonnegative block")


def tangent_project(spec, x, u, factors=None):
    """Orthogonal projection of the ambient array ``u`` onto ``T_x M``."""
    u = np.asarray(u, dtype=float)
    if u.shape != spec.shape:
        raise ValueError(f"{spec}: ambient direction has shape {u.shape}")
    kind = spec.kind
    if kind == "euclidean":
        return TangentVector(x, ambient_=u.copy())
    if kind == "sphere":
        check_membership(spec, x)
        charge(4 * spec.size, "tangent_project")
        return TangentVector(x, ambient_=u - x * np.vdot(x, u))
    if kind == "stiefel":
        check_membership(spec, x)
        n, k = spec.shape
        xtu = x.T @ u
        charge(4 * n * k * k, "tangent_project")
        return TangentVector(x, ambient_=u - x @ (0.5 * (xtu + xtu.T)))
    if factors is None:
        factors = point_factors(spec, x)
    U, V = factors.U, factors.V
    m, n = spec.shape
    r = spec.rank
    uV = u @ V
    utU = u.T @ U
    M = U.T @ uV
    charge(4 * m * n * r + 2 * m * r * r + 4 * (m + n) * r * r, "tangent_project")
    return TangentVector(x, M=M, Up=uV - U @ M, Vp=utU - V @ M.T, factors=factors)


def riemannian_gradient(spec, x, euclid_grad, factors=None):
    """Riemannian gradient for the induced metric: the tangent projection."""
    return tangent_project(spec, x, euclid_grad, factors)


def _complement_basis(U, P):
    """Orthonormal ``Q`` with ``Q^T U = 0`` and ``range(P) ⊂ range([U Q])``."""
    m, r = U.shape
    Z = np.hstack([U, P])
    Qf, _ = np.linalg.qr(Z)
    charge(2 * m * (2 * r) ** 2, "qr")
    return Qf[:, r:]


def retract_fixed_rank(spec, x, v, alpha, factors=None):
    """Rank-``r`` metric projection of ``x + alpha v``; returns ``(matrix, factors)``.

    A factored ``v`` takes the small-core path: with ``[U Qu]`` and
    ``[V Qv]`` orthonormal, ``x + alpha v = [U Qu] K [V Qv]^T`` and only the
    ``(r + ku) x (r + kv)`` core ``K`` (at most ``2r x 2r``) is decomposed.
    """
    r = spec.rank
    if alpha == 0:
        f = factors if factors is not None else point_factors(spec, x)
        return x.copy(), f
    if not v.is_factored:
        s = linalg.svd_truncated(x + alpha * v.ambient(), r)
        _check_rank(s)
        return s.matrix(), s
    f = v.factors if v.factors is not None else (factors or point_factors(spec, x))
    U, s, V = f.U, f.sigma, f.V
    m, n = spec.shape
    Qu = _complement_basis(U, v.Up)
    Qv = _complement_basis(V, v.Vp)
    Au, Ru = U.T @ v.Up, Qu.T @ v.Up
    Av, Rv = V.T @ v.Vp, Qv.T @ v.Vp
    ku, kv = Qu.shape[1], Qv.shape[1]
    K = np.zeros((r + ku, r + kv))
    K[:r, :r] = np.diag(s) + alpha * (v.M + Au + Av.T)
    K[:r, r:] = alpha * Rv.T
    K[r:, :r] = alpha * Ru
    charge(4 * (m + n) * r * (ku + kv), "retract_core")
    ks = linalg.svd_thin(K)
    Unew = np.hstack([U, Qu]) @ ks.U[:, :r]
    Vnew = np.hstack([V, Qv]) @ ks.V[:, :r]
    charge(2 * (m * (r + ku) + n * (r + kv)) * r, "retract_core")
    out = ThinSvd(Unew, ks.sigma[:r].copy(), Vnew)
    _check_rank(out)
    X = out.matrix()
    charge(2 * m * n * r, "retract_core")
    return X, out


def _check_rank(s):
    if s.sigma[0] == 0 or s.sigma[-1] <= RANK_TOL * s.sigma[0]:
        raise RankCollapseError(
            f"retraction lost rank: sigma_r/sigma_1 = "
            f"{(s.sigma[-1] / s.sigma[0]) if s.sigma[0] else 0.0:.3g}")


def retract(spec, x, v, alpha=1.0, factors=None):
    """Metric-projection retraction ``Rtr_x(alpha v)``; ``alpha = 0`` returns ``x``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0:
        return np.array(x, dtype=float, copy=True)
    kind = spec.kind
    if kind == "fixed_rank":
        return retract_fixed_rank(spec, x, v, alpha, factors)[0]
    y = x + alpha * v.ambient()
    charge(2 * spec.size, "retract")
    if kind == "euclidean":
        return y
    if kind == "sphere":
        ny = np.linalg.norm(y)
        if ny == 0:
            raise RetractionError("sphere retraction of the zero vector")
        return y / ny
    s = linalg.svd_thin(y)
    if s.sigma[-1] <= 1e-12 * s.sigma[0]:
        raise RetractionError("Stiefel retraction: x + alpha v is rank deficient")
    charge(2 * spec.size * spec.shape[1], "retract")
    return s.U @ s.V.T


def project_to_manifold(spec, y):
    """Metric projection of an ambient array onto the manifold."""
    y = np.asarray(y, dtype=float)
    kind = spec.kind
    if kind == "euclidean":
        return y.copy()
    if kind == "sphere":
        return y / np.linalg.norm(y)
    if kind == "stiefel":
        s = linalg.svd_thin(y)
        return s.U @ s.V.T
    s = linalg.svd_truncated(y, spec.rank)
    _check_rank(s)
    return s.matrix()


def project_constraint_factored(cspec, spec, x, rounds=CONSTRAINT_ROUNDS):
    """Constraint projection; also returns rank-``r`` factors when it computed them."""
    if cspec is Constraint.WHOLE:
        return x, None
    if cspec is Constraint.NONNEG:
        charge(spec.size, "clip")
        return np.maximum(x, 0.0), None
    if x.min() >= -NONNEG_TOL:
        return x, None
    y, s = x, None
    for _ in range(rounds):
        charge(spec.size, "clip")
        s = linalg.svd_truncated(np.maximum(y, 0.0), spec.rank)
        _check_rank(s)
        y = s.matrix()
        if y.min() >= -NONNEG_TOL:
            break
    return y, s


def project_constraint(cspec, spec, x, rounds=CONSTRAINT_ROUNDS):
    """Project onto the block constraint set.

    ``NONNEG_FIXED_RANK`` alternates clipping at zero with rank-``r``
    truncation for at most ``rounds`` rounds and returns the last rank-``r``
    iterate, which is only approximately nonnegative.
    """
    return project_constraint_factored(cspec, spec, x, rounds)[0]


@dataclass(frozen=True)
class RatioTable:
    ts: np.ndarray
    ratios: np.ndarray
    passed: bool


ORDER_CHECK_TS = 10.0 ** np.array([-1.0, -1.5, -2.0, -2.5, -3.0])


def retraction_order_check(spec, x, v, factors=None):
    """Ratios ``||Rtr_x(t v) - (x + t v)|| / t^2`` for a unit tangent ``v``.

    Bounded ratios (max/min at most 10) indicate second-order agreement of
    the retraction with the straight line.
    """
    ratios = []
    va = v.ambient()
    for t in ORDER_CHECK_TS:
        y = retract(spec, x, v.scaled(1.0), t, factors)
        ratios.append(np.linalg.norm(y - (x + t * va)) / t**2)
    ratios = np.array(ratios)
    hi, lo = ratios.max(), ratios.min()
    passed = bool(hi == 0 or (lo > 0 and hi / lo <= 10))
    return RatioTable(ORDER_CHECK_TS.copy(), ratios, passed)


def random_point(spec, rng, nonneg=False):
    """Seeded random point; ``nonneg`` draws uniform [0, 1] factors instead of Gaussian."""
    draw = rng.uniform if nonneg else rng.standard_normal
    kind = spec.kind
    if kind == "euclidean":
        return draw(size=spec.shape)
    if kind == "sphere":
        x = draw(size=spec.shape)
        return x / np.linalg.norm(x)
    if kind == "stiefel":
        q, _ = linalg.qr_thin(rng.standard_normal(spec.shape))
        return q
    m, n = spec.shape
    return draw(size=(m, spec.rank)) @ draw(size=(spec.rank, n))


def random_tangent(spec, x, rng, factors=None, unit=True):
    v = tangent_project(spec, x, rng.standard_normal(spec.shape), factors)
    return v.scaled(1.0 / v.norm()) if unit else v

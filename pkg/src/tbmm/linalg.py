"""Dense kernels: thin/truncated SVD, thin QR, soft-thresholding and
power iteration for operator norms.

The SVD is a one-sided (Hestenes) Jacobi method with a round-robin pair
ordering, so each step rotates ``n/2`` disjoint column pairs at once.
Inputs are first reduced by a Householder QR ``A = QR`` and the iteration
runs on ``R.T``, whose columns start out closer to orthogonal.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from ._ops import charge
from .errors import NumericalError, RankError

MAX_SWEEPS = 30
JACOBI_TOL = 1e-12
QR_RANK_TOL = 1e-12

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ThinSvd:
    """``A = U @ diag(sigma) @ V.T`` with orthonormal ``U`` (m x k) and ``V`` (n x k)."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.sigma.size

    def matrix(self):
        return (self.U * self.sigma) @ self.V.T


def _check_matrix(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if min(A.shape) < 1:
        raise ValueError(f"matrix must be non-empty, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


@functools.lru_cache(maxsize=64)
def _round_robin(n):
    """Pairings of ``range(n)`` (``n`` even) covering every pair once per sweep."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        ps = np.array(players[: n // 2])
        qs = np.array(players[n - 1 : n // 2 - 1 : -1])
        rounds.append((ps, qs))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_orthogonalize(W, V):
    """Rotate the columns of ``W`` (and ``V`` alongside) until pairwise orthogonal.

    Returns the number of sweeps used and the rotated ``W`` and ``V``.
    """
    length, n = W.shape
    if n == 1:
        return 0, W, V
    fro2 = float(np.sum(W * W))
    # columns this small carry nothing above roundoff
    floor = (1e-2 * _EPS) ** 2 * fro2
    odd = n % 2
    if odd:
        # a zero dummy column is never rotated, so it pads the schedule harmlessly
        W = np.hstack([W, np.zeros((length, 1))])
        V = np.pad(V, ((0, 1), (0, 1)))
    schedule = _round_robin(n + odd)
    # W and V rotate together, so keep them stacked in one array
    M = np.vstack([W, V])
    Wv = M[:length]
    work = 0
    for sweep in range(MAX_SWEEPS):
        rotated = False
        for ps, qs in schedule:
            G = Wv.T @ Wv
            a, b, g = G[ps, ps], G[qs, qs], G[ps, qs]
            work += 6 * length * ps.size
            live = (np.abs(g) > JACOBI_TOL * np.sqrt(a * b)) & (np.minimum(a, b) > floor)
            if not live.any():
                continue
            rotated = True
            p, q = ps[live], qs[live]
            a, b, g = a[live], b[live], g[live]
            zeta = (b - a) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            mp, mq = M[:, p], M[:, q]
            M[:, p] = c * mp - s * mq
            M[:, q] = s * mp + c * mq
            work += (6 * length + 6 * V.shape[0]) * p.size
        if not rotated:
            charge(work, "jacobi")
            return sweep, M[:length, :n], M[length:, :n][:n]
    charge(work, "jacobi")
    raise NumericalError(f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps")


def _complete_columns(Q, good):
    """Fill the columns of ``Q`` not flagged ``good`` with an orthonormal completion.

    Each new column is the coordinate vector with the largest residual
    against the basis so far; those residuals square-sum to the missing
    dimension, so the pick is never degenerate.
    """
    length = Q.shape[0]
    B = Q[:, good]
    out = Q.copy()
    for j in np.flatnonzero(~good):
        R = np.eye(length)
        for _ in range(2):
            R -= B @ (B.T @ R)
        k = int(np.argmax(np.einsum("ij,ij->j", R, R)))
        v = R[:, k] / np.linalg.norm(R[:, k])
        B = np.column_stack([B, v])
        out[:, j] = v
    return out


def _fix_signs(U, V):
    idx = np.argmax(np.abs(U), axis=0)
    flip = U[idx, np.arange(U.shape[1])] < 0
    U[:, flip] *= -1.0
    V[:, flip] *= -1.0
    return U, V


def svd_thin(A):
    """Thin SVD with ``k = min(rows, cols)``.

    Singular values come out nonincreasing; ties keep the order of the
    Jacobi sweep (a stable sort). Each column of ``U`` has its
    largest-magnitude entry made nonnegative.

    Raises
    ------
    NumericalError
        If the Jacobi iteration exceeds ``MAX_SWEEPS`` sweeps.
    """
    A = _check_matrix(A)
    m, n = A.shape
    if m < n:
        t = svd_thin(A.T)
        U, V = _fix_signs(t.V.copy(), t.U.copy())
        return ThinSvd(U, t.sigma, V)
    Q, R = np.linalg.qr(A)
    charge(2 * m * n * n, "qr")
    # R.T @ J = W with orthogonal columns gives A = (Q J) diag(sigma) (W / sigma).T
    _, W, J = _jacobi_orthogonalize(R.T.copy(), np.eye(n))
    sigma = np.sqrt(np.einsum("ij,ij->j", W, W))
    order = np.argsort(-sigma, kind="stable")
    sigma, W, J = sigma[order], W[:, order], J[:, order]
    # columns this small are rounding noise; normalizing them would break orthonormality
    good = sigma > n * _EPS * (sigma[0] if n else 0.0)
    Vb = np.zeros_like(W)
    Vb[:, good] = W[:, good] / sigma[good]
    if not good.all():
        Vb = _complete_columns(Vb, good)
    U = Q @ J
    charge(2 * m * n * n, "svd_backmul")
    U, V = _fix_signs(U, Vb)
    return ThinSvd(U, sigma, V)


def svd_truncated(A, r):
    """Leading ``r`` singular triplets: the Eckart-Young best rank-``r`` factors.

    When ``sigma_r == sigma_{r+1}`` the minimizer is not unique; the first
    ``r`` triplets in sorted order are kept.
    """
    A = _check_matrix(A)
    if not (1 <= r <= min(A.shape)):
        raise ValueError(f"rank {r} out of range for shape {A.shape}")
    s = svd_thin(A)
    return ThinSvd(s.U[:, :r].copy(), s.sigma[:r].copy(), s.V[:, :r].copy())


def qr_thin(A):
    """Thin QR with nonnegative diagonal in ``R``.

    Raises
    ------
    RankError
        If some ``|R_jj|`` falls below ``QR_RANK_TOL`` times the largest.
    """
    A = _check_matrix(A)
    m, n = A.shape
    if m < n:
        raise ValueError(f"qr_thin needs rows >= cols, got shape {A.shape}")
    Q, R = np.linalg.qr(A)
    charge(2 * m * n * n, "qr")
    d = np.diag(R)
    sgn = np.where(d < 0, -1.0, 1.0)
    Q = Q * sgn
    R = R * sgn[:, None]
    d = np.abs(d)
    if d.max() == 0 or d.min() <= QR_RANK_TOL * d.max():
        raise RankError("qr_thin: input is numerically rank deficient")
    return Q, R


def orthonormal_basis(A):
    """Orthonormal ``Q`` with ``Q @ R = A``; tolerates rank-deficient ``A``."""
    Q, R = np.linalg.qr(A)
    charge(2 * A.shape[0] * A.shape[1] ** 2, "qr")
    return Q, R


def soft_threshold(x, tau):
    """Elementwise ``sign(x) * max(|x| - tau, 0)``, the prox of ``tau * |.|``."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def spectral_norm_sq(apply, adjoint, dim_in, iters=100, seed=0):
    """Power-iteration estimate of the largest eigenvalue of ``A* A``.

    The returned Rayleigh quotient is nondecreasing in ``iters`` and never
    exceeds the true value.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim_in)
    x /= np.linalg.norm(x)
    for _ in range(iters):
        y = adjoint(apply(x))
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
    ax = apply(x)
    return float(np.vdot(ax, ax))

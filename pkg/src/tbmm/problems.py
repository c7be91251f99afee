"""Benchmark problem families: low-rank matrix recovery, nonnegative CP
decomposition (NCPD), regularized NMF and an l1-penalized sparse PCA on
the Stiefel manifold.

A problem is a smooth coupling term ``phi`` plus per-block convex terms
``psi_i``, over a product of block manifolds with optional constraints.
All data are drawn from seeded generators at construction and never
mutated afterwards.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import linalg
from ._ops import charge
from .errors import CapabilityError
from .manifolds import (Constraint, check_constraint_spec, euclidean, fixed_rank,
                        project_constraint, project_to_manifold, stiefel)
from .surrogates import NONE, l1


class ProblemInstance:
    """Base class. Subclasses implement :meth:`smooth` and :meth:`euclid_grad`."""

    name = "problem"

    def __init__(self, block_specs, nonsmooth=None, ground_truth=None):
        self.block_specs = [(spec, cspec) for spec, cspec in block_specs]
        for spec, cspec in self.block_specs:
            check_constraint_spec(cspec, spec)
        self.nonsmooth = list(nonsmooth) if nonsmooth is not None else [NONE] * len(block_specs)
        if len(self.nonsmooth) != len(self.block_specs):
            raise ValueError("one nonsmooth term per block is required")
        self.ground_truth = ground_truth

    @property
    def num_blocks(self):
        return len(self.block_specs)

    def smooth(self, blocks):
        raise NotImplementedError

    def euclid_grad(self, blocks, i):
        raise NotImplementedError

    def lipschitz(self, blocks, i):
        """Lipschitz constant of the block-``i`` gradient with the other blocks fixed."""
        raise CapabilityError(f"{self.name} does not provide block Lipschitz constants")

    def nonsmooth_value(self, blocks):
        return sum(psi.value(b) for psi, b in zip(self.nonsmooth, blocks))

    def objective(self, blocks):
        return self.smooth(blocks) + self.nonsmooth_value(blocks)

    def relative_error(self, blocks):
        raise CapabilityError(f"{self.name} has no ground truth")

    def initial_point(self, rng):
        """Seeded random point (uniform when nonnegative) projected onto each block's set."""
        out = []
        for spec, cspec in self.block_specs:
            nonneg = cspec is not Constraint.WHOLE
            draw = rng.uniform if nonneg else rng.standard_normal
            x = project_to_manifold(spec, draw(size=spec.shape))
            out.append(project_constraint(cspec, spec, x))
        return out


class CallbackProblem(ProblemInstance):
    """Problem assembled from user callbacks (used by tests and small studies)."""

    def __init__(self, block_specs, smooth, grad, nonsmooth=None, lipschitz=None,
                 relative_error=None, name="callback"):
        super().__init__(block_specs, nonsmooth)
        self._smooth, self._grad = smooth, grad
        self._lipschitz, self._relerr = lipschitz, relative_error
        self.name = name

    def smooth(self, blocks):
        return float(self._smooth(blocks))

    def euclid_grad(self, blocks, i):
        return np.asarray(self._grad(blocks, i), dtype=float)

    def lipschitz(self, blocks, i):
        if self._lipschitz is None:
            return super().lipschitz(blocks, i)
        L = self._lipschitz
        return float(L(blocks, i) if callable(L) else L[i])

    def relative_error(self, blocks):
        if self._relerr is None:
            return super().relative_error(blocks)
        return float(self._relerr(blocks))


class SensingOperator:
    """``A(X)_k = <A_k, X>`` for a stack of ``p`` sensing matrices."""

    def __init__(self, matrices, b=None):
        self.matrices = np.asarray(matrices, dtype=float)
        p, m, n = self.matrices.shape
        self.shape = (m, n)
        self._dense = self.matrices.reshape(p, m * n)
        self.b = None if b is None else np.asarray(b, dtype=float)

    @property
    def p(self):
        return self._dense.shape[0]

    def apply(self, X):
        charge(2 * self._dense.size, "sensing")
        return self._dense @ np.ravel(X)

    def adjoint(self, y):
        charge(2 * self._dense.size, "sensing")
        return (self._dense.T @ y).reshape(self.shape)

    def dense(self):
        return self._dense.copy()


class MatrixRecovery(ProblemInstance):
    """``f(X) = 0.5 ||A(X) - b||^2`` over rank-``r`` matrices."""

    name = "matrec"

    def __init__(self, op, rank, ground_truth, lipschitz_iters=500, seed=0):
        m, n = op.shape
        super().__init__([(fixed_rank(m, n, rank), Constraint.WHOLE)],
                         ground_truth=ground_truth)
        self.op = op
        self.rank = rank
        self.L = linalg.spectral_norm_sq(op.apply, op.adjoint, op.shape,
                                         iters=lipschitz_iters, seed=seed)

    @property
    def rho(self):
        """Undersampling ratio ``p / (m n)``."""
        m, n = self.op.shape
        return Fraction(self.op.p, m * n)

    @property
    def mu(self):
        """Oversampling ratio ``r (m + n - r) / p``."""
        m, n = self.op.shape
        r = self.rank
        return Fraction(r * (m + n - r), self.op.p)

    def smooth(self, blocks):
        res = self.op.apply(blocks[0]) - self.op.b
        return 0.5 * float(res @ res)

    def euclid_grad(self, blocks, i=0):
        return self.op.adjoint(self.op.apply(blocks[0]) - self.op.b)

    def lipschitz(self, blocks, i=0):
        return self.L

    def relative_error(self, blocks):
        Xs = self.ground_truth[0]
        return float(np.linalg.norm(blocks[0] - Xs) / np.linalg.norm(Xs))


def make_matrix_recovery(m=50, n=12, r=3, p=450, seed=0):
    if not (m >= 1 and n >= 1 and p >= 1 and 1 <= r <= min(m, n)):
        raise ValueError(f"invalid matrix recovery dimensions m={m} n={n} r={r} p={p}")
    rng = np.random.default_rng(seed)
    mats = rng.standard_normal((p, m, n))
    Xs = rng.standard_normal((m, r)) @ rng.standard_normal((n, r)).T
    op = SensingOperator(mats)
    op.b = op._dense @ Xs.ravel()
    return MatrixRecovery(op, r, [Xs], seed=seed)


def _khatri_rao_others(U, i):
    """Factors of all modes except ``i``, in natural order."""
    return [U[j] for j in range(len(U)) if j != i]


class NCPD(ProblemInstance):
    """Three-way CP fit ``||X - [[U1, U2, U3]]||^2 + sum_i lam_i ||U_i||_1``.

    Block 1 lives on a fixed-rank manifold, the other two are Euclidean.
    """

    name = "ncpd"

    def __init__(self, X, block_specs, nonsmooth, truth):
        super().__init__(block_specs, nonsmooth, ground_truth=truth)
        self.X = X
        self._xnorm = float(np.linalg.norm(X))

    @staticmethod
    def assemble(U):
        charge(2 * U[0].shape[0] * U[1].shape[0] * U[2].shape[0] * U[0].shape[1], "cp_assemble")
        return np.einsum("ik,jk,lk->ijl", *U, optimize=True)

    def mttkrp(self, U, i):
        """``X_(i)`` times the Khatri-Rao product of the other factors."""
        specs = ["ik", "jk", "lk"]
        others = [U[j] for j in range(3) if j != i]
        sub = ",".join(["ijl"] + [specs[j] for j in range(3) if j != i])
        charge(2 * self.X.size * U[0].shape[1], "mttkrp")
        return np.einsum(f"{sub}->{specs[i]}", self.X, *others, optimize=True)

    def gram(self, U, i):
        R = U[0].shape[1]
        G = np.ones((R, R))
        for B in _khatri_rao_others(U, i):
            G = G * (B.T @ B)
            charge(2 * B.size * R, "gram")
        return G

    def smooth(self, blocks):
        res = self.X - self.assemble(blocks)
        return float(np.vdot(res, res))

    def smooth_matricized(self, blocks):
        """Same value via ``||X||^2 - 2 <X_(1), U1 KR^T> + <U1^T U1, Gram_1>``."""
        U1 = blocks[0]
        cross = float(np.vdot(self.mttkrp(blocks, 0), U1))
        quad = float(np.vdot(U1.T @ U1, self.gram(blocks, 0)))
        return self._xnorm ** 2 - 2 * cross + quad

    def euclid_grad(self, blocks, i):
        U = blocks[i]
        charge(2 * U.size * U.shape[1], "cp_grad")
        return 2.0 * (U @ self.gram(blocks, i) - self.mttkrp(blocks, i))

    def lipschitz(self, blocks, i):
        G = self.gram(blocks, i)
        charge(G.shape[0] ** 3, "eig")
        return 2.0 * float(np.linalg.eigvalsh(G)[-1])

    def relative_error(self, blocks):
        return float(np.linalg.norm(self.assemble(blocks) - self.X)) / self._xnorm


def make_ncpd(dims=(50, 40, 30), R=10, r=2, lambdas=(1e-2, 1e-2, 1e-2), nonneg=True, seed=0):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError("only third-order tensors are supported")
    if len(lambdas) != 3:
        raise ValueError("one l1 weight per mode is required")
    if R < 1 or not 1 <= r <= min(dims[0], R):
        raise ValueError(f"invalid CP ranks R={R} r={r} for dims {dims}")
    rng = np.random.default_rng(seed)
    draw = rng.uniform if nonneg else rng.standard_normal
    U1 = draw(size=(dims[0], r)) @ draw(size=(r, R))
    truth = [U1, draw(size=(dims[1], R)), draw(size=(dims[2], R))]
    X = NCPD.assemble(truth)
    specs = [(fixed_rank(dims[0], R, r),
              Constraint.NONNEG_FIXED_RANK if nonneg else Constraint.WHOLE)]
    specs += [(euclidean(d, R), Constraint.NONNEG if nonneg else Constraint.WHOLE)
              for d in dims[1:]]
    return NCPD(X, specs, [l1(w) for w in lambdas], truth)


class NMF(ProblemInstance):
    """``||X - W H||^2 + lam ||H||_1`` with ``W`` nonnegative of rank ``r``."""

    name = "nmf"

    def __init__(self, X, block_specs, nonsmooth, truth):
        super().__init__(block_specs, nonsmooth, ground_truth=truth)
        self.X = X
        self._xnorm = float(np.linalg.norm(X))

    def _residual(self, blocks):
        W, H = blocks
        charge(2 * W.shape[0] * W.shape[1] * H.shape[1], "nmf_res")
        return W @ H - self.X

    def smooth(self, blocks):
        res = self._residual(blocks)
        return float(np.vdot(res, res))

    def euclid_grad(self, blocks, i):
        W, H = blocks
        res = self._residual(blocks)
        charge(2 * res.size * W.shape[1], "nmf_grad")
        return 2.0 * (res @ H.T) if i == 0 else 2.0 * (W.T @ res)

    def lipschitz(self, blocks, i):
        W, H = blocks
        G = H @ H.T if i == 0 else W.T @ W
        charge(G.shape[0] ** 3 + 2 * G.shape[0] ** 2 * (H.shape[1] if i == 0 else W.shape[0]),
               "eig")
        return 2.0 * float(np.linalg.eigvalsh(G)[-1])

    def relative_error(self, blocks):
        return float(np.linalg.norm(self._residual(blocks))) / self._xnorm


def make_nmf(p=50, N=40, R=10, r=5, lam=1e-2, nonneg_H=True, seed=0):
    if not 1 <= r <= min(p, R) or N < 1:
        raise ValueError(f"invalid NMF dimensions p={p} N={N} R={R} r={r}")
    rng = np.random.default_rng(seed)
    W = rng.uniform(size=(p, r)) @ rng.uniform(size=(r, R))
    H = rng.uniform(size=(R, N))
    X = W @ H
    specs = [(fixed_rank(p, R, r), Constraint.NONNEG_FIXED_RANK),
             (euclidean(R, N), Constraint.NONNEG if nonneg_H else Constraint.WHOLE)]
    return NMF(X, specs, [NONE, l1(lam)], [W, H])


class SparsePCA(ProblemInstance):
    """``-tr(X^T S X) + w ||X||_1`` over the Stiefel manifold, ``S = D^T D / samples``."""

    name = "sparse_pca"

    def __init__(self, S, k, weight, truth):
        n = S.shape[0]
        super().__init__([(stiefel(n, k), Constraint.WHOLE)], [l1(weight)],
                         ground_truth=truth)
        self.S = S
        self.L = 2.0 * float(np.linalg.eigvalsh(S)[-1])

    def smooth(self, blocks):
        X = blocks[0]
        SX = self.S @ X
        charge(2 * self.S.shape[0] * X.size, "spca")
        return -float(np.vdot(X, SX))

    def euclid_grad(self, blocks, i=0):
        charge(2 * self.S.shape[0] * blocks[0].size, "spca")
        return -2.0 * (self.S @ blocks[0])

    def lipschitz(self, blocks, i=0):
        return self.L

    def relative_error(self, blocks):
        """Distance between the spanned and planted subspaces (projector norm, normalized)."""
        X, T = blocks[0], self.ground_truth[0]
        k = X.shape[1]
        return float(np.linalg.norm(X @ X.T - T @ T.T) / np.sqrt(2 * k))


def make_sparse_pca(n=50, k=3, support=5, samples=200, weight=0.1, seed=0):
    """Spiked covariance whose leading ``k`` eigenvectors have disjoint ``support``-sparse rows."""
    if k * support > n or k < 1 or support < 1:
        raise ValueError(f"cannot plant {k} disjoint supports of size {support} in {n} rows")
    rng = np.random.default_rng(seed)
    T = np.zeros((n, k))
    for j in range(k):
        v = rng.uniform(0.5, 1.0, size=support) * rng.choice([-1.0, 1.0], size=support)
        T[j * support:(j + 1) * support, j] = v / np.linalg.norm(v)
    spikes = np.linspace(4.0, 2.0, k)
    D = (rng.standard_normal((samples, k)) * np.sqrt(spikes)) @ T.T
    D += rng.standard_normal((samples, n))
    S = D.T @ D / samples
    return SparsePCA(S, k, weight, [T])


__all__ = [
    "ProblemInstance", "CallbackProblem", "SensingOperator", "MatrixRecovery", "NCPD",
    "NMF", "SparsePCA", "make_matrix_recovery", "make_ncpd", "make_nmf", "make_sparse_pca",
]

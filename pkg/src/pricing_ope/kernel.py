"""Kernel matrices mapping historical actions onto an evaluation action space.

A kernel ``K = W D (D^T W D)^{-1} Dbar^T`` comes from a weighted least-squares
fit of rewards on basis functions of the action. ``D`` evaluates the basis on
the historical actions, ``Dbar`` on the evaluation actions, ``W`` is a
symmetric positive-definite weight matrix. All inverses are linear solves.

Every function accepts either a single matrix or a stack with leading batch
dimension(s).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .core import ActionSpace, LearningSample

COND_WARN = 1e10
JITTER_EPS = 1e-8


class KernelError(np.linalg.LinAlgError):
    """Singular or ill-posed kernel construction."""


@dataclass(frozen=True)
class BasisSpec:
    """Smooth functions f_1..f_q of the action; the constant term is implicit."""

    functions: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        fns = tuple(self.functions)
        names = tuple(self.names) or tuple(f"f{j + 1}" for j in range(len(fns)))
        if len(names) != len(fns):
            raise ValueError("one name per basis function")
        object.__setattr__(self, "functions", fns)
        object.__setattr__(self, "names", names)

    @classmethod
    def polynomial(cls, degree: int) -> "BasisSpec":
        if degree < 0:
            raise ValueError("degree must be non-negative")
        return cls(tuple((lambda a, k=k: a**k) for k in range(1, degree + 1)),
                   tuple(f"a^{k}" for k in range(1, degree + 1)))

    @property
    def q(self) -> int:
        return len(self.functions)

    def evaluate(self, levels: Sequence[float]) -> np.ndarray:
        a = np.asarray(levels, dtype=float)
        return np.column_stack([np.ones_like(a)] + [np.asarray(f(a), dtype=float) * np.ones_like(a)
                                                     for f in self.functions])

    def describe(self) -> str:
        return "(1, " + ", ".join(self.names) + ")" if self.names else "(1)"


LINEAR_BASIS = BasisSpec.polynomial(1)
QUADRATIC_BASIS = BasisSpec.polynomial(2)


@dataclass(frozen=True)
class DesignMatrixPair:
    D: np.ndarray
    Dbar: np.ndarray
    basis: BasisSpec

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @property
    def m(self) -> int:
        return self.Dbar.shape[0]


def build_design(basis: BasisSpec, historical: ActionSpace, evaluation: ActionSpace) -> DesignMatrixPair:
    if basis.q + 1 > historical.size:
        raise ValueError(
            f"basis {basis.describe()} has {basis.q + 1} columns but only {historical.size} historical actions"
        )
    D = basis.evaluate(historical.values)
    rank = np.linalg.matrix_rank(D)
    if rank < basis.q + 1:
        raise ValueError(f"design matrix for basis {basis.describe()} is rank deficient ({rank} < {basis.q + 1})")
    Dbar = basis.evaluate(evaluation.values)
    D.setflags(write=False)
    Dbar.setflags(write=False)
    return DesignMatrixPair(D, Dbar, basis)


def naive_weights(propensities: np.ndarray) -> np.ndarray:
    """diag(propensities); a (n, d) input gives an (n, d, d) stack."""
    p = np.asarray(propensities, dtype=float)
    if np.any(p <= 0):
        raise ValueError("naive weights need strictly positive propensities (overlap)")
    return p[..., :, None] * np.eye(p.shape[-1])


@dataclass(frozen=True)
class ConditionalMoments:
    """Per-action conditional reward mean and variance, shape (..., d)."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu, s2 = np.asarray(self.mu, dtype=float), np.asarray(self.sigma2, dtype=float)
        if mu.shape != s2.shape:
            raise ValueError("mu and sigma2 must have the same shape")
        if np.any(s2 < 0):
            raise ValueError("sigma2 must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", s2)


def covariance_entries(moments: ConditionalMoments, propensities: np.ndarray) -> np.ndarray:
    """Conditional covariance of the per-action weighted rewards R 1{A=a_j} / pi_j."""
    p = np.asarray(propensities, dtype=float)
    if np.any(p <= 0):
        raise ValueError("propensities must be strictly positive")
    mu, s2 = moments.mu, moments.sigma2
    mu, s2, p = np.broadcast_arrays(mu, s2, p)
    Sigma = -mu[..., :, None] * mu[..., None, :]
    diag = s2 / p + mu**2 * (1.0 - p) / p
    idx = np.arange(p.shape[-1])
    Sigma[..., idx, idx] = diag
    return Sigma


def _gram_condition(M: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        return np.linalg.cond(M)


def _orthonormal_design(designs: DesignMatrixPair):
    """(Q, Dbar R^{-1}) with D = Q R; K only depends on the column space, so this avoids squaring cond(D)."""
    Q, R = np.linalg.qr(designs.D)
    r = np.abs(np.diag(R))
    if r.min() <= np.finfo(float).eps * r.max() * max(designs.D.shape):
        raise KernelError("design matrix D is rank deficient")
    if designs.Dbar.shape == designs.D.shape and np.array_equal(designs.Dbar, designs.D):
        return Q, Q.T
    return Q, solve_triangular(R, designs.Dbar.T, trans="T")


def _solve_projection(designs: DesignMatrixPair, weigh: Callable[[np.ndarray], np.ndarray], what: str) -> np.ndarray:
    Q, rhs = _orthonormal_design(designs)
    WQ = weigh(Q)
    M = np.swapaxes(WQ, -1, -2) @ Q
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    cond = _gram_condition(M)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1.0 / np.finfo(float).eps):
        raise KernelError(f"{what}: D^T W D is singular (max condition number {np.max(cond):.3g})")
    if np.any(cond > COND_WARN):
        warnings.warn(f"{what}: ill-conditioned D^T W D (max condition number {np.max(cond):.3g})")
    return WQ @ np.linalg.solve(M, np.broadcast_to(rhs, M.shape[:-2] + rhs.shape))


def kernel_matrix(designs: DesignMatrixPair, W: np.ndarray) -> np.ndarray:
    """K = W D (D^T W D)^{-1} Dbar^T, shape (..., d, m)."""
    W = np.asarray(W, dtype=float)
    return _solve_projection(designs, lambda Q: W @ Q, "kernel_matrix")


def optimal_kernel_matrix(designs: DesignMatrixPair, Sigma: np.ndarray, jitter: bool = False) -> np.ndarray:
    """Variance-minimizing kernel Sigma^{-1} D (D^T Sigma^{-1} D)^{-1} Dbar^T."""
    Sigma = np.asarray(Sigma, dtype=float)
    if jitter:
        d = Sigma.shape[-1]
        scale = JITTER_EPS * np.trace(Sigma, axis1=-2, axis2=-1) / d
        Sigma = Sigma + scale[..., None, None] * np.eye(d)
    try:
        np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise KernelError(
            "covariance matrix is not positive definite; rerun with ridge jitter enabled"
        ) from exc
    return _solve_projection(
        designs, lambda Q: np.linalg.solve(Sigma, np.broadcast_to(Q, Sigma.shape[:-2] + Q.shape)), "optimal_kernel_matrix"
    )


def conditional_variances(K: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """diag(K^T Sigma K): conditional variance of the kernelized weight per evaluation action."""
    return np.einsum("...km,...kl,...lm->...m", K, Sigma, K)


def spectral_condition(W: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Ratio of largest to smallest eigenvalue of W Sigma (both SPD)."""
    L = np.linalg.cholesky(Sigma)
    ev = np.linalg.eigvalsh(np.swapaxes(L, -1, -2) @ W @ L)
    return ev[..., -1] / ev[..., 0]


def gram_condition_numbers(designs: DesignMatrixPair, W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    return _gram_condition(designs.D.T @ W @ designs.D)


# ---------------------------------------------------------------------------
# per-record kernels


@dataclass(frozen=True)
class KernelSet:
    """Kernel matrices for every record of a sample.

    ``matrices`` holds the distinct kernels (u, d, m); ``index`` maps each
    record to one of them, so records with identical propensities share one.
    """

    matrices: np.ndarray
    index: np.ndarray
    kind: str = "custom"

    @classmethod
    def shared(cls, K: np.ndarray, n: int, kind: str = "custom") -> "KernelSet":
        return cls(np.asarray(K, dtype=float)[None], np.zeros(n, dtype=np.int64), kind)

    @classmethod
    def per_record(cls, Ks: np.ndarray, kind: str = "custom") -> "KernelSet":
        Ks = np.asarray(Ks, dtype=float)
        return cls(Ks, np.arange(Ks.shape[0]), kind)

    @property
    def n(self) -> int:
        return self.index.size

    @property
    def shape(self):
        return self.matrices.shape[1:]

    def full(self) -> np.ndarray:
        return self.matrices[self.index]

    def realized_rows(self, actions: np.ndarray) -> np.ndarray:
        """(n, m) rows K_i[A_i, :]."""
        return self.matrices[self.index, np.asarray(actions)]

    def subset(self, idx) -> "KernelSet":
        return KernelSet(self.matrices, self.index[idx], self.kind)


def naive_kernels(sample: LearningSample, designs: DesignMatrixPair) -> KernelSet:
    """Naive kernels, one per distinct propensity vector."""
    uniq, inverse = np.unique(sample.propensities, axis=0, return_inverse=True)
    Ks = kernel_matrix(designs, naive_weights(uniq))
    return KernelSet(Ks, inverse.reshape(-1), "naive")


def optimal_kernels(
    sample: LearningSample, designs: DesignMatrixPair, moments: ConditionalMoments, jitter: bool = False
) -> KernelSet:
    """Per-record variance-optimal kernels from conditional moments of shape (n, d)."""
    if moments.mu.shape != sample.propensities.shape:
        raise ValueError(f"moments shape {moments.mu.shape} != propensities shape {sample.propensities.shape}")
    Sigma = covariance_entries(moments, sample.propensities)
    return KernelSet.per_record(optimal_kernel_matrix(designs, Sigma, jitter=jitter), "optimal")


def plugin_moments(
    sample: LearningSample, n_bins: int = 10, feature: int = 0, folds: int = 2, seed: int = 0,
    min_count: int = 20,
) -> ConditionalMoments:
    """Cross-fitted per-action reward mean/variance within quantile bins of one feature.

    Moments for records in fold k come only from the other folds, so a record's
    own reward never enters its kernel. Sparse or degenerate cells fall back to
    the pooled per-action moments of the other folds.
    """
    n, d = sample.n, sample.action_space.size
    rng = np.random.default_rng(seed)
    fold = rng.permutation(n) % folds
    x = sample.features[:, feature]
    mu, s2 = np.empty((n, d)), np.empty((n, d))
    for k in range(folds):
        train, test = fold != k, fold == k
        edges = np.quantile(x[train], np.linspace(0, 1, n_bins + 1)[1:-1])
        b_train, b_test = np.searchsorted(edges, x[train]), np.searchsorted(edges, x[test])
        A, R = sample.actions[train], sample.rewards[train]
        cell_mu, cell_s2 = np.empty((n_bins, d)), np.empty((n_bins, d))
        for j in range(d):
            pooled = R[A == j]
            pm, pv = (pooled.mean(), pooled.var()) if pooled.size else (0.0, 0.0)
            for b in range(n_bins):
                r = R[(A == j) & (b_train == b)]
                if r.size >= min_count and r.var() > 0:
                    cell_mu[b, j], cell_s2[b, j] = r.mean(), r.var(ddof=1)
                else:
                    cell_mu[b, j], cell_s2[b, j] = pm, pv
        mu[test], s2[test] = cell_mu[b_test], cell_s2[b_test]
    return ConditionalMoments(mu, s2)

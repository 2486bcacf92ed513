"""Data-shared Lasso on kernelized IPS pseudo-rewards."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import DeterministicPolicy, LearningSample
from ..kernel import KernelSet


class ConvergenceError(RuntimeError):
    pass


def dsl_targets(sample: LearningSample, kernels: KernelSet) -> np.ndarray:
    """(n, m) pseudo-rewards R_i K_i[A_i, a] / pi_i(A_i); column means are constant-policy KIPS values."""
    if kernels.n != sample.n:
        raise ValueError(f"{kernels.n} kernels for {sample.n} records")
    rows = kernels.realized_rows(sample.actions)
    return (sample.rewards / sample.realized_propensity)[:, None] * rows


@dataclass(frozen=True)
class DslModel:
    """Shared coefficients ``w0`` plus per-action deviations ``w_per_action`` (m, p).

    ``intercept0`` is the unpenalized global intercept, ``intercepts`` the
    (penalized) action-specific intercept deviations. Coefficients are on the
    scale of the features passed to :func:`fit_dsl`.
    """

    w0: np.ndarray
    w_per_action: np.ndarray
    intercept0: float
    intercepts: np.ndarray
    tau: float
    gamma: np.ndarray
    objective_history: tuple = field(default=(), repr=False)

    @property
    def n_actions(self) -> int:
        return self.w_per_action.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.intercept0 + (X @ self.w0)[:, None] + self.intercepts[None, :] + X @ self.w_per_action.T

    def action_scores(self, X: np.ndarray) -> np.ndarray:
        """x^T w_a per action; the shared part cancels in the argmax."""
        return self.intercepts[None, :] + np.atleast_2d(X) @ self.w_per_action.T

    def to_dict(self) -> dict:
        return {
            "w0": self.w0.tolist(),
            "w_per_action": self.w_per_action.tolist(),
            "intercept0": self.intercept0,
            "intercepts": self.intercepts.tolist(),
            "tau": self.tau,
            "gamma": self.gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DslModel":
        return cls(np.asarray(d["w0"]), np.asarray(d["w_per_action"]), float(d["intercept0"]),
                   np.asarray(d["intercepts"]), float(d["tau"]), np.asarray(d["gamma"]))


def _soft(x: float, t: float) -> float:
    return np.sign(x) * max(abs(x) - t, 0.0)


def fit_dsl(
    targets: np.ndarray,
    features: np.ndarray,
    tau: float,
    gamma: Optional[Sequence[float]] = None,
    max_sweeps: int = 10_000,
    tol: float = 1e-6,
) -> DslModel:
    """Coordinate descent with soft-thresholding over the stacked (n*m)-row regression.

    Minimizes sum_{i,a} (V_ia - b - z_i^T (w0 + w_a))^2 + tau (|w0|_1 + sum_a gamma_a |w_a|_1)
    where ``z`` are internally standardized features with a constant column;
    the constant's shared coefficient ``b`` is unpenalized. Works on the Gram
    matrix, so a sweep costs O(m p^2) independent of n.
    """
    V = np.asarray(targets, dtype=float)
    X = np.atleast_2d(np.asarray(features, dtype=float))
    n, m = V.shape
    if X.shape[0] != n:
        raise ValueError("targets and features differ in number of rows")
    if tau <= 0:
        raise ValueError("tau must be positive")
    gamma = np.full(m, 1.0 / np.sqrt(m)) if gamma is None else np.asarray(gamma, dtype=float)
    if gamma.shape != (m,) or np.any(gamma <= 0):
        raise ValueError("gamma must hold one positive multiplier per action")

    mean, sd = X.mean(axis=0), X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = np.hstack([np.ones((n, 1)), (X - mean) / sd])
    k = Z.shape[1]
    G = Z.T @ Z
    C = Z.T @ V  # (k, m)
    c0 = C.sum(axis=1)
    yy = float(np.sum(V**2))
    diagG = np.diag(G).copy()

    pen0 = np.full(k, tau)
    pen0[0] = 0.0
    w0 = np.zeros(k)
    W = np.zeros((m, k))
    U = np.zeros((m, k))  # U[a] = G (w0 + w_a)

    def objective():
        B = W + w0[None, :]
        smooth = yy - 2.0 * np.sum(B * C.T) + np.sum(B * U)
        return smooth + float(pen0 @ np.abs(w0)) + tau * float(np.sum(gamma[:, None] * np.abs(W)))

    history = [objective()]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(k):
            if diagG[j] <= 0:
                continue
            old = w0[j]
            rho = c0[j] - U[:, j].sum() + m * diagG[j] * old
            new = _soft(rho, pen0[j] / 2.0) / (m * diagG[j])
            if new != old:
                U += (new - old) * G[:, j][None, :]
                w0[j] = new
                max_delta = max(max_delta, abs(new - old))
        for a in range(m):
            t = tau * gamma[a] / 2.0
            for j in range(k):
                if diagG[j] <= 0:
                    continue
                old = W[a, j]
                rho = C[j, a] - U[a, j] + diagG[j] * old
                new = _soft(rho, t) / diagG[j]
                if new != old:
                    U[a] += (new - old) * G[:, j]
                    W[a, j] = new
                    max_delta = max(max_delta, abs(new - old))
        history.append(objective())
        if max_delta < tol:
            break
    else:
        raise ConvergenceError(f"DSL did not converge in {max_sweeps} sweeps; last objective {history[-1]:.6g}")

    # back to the original feature scale
    w0_x, W_x = w0[1:] / sd, W[:, 1:] / sd[None, :]
    return DslModel(
        w0=w0_x,
        w_per_action=W_x,
        intercept0=float(w0[0] - mean @ w0_x),
        intercepts=W[:, 0] - W_x @ mean,
        tau=float(tau),
        gamma=gamma,
        objective_history=tuple(history),
    )


def dsl_policy(model: DslModel) -> DeterministicPolicy:
    """argmax_a x^T w_a; lowest action index wins ties."""
    return DeterministicPolicy(lambda X: np.argmax(model.action_scores(X), axis=1), model.n_actions, name="DSL")

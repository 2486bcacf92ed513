"""Predict-then-optimize: a logistic conversion model, then the reward-maximizing price."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from ..core import ActionSpace, DeterministicPolicy, LearningSample
from ..simenv import POPULATION_ENCODER, EnvironmentParams, FeatureEncoder


class SeparationError(RuntimeError):
    """The conversion labels are (quasi-)separable, so the MLE does not exist."""


class NewtonConvergenceError(RuntimeError):
    pass


def pto_design(features: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Rows (1, a, a^2, x, a*x) for paired features and action levels."""
    X = np.atleast_2d(features)
    a = np.asarray(levels, dtype=float).reshape(-1, 1)
    return np.hstack([np.ones_like(a), a, a**2, X, a * X])


@dataclass(frozen=True)
class PtoModel:
    """Logit coefficients: ``phi1`` on (1, a, a^2), ``phi2`` on x, ``phi3`` on a*x."""

    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray
    covariance: Optional[np.ndarray] = field(default=None, repr=False)
    iterations: int = 0

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.phi1, self.phi2, self.phi3])

    def predict_conversion(self, features: np.ndarray, levels) -> np.ndarray:
        """(n, m) conversion probabilities for every customer and action level."""
        X = np.atleast_2d(features)
        a = np.asarray(levels, dtype=float)[None, :]
        eta = (self.phi1[0] + self.phi1[1] * a + self.phi1[2] * a**2
               + (X @ self.phi2)[:, None] + (X @ self.phi3)[:, None] * a)
        return expit(eta)

    def to_dict(self) -> dict:
        return {"phi1": self.phi1.tolist(), "phi2": self.phi2.tolist(), "phi3": self.phi3.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PtoModel":
        return cls(np.asarray(d["phi1"]), np.asarray(d["phi2"]), np.asarray(d["phi3"]))


def _loglik(Z, c, beta):
    eta = Z @ beta
    # log p = -log(1+e^-eta), log(1-p) = -log(1+e^eta)
    return float(np.sum(c * -np.logaddexp(0.0, -eta) + (1 - c) * -np.logaddexp(0.0, eta)))


def fit_pto(
    sample: LearningSample, max_iter: int = 100, tol: float = 1e-6, max_coef: float = 1e4
) -> PtoModel:
    """Maximum likelihood by damped Newton-Raphson.

    Converged when the per-record gradient norm drops below ``tol``. Step
    halving keeps the log-likelihood non-decreasing.
    """
    if sample.conversions is None:
        raise ValueError("PTO needs the conversion indicators")
    c = np.asarray(sample.conversions, dtype=float)
    if c.min() == c.max():
        raise SeparationError(f"all {sample.n} conversion labels equal {c[0]:g}")
    levels = sample.action_space.values[sample.actions]
    Z = pto_design(sample.features, levels)
    n, k = Z.shape
    beta = np.zeros(k)
    ll = _loglik(Z, c, beta)
    for it in range(1, max_iter + 1):
        p = expit(Z @ beta)
        grad = Z.T @ (c - p)
        if np.linalg.norm(grad) / n < tol:
            break
        H = (Z * (p * (1 - p))[:, None]).T @ Z
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise SeparationError("singular Fisher information; design is rank deficient or separable") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(Z, c, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        if np.max(np.abs(beta)) > max_coef:
            raise SeparationError(f"coefficients diverge (max |coef| {np.max(np.abs(beta)):.3g}); labels look separable")
    else:
        raise NewtonConvergenceError(f"Newton did not converge in {max_iter} iterations")
    p = expit(Z @ beta)
    H = (Z * (p * (1 - p))[:, None]).T @ Z
    cov = np.linalg.inv(H)
    p_x = sample.features.shape[1]
    return PtoModel(beta[:3], beta[3:3 + p_x], beta[3 + p_x:], cov, it)


@dataclass(frozen=True)
class PremiumRule:
    """Recovers the fair premium from the standardized ticket-price column."""

    fair_rate: float = 0.10
    lambda_loading: float = 0.05
    encoder: FeatureEncoder = POPULATION_ENCODER
    price_column: int = 0

    @classmethod
    def from_params(cls, params: EnvironmentParams, encoder: FeatureEncoder = POPULATION_ENCODER) -> "PremiumRule":
        return cls(params.fair_rate, params.lambda_loading, encoder)

    def fair(self, features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(features)
        ticket = X[:, self.price_column] * self.encoder.sd[0] + self.encoder.mean[0]
        return self.fair_rate * ticket

    def margin(self, features: np.ndarray, levels) -> np.ndarray:
        """(n, m) profit per conversion, P - P_fair."""
        return self.fair(features)[:, None] * (1.0 + np.asarray(levels, dtype=float))[None, :] * self.lambda_loading


@dataclass(frozen=True)
class PtoRewardModel:
    """Expected reward p_hat(x, a) * margin(x, a), usable by the direct method."""

    model: PtoModel
    premium: PremiumRule

    def predict(self, features: np.ndarray, actions: ActionSpace) -> np.ndarray:
        return self.model.predict_conversion(features, actions.values) * self.premium.margin(features, actions.values)


def pto_policy(model: PtoModel, evaluation: ActionSpace, premium: PremiumRule) -> DeterministicPolicy:
    """Action maximizing the modelled expected reward; lowest index wins ties."""
    rm = PtoRewardModel(model, premium)
    return DeterministicPolicy(lambda X: np.argmax(rm.predict(np.atleast_2d(X), evaluation), axis=1),
                               evaluation.size, name="PTO")

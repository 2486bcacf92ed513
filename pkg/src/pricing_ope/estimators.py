"""Policy value estimators: direct method, IPS and kernelized IPS."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .core import ActionSpace, DeterministicPolicy, LearningSample, Policy, policy_matrix
from .kernel import DesignMatrixPair, KernelSet, gram_condition_numbers, naive_weights

TAGS = ("DM", "IPS", "KIPS-naive", "KIPS-optimal", "KIPS")


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    contributions: np.ndarray
    tag: str

    @classmethod
    def from_contributions(cls, contributions: np.ndarray, tag: str) -> "ValueEstimate":
        c = np.asarray(contributions, dtype=float)
        c.setflags(write=False)
        return cls(float(np.sum(c) / c.size), c, tag)

    @property
    def n(self) -> int:
        return self.contributions.size

    @property
    def std_error(self) -> float:
        if self.n < 2:
            return float("nan")
        return float(np.std(self.contributions, ddof=1) / np.sqrt(self.n))


class RewardModel(Protocol):
    def predict(self, features: np.ndarray, actions: ActionSpace) -> np.ndarray:
        """(n, m) expected reward of each customer under each action level."""


@dataclass(frozen=True)
class TableRewardModel:
    """Precomputed reward table aligned with a fixed set of records (e.g. the simulator oracle)."""

    table: np.ndarray
    actions: ActionSpace

    def predict(self, features: np.ndarray, actions: ActionSpace) -> np.ndarray:
        if features.shape[0] != self.table.shape[0]:
            raise ValueError("table reward model is aligned with a different set of records")
        if not actions.same_as(self.actions):
            raise ValueError("table reward model covers a different action space")
        return self.table


@dataclass(frozen=True)
class ConstantRewardModel:
    value: float

    def predict(self, features: np.ndarray, actions: ActionSpace) -> np.ndarray:
        return np.full((features.shape[0], actions.size), float(self.value))


def dm_value(sample: LearningSample, model: RewardModel, policy: Policy, evaluation: ActionSpace) -> ValueEstimate:
    """Plug-in value: average of modelled rewards weighted by the policy's action probabilities."""
    if policy.n_actions != evaluation.size:
        raise ValueError("policy and evaluation action space differ in size")
    pred = np.asarray(model.predict(sample.features, evaluation), dtype=float)
    if pred.shape != (sample.n, evaluation.size):
        raise ValueError(f"reward model returned shape {pred.shape}")
    if not np.all(np.isfinite(pred)):
        raise ValueError("reward model returned non-finite predictions")
    if isinstance(policy, DeterministicPolicy):
        contrib = pred[np.arange(sample.n), policy.actions(sample.features)]
    else:
        contrib = np.einsum("ij,ij->i", pred, policy.probabilities(sample.features))
    return ValueEstimate.from_contributions(contrib, "DM")


def ips_weights(sample: LearningSample, policy: Policy) -> np.ndarray:
    if policy.n_actions != sample.action_space.size:
        raise ValueError("policy acts on a different number of actions than the logged data")
    if isinstance(policy, DeterministicPolicy):
        match = (policy.actions(sample.features) == sample.actions).astype(float)
    else:
        match = policy.probabilities(sample.features)[np.arange(sample.n), sample.actions]
    return match / sample.realized_propensity


def ips_value(sample: LearningSample, policy: Policy, evaluation: Optional[ActionSpace] = None) -> ValueEstimate:
    """Inverse propensity score estimate; the policy must act on the historical actions."""
    if evaluation is not None and not evaluation.same_as(sample.action_space):
        raise ValueError("IPS cannot evaluate policies on an action space other than the historical one")
    return ValueEstimate.from_contributions(sample.rewards * ips_weights(sample, policy), "IPS")


def kips_weights(sample: LearningSample, policy: Policy, kernels: KernelSet) -> np.ndarray:
    if kernels.n != sample.n:
        raise ValueError(f"{kernels.n} kernels for {sample.n} records")
    d, m = kernels.shape
    if d != sample.action_space.size or m != policy.n_actions:
        raise ValueError(f"kernel shape {(d, m)} incompatible with d={sample.action_space.size}, m={policy.n_actions}")
    rows = kernels.realized_rows(sample.actions)
    if isinstance(policy, DeterministicPolicy):
        k = rows[np.arange(sample.n), policy.actions(sample.features)]
    else:
        k = np.einsum("ij,ij->i", rows, policy_matrix(policy, sample.features))
    return k / sample.realized_propensity


def kips_value(sample: LearningSample, policy: Policy, kernels: KernelSet) -> ValueEstimate:
    """Kernelized IPS estimate; stochastic policies use their probability vectors."""
    tag = {"naive": "KIPS-naive", "optimal": "KIPS-optimal"}.get(kernels.kind, "KIPS")
    return ValueEstimate.from_contributions(sample.rewards * kips_weights(sample, policy, kernels), tag)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    denom = np.sum(w**2)
    return float(np.sum(w) ** 2 / denom) if denom > 0 else 0.0


def estimator_diagnostics(
    sample: LearningSample,
    policy: Policy,
    kernels: Optional[KernelSet] = None,
    designs: Optional[DesignMatrixPair] = None,
) -> dict:
    """Weight distribution, effective sample size, kernel magnitude and conditioning."""
    w = ips_weights(sample, policy) if kernels is None else kips_weights(sample, policy, kernels)
    report = {
        "n": sample.n,
        "estimator": "IPS" if kernels is None else f"KIPS-{kernels.kind}",
        "weight_min": float(w.min()),
        "weight_max": float(w.max()),
        "weight_mean": float(w.mean()),
        "weight_std": float(w.std()),
        "effective_sample_size": effective_sample_size(w),
    }
    if kernels is not None:
        report["max_abs_kernel_entry"] = float(np.abs(kernels.matrices).max())
    if designs is not None:
        uniq = np.unique(sample.propensities, axis=0)
        cond = gram_condition_numbers(designs, naive_weights(uniq))
        report["max_gram_condition"] = float(np.max(cond))
    return report

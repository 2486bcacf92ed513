"""Shared domain types: action spaces, policies, logged samples, policy value."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

PROB_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ActionSpace:
    """Finite, strictly increasing grid of price adjustments."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 1:
            raise ValueError("action space needs at least one level")
        if not all(np.isfinite(levels)):
            raise ValueError("action levels must be finite")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"action levels must be strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def grid(cls, start: float, stop: float, num: int) -> "ActionSpace":
        return cls(tuple(np.round(np.linspace(start, stop, num), 12)))

    @property
    def size(self) -> int:
        return len(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def index_of(self, level: float, atol: float = 1e-12) -> int:
        hits = np.flatnonzero(np.abs(self.values - level) <= atol)
        if hits.size == 0:
            raise KeyError(f"action {level} not in {self.levels}")
        return int(hits[0])

    def same_as(self, other: "ActionSpace") -> bool:
        return self.size == other.size and np.array_equal(self.values, other.values)


HISTORICAL_ACTIONS = ActionSpace((-0.2, -0.1, 0.0, 0.1, 0.2))
EXTENDED_ACTIONS = ActionSpace.grid(-0.3, 0.3, 61)


@dataclass(frozen=True)
class DeterministicPolicy:
    """Maps a feature matrix (n, p) to action indices (n,) in [0, n_actions)."""

    rule: Callable[[np.ndarray], np.ndarray]
    n_actions: int
    name: str = "deterministic"

    def actions(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = np.asarray(self.rule(X))
        if idx.shape != (X.shape[0],):
            raise ValueError(f"policy {self.name} returned shape {idx.shape}, expected ({X.shape[0]},)")
        idx = idx.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_actions):
            raise ValueError(f"policy {self.name} returned index outside [0, {self.n_actions})")
        return idx

    def probabilities(self, X: np.ndarray) -> np.ndarray:
        idx = self.actions(X)
        P = np.zeros((idx.size, self.n_actions))
        P[np.arange(idx.size), idx] = 1.0
        return P


@dataclass(frozen=True)
class StochasticPolicy:
    """Maps a feature matrix (n, p) to action probabilities (n, n_actions)."""

    rule: Callable[[np.ndarray], np.ndarray]
    n_actions: int
    name: str = "stochastic"

    def probabilities(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = np.asarray(self.rule(X), dtype=float)
        if P.shape != (X.shape[0], self.n_actions):
            raise ValueError(
                f"policy {self.name} returned shape {P.shape}, expected ({X.shape[0]}, {self.n_actions})"
            )
        check_probabilities(P, what=f"policy {self.name}")
        return P

    def actions(self, X: np.ndarray) -> np.ndarray:
        """Argmax determinization, lowest index on ties."""
        return np.argmax(self.probabilities(X), axis=1)


Policy = Union[DeterministicPolicy, StochasticPolicy]


def check_probabilities(P: np.ndarray, what: str = "probabilities") -> None:
    if np.any(~np.isfinite(P)) or np.any(P < 0):
        raise ValueError(f"{what}: probabilities must be finite and non-negative")
    if np.any(np.abs(P.sum(axis=-1) - 1.0) > PROB_TOL):
        raise ValueError(f"{what}: probabilities must sum to 1 within {PROB_TOL}")


def constant_policy(index: int, n_actions: int) -> DeterministicPolicy:
    if not 0 <= index < n_actions:
        raise ValueError(f"index {index} outside [0, {n_actions})")
    return DeterministicPolicy(
        lambda X: np.full(X.shape[0], index, dtype=np.int64), n_actions, name=f"constant[{index}]"
    )


def fixed_probability_policy(probs: Sequence[float], name: str = "fixed") -> StochasticPolicy:
    """Feature-independent stochastic policy, e.g. uniform logging."""
    p = np.asarray(probs, dtype=float)
    check_probabilities(p[None, :], what=name)
    return StochasticPolicy(lambda X: np.tile(p, (X.shape[0], 1)), p.size, name=name)


def uniform_policy(n_actions: int) -> StochasticPolicy:
    return fixed_probability_policy(np.full(n_actions, 1.0 / n_actions), name="uniform")


def policy_matrix(policy: Policy, X: np.ndarray) -> np.ndarray:
    """(n, m) probability matrix; one-hot rows for deterministic policies."""
    return policy.probabilities(X)


@dataclass(frozen=True)
class LoggedSample:
    """One logged record: features, realized action index, reward, full propensity vector."""

    features: np.ndarray
    action_index: int
    reward: float
    propensities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=float)))
        object.__setattr__(self, "propensities", _frozen(np.asarray(self.propensities, dtype=float)))
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        check_probabilities(self.propensities[None, :], what="propensities")
        if not 0 <= self.action_index < self.propensities.size:
            raise ValueError("action index outside propensity vector")
        if self.propensities[self.action_index] <= 0:
            raise ValueError("overlap violated: realized action has zero propensity")


@dataclass(frozen=True)
class LearningSample:
    """Columnar collection of logged records sharing one historical action space.

    ``features`` is (n, p), ``actions`` (n,) integer indices, ``rewards`` (n,),
    ``propensities`` (n, d). ``conversions`` is optional and only needed by the
    predict-then-optimize baseline.
    """

    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    action_space: ActionSpace
    conversions: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        A = np.asarray(self.actions).astype(np.int64)
        R = np.asarray(self.rewards, dtype=float)
        P = np.atleast_2d(np.asarray(self.propensities, dtype=float))
        n, d = X.shape[0], self.action_space.size
        if n < 1:
            raise ValueError("learning sample must contain at least one record")
        if A.shape != (n,) or R.shape != (n,) or P.shape != (n, d):
            raise ValueError(
                f"shape mismatch: features {X.shape}, actions {A.shape}, rewards {R.shape}, "
                f"propensities {P.shape}, action space size {d}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        if A.min() < 0 or A.max() >= d:
            raise ValueError("action index outside historical action space")
        check_probabilities(P, what="propensities")
        if np.any(P[np.arange(n), A] <= 0):
            raise ValueError("overlap violated: realized action has zero propensity")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "actions", _frozen(A))
        object.__setattr__(self, "rewards", _frozen(R))
        object.__setattr__(self, "propensities", _frozen(P))
        if self.conversions is not None:
            C = np.asarray(self.conversions, dtype=float)
            if C.shape != (n,):
                raise ValueError("conversions must have shape (n,)")
            object.__setattr__(self, "conversions", _frozen(C))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def realized_propensity(self) -> np.ndarray:
        return self.propensities[np.arange(self.n), self.actions]

    def record(self, i: int) -> LoggedSample:
        return LoggedSample(self.features[i], int(self.actions[i]), float(self.rewards[i]), self.propensities[i])

    def records(self):
        return [self.record(i) for i in range(self.n)]

    @classmethod
    def from_records(cls, records: Sequence[LoggedSample], action_space: ActionSpace) -> "LearningSample":
        if not records:
            raise ValueError("learning sample must contain at least one record")
        return cls(
            features=np.stack([r.features for r in records]),
            actions=np.array([r.action_index for r in records]),
            rewards=np.array([r.reward for r in records]),
            propensities=np.stack([r.propensities for r in records]),
            action_space=action_space,
        )

    def subset(self, idx: np.ndarray) -> "LearningSample":
        return LearningSample(
            self.features[idx],
            self.actions[idx],
            self.rewards[idx],
            self.propensities[idx],
            self.action_space,
            None if self.conversions is None else self.conversions[idx],
        )


def empirical_value(expected_rewards: np.ndarray, policy: Policy, features: np.ndarray) -> float:
    """Average expected reward when ``policy`` is applied to the given customers.

    ``expected_rewards[i, k]`` is the (true or modelled) expected reward of
    customer ``i`` under evaluation action ``k``.
    """
    M = np.atleast_2d(np.asarray(expected_rewards, dtype=float))
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if M.shape[0] != X.shape[0]:
        raise ValueError(f"{M.shape[0]} reward rows but {X.shape[0]} feature rows")
    if M.shape[1] != policy.n_actions:
        raise ValueError(f"{M.shape[1]} reward columns but policy has {policy.n_actions} actions")
    if isinstance(policy, DeterministicPolicy):
        per_record = M[np.arange(M.shape[0]), policy.actions(X)]
    else:
        per_record = np.einsum("ij,ij->i", M, policy.probabilities(X))
    return float(np.sum(per_record) / per_record.size)

"""Record-wise oracle policy from known expected rewards."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..core import DeterministicPolicy


@dataclass(frozen=True)
class OracleResult:
    actions: np.ndarray
    value: float
    policy: DeterministicPolicy


def oracle_policy(true_rewards: Union[np.ndarray, Sequence]) -> OracleResult:
    """argmax of the true expected reward per record; lowest index wins ties.

    Accepts an (n, m) reward table or a list of simulated records. The policy
    is bound to the records the table was computed for.
    """
    if len(true_rewards) and hasattr(true_rewards[0], "true_expected_rewards"):
        true_rewards = [r.true_expected_rewards for r in true_rewards]
    T = np.atleast_2d(np.asarray(true_rewards, dtype=float))
    idx = np.argmax(T, axis=1)
    value = float(np.sum(T[np.arange(T.shape[0]), idx]) / T.shape[0])

    def rule(X):
        if X.shape[0] != idx.size:
            raise ValueError("oracle policy only applies to the records it was built from")
        return idx

    idx.setflags(write=False)
    return OracleResult(idx, value, DeterministicPolicy(rule, T.shape[1], name="oracle"))

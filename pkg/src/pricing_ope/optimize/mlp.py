"""Softmax MLP policy trained by Adam to maximize the kernelized IPS objective."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import DeterministicPolicy, LearningSample, StochasticPolicy
from ..kernel import KernelSet
from .dsl import dsl_targets

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpConfig:
    hidden: Tuple[int, ...] = (32, 32)
    activation: str = "relu"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1024
    epochs: int = 50
    restarts: int = 5
    held_out_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 < self.held_out_fraction < 1.0:
            raise ValueError("held_out_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.restarts < 1:
            raise ValueError("batch_size, epochs and restarts must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a**2


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MlpPolicy:
    """Fully connected network; layer l maps z -> act(z W_l + b_l), last layer gives logits."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    @property
    def n_actions(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def params(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def logits(self, X: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(X)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = _act(z @ W + b, self.activation)
        return z @ self.weights[-1] + self.biases[-1]

    def probabilities(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def as_stochastic_policy(self) -> StochasticPolicy:
        return StochasticPolicy(self.probabilities, self.n_actions, name="MLP")

    def as_deterministic_policy(self) -> DeterministicPolicy:
        return DeterministicPolicy(lambda X: np.argmax(self.logits(X), axis=1), self.n_actions, name="MLP-argmax")

    def copy(self) -> "MlpPolicy":
        return MlpPolicy([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def to_dict(self) -> dict:
        return {"activation": self.activation, "weights": [W.tolist() for W in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpPolicy":
        return cls([np.asarray(W, dtype=float) for W in d["weights"]],
                   [np.asarray(b, dtype=float) for b in d["biases"]], d["activation"])


def init_mlp(n_in: int, n_out: int, hidden: Sequence[int], activation: str, rng: np.random.Generator) -> MlpPolicy:
    """Uniform fan-in initialization: limit sqrt(6/fan_in) for ReLU, sqrt(3/fan_in) for tanh."""
    sizes = [n_in, *hidden, n_out]
    gain = 6.0 if activation == "relu" else 3.0
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(gain / fan_in)
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpPolicy(Ws, bs, activation)


def objective_and_gradient(policy: MlpPolicy, X: np.ndarray, V: np.ndarray):
    """J = mean_i sum_a V_ia pi(a|x_i) and its gradient (weights then biases)."""
    acts, pre = [np.atleast_2d(X)], []
    for W, b in zip(policy.weights[:-1], policy.biases[:-1]):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(_act(z, policy.activation))
    P = softmax(acts[-1] @ policy.weights[-1] + policy.biases[-1])
    n = X.shape[0]
    baseline = np.sum(V * P, axis=1, keepdims=True)
    J = float(np.sum(baseline) / n)
    delta = P * (V - baseline) / n
    gW, gb = [None] * len(policy.weights), [None] * len(policy.biases)
    for layer in range(len(policy.weights) - 1, -1, -1):
        gW[layer] = acts[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            back = delta @ policy.weights[layer].T
            delta = back * _act_grad(pre[layer - 1], acts[layer], policy.activation)
    return J, gW + gb


@dataclass
class TrainingResult:
    policy: MlpPolicy
    log: List[dict] = field(default_factory=list)
    best_restart: int = -1
    best_epoch: int = -1
    best_held_out_value: float = float("-inf")


def _held_out_value(policy: MlpPolicy, X: np.ndarray, V: np.ndarray) -> float:
    idx = np.argmax(policy.logits(X), axis=1)
    return float(np.sum(V[np.arange(X.shape[0]), idx]) / X.shape[0])


def train_mlp_policy(
    sample: LearningSample, kernels: KernelSet, config: Optional[MlpConfig] = None,
    targets: Optional[np.ndarray] = None,
) -> TrainingResult:
    """Gradient ascent on the KIPS value of a softmax policy.

    A random ``held_out_fraction`` of records is kept aside; the returned
    policy is the (restart, epoch) whose argmax policy scores the highest
    held-out KIPS value. The logged train objective is the record-weighted
    mean of the mini-batch objectives seen during the epoch.
    """
    cfg = config or MlpConfig()
    V = dsl_targets(sample, kernels) if targets is None else np.asarray(targets, dtype=float)
    X = sample.features
    n = sample.n
    root = np.random.SeedSequence(cfg.seed)
    split_rng = np.random.default_rng(root.spawn(1)[0])
    perm = split_rng.permutation(n)
    n_hold = max(1, int(round(cfg.held_out_fraction * n)))
    hold, train = perm[:n_hold], perm[n_hold:]
    if train.size == 0:
        raise ValueError("no training records left after the held-out split")
    X_tr, V_tr, X_ho, V_ho = X[train], V[train], X[hold], V[hold]

    result = TrainingResult(policy=None)  # type: ignore[arg-type]
    for r, child in enumerate(root.spawn(cfg.restarts)):
        rng = np.random.default_rng(child)
        pol = init_mlp(X.shape[1], V.shape[1], cfg.hidden, cfg.activation, rng)
        m1 = [np.zeros_like(p) for p in pol.params]
        m2 = [np.zeros_like(p) for p in pol.params]
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(train.size)
            batch_obj = []
            for start in range(0, train.size, cfg.batch_size):
                b = order[start:start + cfg.batch_size]
                J, grads = objective_and_gradient(pol, X_tr[b], V_tr[b])
                if not np.isfinite(J) or any(not np.all(np.isfinite(g)) for g in grads):
                    raise FloatingPointError(
                        f"non-finite objective or gradient at restart {r}, epoch {epoch}, step {step}"
                    )
                step += 1
                batch_obj.append(J * b.size)
                c1, c2 = 1.0 - cfg.beta1**step, 1.0 - cfg.beta2**step
                for p, g, a1, a2 in zip(pol.params, grads, m1, m2):
                    a1 *= cfg.beta1
                    a1 += (1.0 - cfg.beta1) * g
                    a2 *= cfg.beta2
                    a2 += (1.0 - cfg.beta2) * g * g
                    p += cfg.learning_rate * (a1 / c1) / (np.sqrt(a2 / c2) + cfg.eps)
            train_obj = float(np.sum(batch_obj) / train.size)
            ho = _held_out_value(pol, X_ho, V_ho)
            result.log.append({"restart": r, "epoch": epoch, "train_objective": train_obj, "held_out_value": ho})
            if ho > result.best_held_out_value:
                result.policy, result.best_restart, result.best_epoch = pol.copy(), r, epoch
                result.best_held_out_value = ho
    return result

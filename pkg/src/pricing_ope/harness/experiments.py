"""Seeded Monte-Carlo runners; every row carries the oracle truth next to the estimate."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..core import constant_policy, empirical_value
from ..estimators import dm_value, ips_value, kips_value
from ..kernel import BasisSpec, ConditionalMoments, build_design, naive_kernels, optimal_kernels, plugin_moments
from ..optimize import (
    MlpConfig,
    PremiumRule,
    PtoRewardModel,
    dsl_policy,
    dsl_targets,
    fit_dsl,
    fit_pto,
    oracle_policy,
    pto_policy,
    train_mlp_policy,
)
from ..simenv import EnvironmentConfig, EnvironmentParams, Simulation, load_environment, simulate
from .config import KINDS, ExperimentConfig

COLUMNS = ("experiment", "setting", "n", "replication", "estimator", "target", "level", "estimate", "truth", "error")
METHODS = ("DSL", "NN", "PTO")

_KIND_ID = {k: i for i, k in enumerate(KINDS)}
_SETTING_ID = {"hx": 0, "no-hx": 1}


@dataclass(frozen=True)
class ExperimentResult:
    """Long-format rows, sorted by key columns so output bytes do not depend on scheduling."""

    kind: str
    rows: Tuple[dict, ...]
    config: Optional[ExperimentConfig] = None

    @classmethod
    def build(cls, kind: str, rows: Iterable[dict], config: Optional[ExperimentConfig] = None):
        return cls(kind, tuple(sorted(rows, key=_row_key)), config)

    def select(self, **match) -> List[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def column(self, name: str, **match) -> np.ndarray:
        return np.array([r[name] for r in self.select(**match)], dtype=float)

    def subset(self, experiment: str) -> "ExperimentResult":
        return ExperimentResult(experiment, tuple(self.select(experiment=experiment)), self.config)


def _row_key(r: dict):
    level = r["level"]
    return (r["experiment"], r["setting"], r["n"], r["replication"], r["estimator"], r["target"],
            -math.inf if math.isnan(level) else level)


def _row(experiment, setting, n, rep, estimator, target, estimate, truth, level=math.nan) -> dict:
    return {
        "experiment": experiment, "setting": setting, "n": int(n), "replication": int(rep),
        "estimator": estimator, "target": target, "level": float(level),
        "estimate": float(estimate), "truth": float(truth), "error": float(estimate - truth),
    }


def replication_seed(master: int, *counters: int) -> int:
    """Counter-based child seed: independent of how many other replications run."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(int(c) for c in counters))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@lru_cache(maxsize=8)
def _environment(path: Optional[str]) -> EnvironmentConfig:
    return load_environment(path)


def _params(config: ExperimentConfig, setting: str) -> EnvironmentParams:
    params = _environment(config.environment).params
    return params.without_hx() if setting == "no-hx" else params


def _simulate(config: ExperimentConfig, setting: str, n: int, seed: int, extended: bool = False) -> Simulation:
    env = _environment(config.environment)
    evaluation = env.evaluation if extended else env.historical
    return simulate(_params(config, setting).with_seed(seed), n, env.logging_policy(), env.historical, evaluation)


def _moments(config: ExperimentConfig, sim: Simulation, seed: int) -> ConditionalMoments:
    if config.moments == "oracle":
        return ConditionalMoments(*sim.historical_moments())
    return plugin_moments(sim.sample, seed=seed)


def _pmap(fn: Callable, tasks: List[tuple], threads: int) -> List[list]:
    if threads <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _tasks(config: ExperimentConfig, reps: Optional[int] = None) -> List[tuple]:
    return [
        (config, setting, j, n, r)
        for setting in config.settings
        for j, n in enumerate(config.sample_sizes)
        for r in range(config.replications if reps is None else reps)
    ]


# ---------------------------------------------------------------------------
# constant-policy evaluation: RMSE vs n and the naive/optimal scatter


def _constant_policy_task(config: ExperimentConfig, setting: str, j: int, n: int, r: int) -> List[dict]:
    seed = replication_seed(config.seed, _KIND_ID[config.kind], _SETTING_ID[setting], j, r)
    sim = _simulate(config, setting, n, seed)
    env = _environment(config.environment)
    hist = env.historical
    idx = hist.index_of(config.target_level)
    policy = constant_policy(idx, hist.size)
    truth = empirical_value(sim.true_rewards, policy, sim.features)
    sample = sim.sample
    designs = build_design(BasisSpec.polynomial(config.basis_degree), hist, hist)
    target = f"constant:{float(hist.values[idx])!r}"
    rows = []
    for est in config.estimators:
        if est == "DM":
            model = PtoRewardModel(fit_pto(sample), PremiumRule.from_params(sim.params))
            value = dm_value(sample, model, policy, hist).value
        elif est == "IPS":
            value = ips_value(sample, policy).value
        elif est == "KIPS-naive":
            value = kips_value(sample, policy, naive_kernels(sample, designs)).value
        else:
            value = kips_value(sample, policy, optimal_kernels(sample, designs, _moments(config, sim, seed))).value
        rows.append(_row(config.kind, setting, n, r, est, target, value, truth, hist.values[idx]))
    return rows


def run_rmse_vs_n(config: ExperimentConfig) -> ExperimentResult:
    """Estimates of the constant policy's value across sample sizes and replications."""
    rows = [row for chunk in _pmap(_constant_policy_task, _tasks(config), config.threads) for row in chunk]
    return ExperimentResult.build(config.kind, rows, config)


def run_kernel_scatter(config: ExperimentConfig) -> ExperimentResult:
    """Paired naive and variance-optimal KIPS estimates per replication."""
    missing = {"KIPS-naive", "KIPS-optimal"} - set(config.estimators)
    if missing:
        raise ValueError(f"kernel-scatter needs both kernel variants; missing {sorted(missing)}")
    return run_rmse_vs_n(config)


# ---------------------------------------------------------------------------
# extrapolation to the extended grid


def _extrapolation_task(config: ExperimentConfig, setting: str, j: int, n: int, r: int) -> List[dict]:
    seed = replication_seed(config.seed, _KIND_ID[config.kind], _SETTING_ID[setting], j, r)
    sim = _simulate(config, setting, n, seed, extended=True)
    env = _environment(config.environment)
    designs = build_design(BasisSpec.polynomial(config.basis_degree), env.historical, env.evaluation)
    truth = np.sum(sim.true_rewards, axis=0) / n
    rows = []
    for est in config.estimators:
        if est == "KIPS-naive":
            ks = naive_kernels(sim.sample, designs)
        elif est == "KIPS-optimal":
            ks = optimal_kernels(sim.sample, designs, _moments(config, sim, seed))
        else:
            continue  # DM/IPS are not part of this study; IPS cannot act on the extended grid
        # column means of the pseudo-rewards are the constant-policy KIPS values
        est_values = np.sum(dsl_targets(sim.sample, ks), axis=0) / n
        for k, level in enumerate(env.evaluation.values):
            rows.append(_row(config.kind, setting, n, r, est, f"constant:{float(level)!r}", est_values[k], truth[k], level))
    return rows


def run_extrapolation(config: ExperimentConfig) -> ExperimentResult:
    """KIPS values of every constant policy on the extended evaluation grid."""
    rows = [row for chunk in _pmap(_extrapolation_task, _tasks(config), config.threads) for row in chunk]
    return ExperimentResult.build(config.kind, rows, config)


# ---------------------------------------------------------------------------
# policy learning: relative gap to the oracle and estimator bias


def _select_dsl(V: np.ndarray, X: np.ndarray, grid, held_out_fraction: float, seed: int):
    """Pick the per-row penalty by held-out KIPS value, then refit on all records."""
    n, m = V.shape
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = max(1, int(round(held_out_fraction * n)))
    hold, train = perm[:n_hold], perm[n_hold:]
    best, best_value = None, -math.inf
    for lam in grid:
        model = fit_dsl(V[train], X[train], tau=2.0 * train.size * m * lam)
        pick = dsl_policy(model).actions(X[hold])
        value = float(np.sum(V[hold, pick]) / hold.size)
        if value > best_value:
            best, best_value = lam, value
    return fit_dsl(V, X, tau=2.0 * n * m * best), best


def _policy_task(config: ExperimentConfig, setting: str, j: int, n: int, r: int) -> List[dict]:
    kid, sid = _KIND_ID["policy-gap"], _SETTING_ID[setting]
    env = _environment(config.environment)
    hist = env.historical
    designs = build_design(BasisSpec.polynomial(config.basis_degree), hist, hist)
    learn = _simulate(config, setting, n, replication_seed(config.seed, kid, sid, j, r, 0))
    fresh = _simulate(config, setting, n, replication_seed(config.seed, kid, sid, j, r, 1))
    # one reference set per configuration, shared by all learning samples
    reference = _simulate(config, setting, config.reference_size, replication_seed(config.seed, kid, sid, 2**31))

    sample = learn.sample
    ks = naive_kernels(sample, designs)
    V = dsl_targets(sample, ks)
    dsl_model, _ = _select_dsl(V, sample.features, config.dsl_penalty_grid, config.mlp.held_out_fraction,
                               replication_seed(config.seed, kid, sid, j, r, 2))
    mlp_cfg = MlpConfig(**{**config.mlp.__dict__, "seed": replication_seed(config.seed, kid, sid, j, r, 3)})
    nn = train_mlp_policy(sample, ks, mlp_cfg, targets=V).policy
    premium = PremiumRule.from_params(learn.params)
    pto_model = fit_pto(sample)
    policies = {
        "DSL": dsl_policy(dsl_model),
        "NN": nn.as_deterministic_policy(),
        "PTO": pto_policy(pto_model, hist, premium),
    }

    v_star = oracle_policy(reference.true_rewards).value
    rows = []
    for name, pol in policies.items():
        v = empirical_value(reference.true_rewards, pol, reference.features)
        rows.append(_row("policy-gap", setting, n, r, "reference-oracle", name, v, v_star))

    dm = dm_value(sample, PtoRewardModel(pto_model, premium), policies["PTO"], hist).value
    rows.append(_row("estimator-bias", setting, n, r, "DM", "PTO", dm,
                     empirical_value(learn.true_rewards, policies["PTO"], learn.features)))
    fresh_ks = naive_kernels(fresh.sample, designs)
    for name, pol in policies.items():
        est = kips_value(fresh.sample, pol, fresh_ks).value
        rows.append(_row("estimator-bias", setting, n, r, "KIPS-naive", name, est,
                         empirical_value(fresh.true_rewards, pol, fresh.features)))
    return rows


def run_policy_study(config: ExperimentConfig) -> ExperimentResult:
    """Fit DSL, NN and PTO per learning sample; emit policy-gap and estimator-bias rows together."""
    rows = [row for chunk in _pmap(_policy_task, _tasks(config), config.threads) for row in chunk]
    return ExperimentResult.build("policy-study", rows, config)


def run_policy_gap(config: ExperimentConfig) -> ExperimentResult:
    """Oracle value of each learned policy on the reference set against the optimal policy."""
    return run_policy_study(config).subset("policy-gap")


def run_estimator_bias(config: ExperimentConfig) -> ExperimentResult:
    """DM self-evaluation bias of PTO, and KIPS bias of every learned policy on fresh data."""
    return run_policy_study(config).subset("estimator-bias")


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "rmse-vs-n": run_rmse_vs_n,
    "kernel-scatter": run_kernel_scatter,
    "extrapolation": run_extrapolation,
    "policy-gap": run_policy_gap,
    "estimator-bias": run_estimator_bias,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[config.kind](config)

"""Synthetic travel-insurance market with a ground-truth expected-reward oracle.

Customers are drawn from independent uniform covariates. The insurer offers
``P = P_fair * (1 + (1 + a) * loading)`` and the customer converts with
probability ``clip(sigmoid(score) * (1 + E(x) * a), 0, 1)`` where ``E`` is a
capped, negative price elasticity. The country of destination drives both the
conversion score and the elasticity but is not part of the observed features.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import List, Optional, Sequence

import numpy as np
import yaml
from scipy.special import expit

from .core import ActionSpace, LearningSample, StochasticPolicy, fixed_probability_policy, uniform_policy

CONFIG_VERSION = 1
BLOCK_SIZE = 1024

N_CATEGORIES = 7
NUMERIC_COLUMNS = ("ticket_price", "lead_time", "passengers", "trip_duration")
OBSERVED_COLUMNS = (
    list(NUMERIC_COLUMNS)
    + [f"origin_{k}" for k in range(2, N_CATEGORIES + 1)]
    + ["return_trip"]
)
FULL_COLUMNS = OBSERVED_COLUMNS + [f"destination_{k}" for k in range(2, N_CATEGORIES + 1)]
N_OBSERVED = len(OBSERVED_COLUMNS)
N_FULL = len(FULL_COLUMNS)
RETURN_COLUMN = OBSERVED_COLUMNS.index("return_trip")

# exact moments of the covariate laws, used by the environment's own encoding
POPULATION_MEAN = np.array([1050.0, 183.0, 3.0, 15.5])
POPULATION_SD = np.sqrt(np.array([1900.0**2 / 12, (365**2 - 1) / 12, (5**2 - 1) / 12, (30**2 - 1) / 12]))

RAW_FIELDS = (
    "ticket_price",
    "lead_time",
    "passengers",
    "origin",
    "destination",
    "return_trip",
    "trip_duration",
)


@dataclass(frozen=True)
class EnvironmentParams:
    """Weights and constants of the synthetic market.

    ``alpha1`` and ``alpha2`` act on the full encoding (observed features plus
    destination dummies, length ``N_FULL``); ``alpha3`` weighs the four
    higher-order terms. ``intercept1`` / ``intercept2`` are the baseline
    log-odds of conversion and baseline log-elasticity.
    """

    alpha1: tuple
    alpha2: tuple
    alpha3: tuple
    intercept1: float = 0.0
    intercept2: float = 0.0
    lambda_loading: float = 0.05
    fair_rate: float = 0.10
    elasticity_cap: float = 4.0
    hx_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        for name, size in (("alpha1", N_FULL), ("alpha2", N_FULL), ("alpha3", 4)):
            vec = tuple(float(v) for v in getattr(self, name))
            if len(vec) != size:
                raise ValueError(f"{name} must have length {size}, got {len(vec)}")
            object.__setattr__(self, name, vec)
        if self.lambda_loading <= 0 or self.fair_rate <= 0 or self.elasticity_cap <= 0:
            raise ValueError("lambda_loading, fair_rate and elasticity_cap must be positive")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def effective_alpha3(self) -> np.ndarray:
        return np.asarray(self.alpha3) if self.hx_enabled else np.zeros(4)

    def with_seed(self, seed: int) -> "EnvironmentParams":
        return replace(self, seed=int(seed))

    def without_hx(self) -> "EnvironmentParams":
        return replace(self, hx_enabled=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("alpha1", "alpha2", "alpha3"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class EnvironmentConfig:
    params: EnvironmentParams
    historical: ActionSpace
    evaluation: ActionSpace
    logging_probabilities: Optional[tuple] = None

    def logging_policy(self) -> StochasticPolicy:
        if self.logging_probabilities is None:
            return uniform_policy(self.historical.size)
        return fixed_probability_policy(self.logging_probabilities, name="logging")

    def to_dict(self) -> dict:
        d = {
            "version": CONFIG_VERSION,
            "params": self.params.to_dict(),
            "historical_actions": list(self.historical.levels),
            "evaluation_actions": list(self.evaluation.levels),
        }
        if self.logging_probabilities is not None:
            d["logging_probabilities"] = list(self.logging_probabilities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentConfig":
        version = d.get("version")
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported environment config version {version!r}")
        probs = d.get("logging_probabilities")
        return cls(
            params=EnvironmentParams.from_dict(d["params"]),
            historical=ActionSpace(tuple(d["historical_actions"])),
            evaluation=ActionSpace(tuple(d["evaluation_actions"])),
            logging_probabilities=None if probs is None else tuple(float(p) for p in probs),
        )


def load_environment(path: Optional[str] = None) -> EnvironmentConfig:
    """Read an environment config; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("pricing_ope.configs").joinpath("env_default.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    data = yaml.safe_load(text)
    if "environment" in data:
        data = data["environment"]
    return EnvironmentConfig.from_dict(data)


def save_environment(config: EnvironmentConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def default_params() -> EnvironmentParams:
    return load_environment().params


@dataclass(frozen=True)
class RawCovariates:
    """Columnar table of raw covariates, one entry per customer."""

    ticket_price: np.ndarray
    lead_time: np.ndarray
    passengers: np.ndarray
    origin: np.ndarray
    destination: np.ndarray
    return_trip: np.ndarray
    trip_duration: np.ndarray

    def __post_init__(self):
        n = None
        for name in RAW_FIELDS:
            a = np.atleast_1d(np.asarray(getattr(self, name)))
            a = a.astype(float) if name == "ticket_price" else a.astype(np.int64)
            if n is None:
                n = a.size
            elif a.shape != (n,):
                raise ValueError(f"field {name} has shape {a.shape}, expected ({n},)")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        self._check_support()

    def _check_support(self):
        checks = {
            "ticket_price": (100.0, 2000.0),
            "lead_time": (1, 365),
            "passengers": (1, 5),
            "origin": (1, N_CATEGORIES),
            "destination": (1, N_CATEGORIES),
            "return_trip": (0, 1),
            "trip_duration": (1, 30),
        }
        for name, (lo, hi) in checks.items():
            a = getattr(self, name)
            if a.size and (a.min() < lo or a.max() > hi):
                raise ValueError(f"{name} outside support [{lo}, {hi}]")

    def __len__(self) -> int:
        return self.ticket_price.size

    def row(self, i: int) -> dict:
        return {name: getattr(self, name)[i].item() for name in RAW_FIELDS}

    def take(self, idx) -> "RawCovariates":
        return RawCovariates(**{name: getattr(self, name)[idx] for name in RAW_FIELDS})

    @classmethod
    def single(cls, ticket_price=1000.0, lead_time=30, passengers=2, origin=1, destination=1,
               return_trip=0, trip_duration=7) -> "RawCovariates":
        return cls(ticket_price, lead_time, passengers, origin, destination, return_trip, trip_duration)


@dataclass(frozen=True)
class FeatureEncoder:
    """Standardizes the four numeric covariates, one-hot encodes categoricals.

    The first category of each categorical is dropped; ``return_trip`` stays a
    0/1 indicator.
    """

    mean: tuple = tuple(POPULATION_MEAN)
    sd: tuple = tuple(POPULATION_SD)

    @classmethod
    def population(cls) -> "FeatureEncoder":
        return cls()

    @classmethod
    def fit(cls, raw: RawCovariates) -> "FeatureEncoder":
        num = _numeric_block(raw)
        sd = num.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(tuple(num.mean(axis=0)), tuple(sd))

    def transform(self, raw: RawCovariates, include_destination: bool = False) -> np.ndarray:
        num = (_numeric_block(raw) - np.asarray(self.mean)) / np.asarray(self.sd)
        cols = [num, _one_hot(raw.origin), raw.return_trip[:, None].astype(float)]
        if include_destination:
            cols.append(_one_hot(raw.destination))
        return np.hstack(cols)

    def to_dict(self) -> dict:
        return {"columns": list(NUMERIC_COLUMNS), "mean": list(self.mean), "sd": list(self.sd)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        return cls(tuple(d["mean"]), tuple(d["sd"]))


def _numeric_block(raw: RawCovariates) -> np.ndarray:
    return np.column_stack([raw.ticket_price, raw.lead_time, raw.passengers, raw.trip_duration]).astype(float)


def _one_hot(cat: np.ndarray) -> np.ndarray:
    return (cat[:, None] == np.arange(2, N_CATEGORIES + 1)[None, :]).astype(float)


POPULATION_ENCODER = FeatureEncoder.population()


def encode_full(raw: RawCovariates) -> np.ndarray:
    return POPULATION_ENCODER.transform(raw, include_destination=True)


def encode_observed(raw: RawCovariates) -> np.ndarray:
    return POPULATION_ENCODER.transform(raw, include_destination=False)


# ---------------------------------------------------------------------------
# randomness: one Philox stream per block of BLOCK_SIZE records


def _record_uniforms(seed: int, n: int, width: int = 9) -> np.ndarray:
    """Uniforms for records 0..n-1; row i depends only on (seed, i)."""
    out = np.empty((n, width))
    for b, start in enumerate(range(0, n, BLOCK_SIZE)):
        stop = min(start + BLOCK_SIZE, n)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(b,))
        rng = np.random.Generator(np.random.Philox(ss))
        out[start:stop] = rng.random((BLOCK_SIZE, width))[: stop - start]
    return out


def _covariates_from_uniforms(u: np.ndarray) -> RawCovariates:
    return RawCovariates(
        ticket_price=100.0 + 1900.0 * u[:, 0],
        lead_time=1 + np.floor(365 * u[:, 1]).astype(np.int64),
        passengers=1 + np.floor(5 * u[:, 2]).astype(np.int64),
        origin=1 + np.floor(N_CATEGORIES * u[:, 3]).astype(np.int64),
        destination=1 + np.floor(N_CATEGORIES * u[:, 4]).astype(np.int64),
        return_trip=np.floor(2 * u[:, 5]).astype(np.int64),
        trip_duration=1 + np.floor(30 * u[:, 6]).astype(np.int64),
    )


def sample_covariates(params: EnvironmentParams, n: int) -> RawCovariates:
    if n < 1:
        raise ValueError("n must be at least 1")
    return _covariates_from_uniforms(_record_uniforms(params.seed, n))


# ---------------------------------------------------------------------------
# market model


def fair_premium(raw: RawCovariates, params: EnvironmentParams) -> np.ndarray:
    return params.fair_rate * raw.ticket_price


def charged_premium(raw: RawCovariates, a, params: EnvironmentParams) -> np.ndarray:
    return fair_premium(raw, params) * (1.0 + (1.0 + np.asarray(a)) * params.lambda_loading)


def higher_order_terms(X_full: np.ndarray) -> np.ndarray:
    """(n, 4) matrix of (x1^3, x1*x2, x1*x3, x3*x6)."""
    x1, x2, x3, x6 = X_full[:, 0], X_full[:, 1], X_full[:, 2], X_full[:, RETURN_COLUMN]
    return np.column_stack([x1**3, x1 * x2, x1 * x3, x3 * x6])


def _elasticity_from_full(X_full: np.ndarray, params: EnvironmentParams) -> np.ndarray:
    log_e = params.intercept2 + X_full @ np.asarray(params.alpha2)
    log_e = log_e + higher_order_terms(X_full) @ params.effective_alpha3
    return -np.minimum(np.exp(log_e), params.elasticity_cap)


def _baseline_from_full(X_full: np.ndarray, params: EnvironmentParams) -> np.ndarray:
    return expit(params.intercept1 + X_full @ np.asarray(params.alpha1))


def elasticity(raw: RawCovariates, params: EnvironmentParams) -> np.ndarray:
    return _elasticity_from_full(encode_full(raw), params)


def baseline_conversion(raw: RawCovariates, params: EnvironmentParams) -> np.ndarray:
    return _baseline_from_full(encode_full(raw), params)


def _conversion(base: np.ndarray, E: np.ndarray, a) -> np.ndarray:
    """Clipped conversion probability; 2-D ``a`` of shape (n or 1, m) gives an (n, m) grid."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        return np.clip(base[:, None] * (1.0 + E[:, None] * a), 0.0, 1.0)
    return np.clip(base * (1.0 + E * a), 0.0, 1.0)


def conversion_probability(raw: RawCovariates, a, params: EnvironmentParams) -> np.ndarray:
    """Acceptance probability for a scalar action or one action per customer.

    Pass a 2-D ``a`` of shape (1, m) to evaluate a whole grid of levels.
    """
    X_full = encode_full(raw)
    return _conversion(_baseline_from_full(X_full, params), _elasticity_from_full(X_full, params), a)


def expected_rewards(raw: RawCovariates, levels: Sequence[float], params: EnvironmentParams) -> np.ndarray:
    """(n, m) true expected reward for every level of an action grid."""
    return reward_moments(raw, levels, params)[0]


def reward_moments(raw: RawCovariates, levels: Sequence[float], params: EnvironmentParams):
    """Conditional mean and variance of the reward for every level (Bernoulli margin)."""
    levels = np.asarray(levels, dtype=float)
    X_full = encode_full(raw)
    base, E = _baseline_from_full(X_full, params), _elasticity_from_full(X_full, params)
    p = _conversion(base, E, levels[None, :])
    margin = fair_premium(raw, params)[:, None] * (1.0 + levels[None, :]) * params.lambda_loading
    return p * margin, margin**2 * p * (1.0 - p)


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimulatedRecord:
    raw: dict
    encoded_observed: np.ndarray
    action_index: int
    conversion: bool
    reward: float
    true_expected_rewards: np.ndarray


@dataclass(frozen=True)
class Simulation:
    """Columnar output of :func:`simulate`.

    ``sample`` is the learning sample over observed features (destination
    excluded); ``true_rewards`` holds the oracle expected reward of every
    record under each level of ``evaluation``.
    """

    params: EnvironmentParams
    raw: RawCovariates
    features_full: np.ndarray
    sample: LearningSample
    evaluation: ActionSpace
    true_rewards: np.ndarray

    @property
    def n(self) -> int:
        return self.sample.n

    @property
    def features(self) -> np.ndarray:
        return self.sample.features

    @property
    def historical(self) -> ActionSpace:
        return self.sample.action_space

    def true_rewards_on(self, actions: ActionSpace) -> np.ndarray:
        if actions.same_as(self.evaluation):
            return self.true_rewards
        return expected_rewards(self.raw, actions.values, self.params)

    def historical_moments(self):
        """(mu, sigma2), each (n, d), of the reward under every historical action."""
        return reward_moments(self.raw, self.historical.values, self.params)

    def record(self, i: int) -> SimulatedRecord:
        return SimulatedRecord(
            raw=self.raw.row(i),
            encoded_observed=self.sample.features[i],
            action_index=int(self.sample.actions[i]),
            conversion=bool(self.sample.conversions[i]),
            reward=float(self.sample.rewards[i]),
            true_expected_rewards=self.true_rewards[i],
        )

    def records(self) -> List[SimulatedRecord]:
        return [self.record(i) for i in range(self.n)]

    def subset(self, idx) -> "Simulation":
        return Simulation(
            self.params,
            self.raw.take(idx),
            self.features_full[idx],
            self.sample.subset(idx),
            self.evaluation,
            self.true_rewards[idx],
        )


def simulate(
    params: EnvironmentParams,
    n: int,
    logging_policy: StochasticPolicy,
    historical: ActionSpace,
    evaluation: ActionSpace,
) -> Simulation:
    """Draw ``n`` customers, logged actions, conversions and rewards.

    Deterministic in ``params.seed``; record ``i`` depends only on the seed and
    ``i``, so a larger ``n`` extends a smaller run.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if logging_policy.n_actions != historical.size:
        raise ValueError("logging policy and historical action space differ in size")
    u = _record_uniforms(params.seed, n)
    raw = _covariates_from_uniforms(u)
    X_full = encode_full(raw)
    X_obs = X_full[:, :N_OBSERVED]
    props = logging_policy.probabilities(X_obs)
    if np.any(props <= 0):
        raise ValueError("logging policy must give every historical action positive probability")
    cdf = np.cumsum(props, axis=1)
    actions = np.minimum((u[:, 7:8] >= cdf).sum(axis=1), historical.size - 1)
    a = historical.values[actions]
    base, E = _baseline_from_full(X_full, params), _elasticity_from_full(X_full, params)
    p = _conversion(base, E, a)
    conversions = (u[:, 8] < p).astype(float)
    rewards = conversions * fair_premium(raw, params) * (1.0 + a) * params.lambda_loading
    ev = evaluation.values
    p_eval = _conversion(base, E, ev[None, :])
    true_rewards = p_eval * fair_premium(raw, params)[:, None] * (1.0 + ev[None, :]) * params.lambda_loading
    sample = LearningSample(X_obs, actions, rewards, props, historical, conversions)
    return Simulation(params, raw, X_full, sample, evaluation, true_rewards)


def simulate_config(config: EnvironmentConfig, n: int, seed: Optional[int] = None) -> Simulation:
    params = config.params if seed is None else config.params.with_seed(seed)
    return simulate(params, n, config.logging_policy(), config.historical, config.evaluation)


# ---------------------------------------------------------------------------
# CSV exchange format


def _level_tag(v: float) -> str:
    return repr(float(v))


def dataset_columns(historical: ActionSpace, evaluation: ActionSpace) -> List[str]:
    return (
        list(RAW_FIELDS)
        + ["action_index", "action"]
        + [f"propensity_{_level_tag(v)}" for v in historical.levels]
        + ["conversion", "reward"]
        + [f"true_reward_{_level_tag(v)}" for v in evaluation.levels]
    )


def write_dataset_csv(sim: Simulation, path: str) -> None:
    cols = dataset_columns(sim.historical, sim.evaluation)
    s = sim.sample
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(sim.n):
            r = sim.raw
            w.writerow(
                [repr(float(r.ticket_price[i])), int(r.lead_time[i]), int(r.passengers[i]), int(r.origin[i]),
                 int(r.destination[i]), int(r.return_trip[i]), int(r.trip_duration[i]),
                 int(s.actions[i]), repr(float(sim.historical.levels[s.actions[i]]))]
                + [repr(float(v)) for v in s.propensities[i]]
                + [int(s.conversions[i]), repr(float(s.rewards[i]))]
                + [repr(float(v)) for v in sim.true_rewards[i]]
            )


@dataclass(frozen=True)
class Dataset:
    """Contents of a dataset CSV."""

    raw: RawCovariates
    actions: np.ndarray
    propensities: np.ndarray
    conversions: np.ndarray
    rewards: np.ndarray
    historical: ActionSpace
    evaluation: ActionSpace
    true_rewards: np.ndarray = field(repr=False)

    def learning_sample(self, encoder: FeatureEncoder = POPULATION_ENCODER) -> LearningSample:
        return LearningSample(
            encoder.transform(self.raw), self.actions, self.rewards, self.propensities, self.historical, self.conversions
        )


def read_dataset_csv(path: str) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    if not rows:
        raise ValueError(f"{path}: dataset has no records")
    data = np.array(rows, dtype=float)
    col = {name: j for j, name in enumerate(header)}
    missing = [c for c in RAW_FIELDS + ("action_index", "conversion", "reward") if c not in col]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    prop_cols = [h for h in header if h.startswith("propensity_")]
    true_cols = [h for h in header if h.startswith("true_reward_")]
    historical = ActionSpace(tuple(float(h[len("propensity_"):]) for h in prop_cols))
    evaluation = ActionSpace(tuple(float(h[len("true_reward_"):]) for h in true_cols)) if true_cols else historical
    raw = RawCovariates(**{name: data[:, col[name]] for name in RAW_FIELDS})
    true = data[:, [col[h] for h in true_cols]] if true_cols else np.full((len(rows), evaluation.size), np.nan)
    return Dataset(
        raw=raw,
        actions=data[:, col["action_index"]].astype(np.int64),
        propensities=data[:, [col[h] for h in prop_cols]],
        conversions=data[:, col["conversion"]],
        rewards=data[:, col["reward"]],
        historical=historical,
        evaluation=evaluation,
        true_rewards=true,
    )

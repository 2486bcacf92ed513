"""Portable JSON policy artifacts: fitted coefficients plus feature standardization constants."""
from __future__ import annotations

import json
from typing import Optional

from .. import __version__
from ..core import ActionSpace
from ..optimize import DslModel, MlpPolicy, PremiumRule, PtoModel, dsl_policy, pto_policy
from ..simenv import OBSERVED_COLUMNS, FeatureEncoder

ARTIFACT_FORMAT = "pricing-ope-policy"
ARTIFACT_VERSION = 1
METHODS = ("dsl", "nn", "pto")


def policy_artifact(method: str, model, encoder: FeatureEncoder, historical: ActionSpace,
                    evaluation: ActionSpace, premium: Optional[PremiumRule] = None) -> dict:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    art = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "library_version": __version__,
        "method": method,
        "features": list(OBSERVED_COLUMNS),
        "encoder": encoder.to_dict(),
        "historical_actions": list(historical.levels),
        "evaluation_actions": list(evaluation.levels),
        "model": model.to_dict(),
    }
    if method == "pto":
        if premium is None:
            raise ValueError("a PTO artifact needs the premium rule")
        art["premium"] = {"fair_rate": premium.fair_rate, "lambda_loading": premium.lambda_loading}
    return art


def save_policy(artifact: dict, path: str) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(artifact, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write policy artifact {path}: {exc}") from exc


def load_policy(path: str):
    """Returns (deterministic policy on encoded features, encoder, evaluation action space)."""
    with open(path) as fh:
        art = json.load(fh)
    if art.get("format") != ARTIFACT_FORMAT or art.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"{path}: not a version-{ARTIFACT_VERSION} policy artifact")
    encoder = FeatureEncoder.from_dict(art["encoder"])
    evaluation = ActionSpace(tuple(art["evaluation_actions"]))
    method = art["method"]
    if method == "dsl":
        policy = dsl_policy(DslModel.from_dict(art["model"]))
    elif method == "nn":
        policy = MlpPolicy.from_dict(art["model"]).as_deterministic_policy()
    elif method == "pto":
        premium = PremiumRule(art["premium"]["fair_rate"], art["premium"]["lambda_loading"], encoder)
        policy = pto_policy(PtoModel.from_dict(art["model"]), evaluation, premium)
    else:
        raise ValueError(f"{path}: unknown method {method!r}")
    if policy.n_actions != evaluation.size:
        raise ValueError(f"{path}: model acts on {policy.n_actions} actions, artifact lists {evaluation.size}")
    return policy, encoder, evaluation

"""Policy learners: data-shared Lasso, softmax MLP, predict-then-optimize, oracle."""
from .dsl import ConvergenceError, DslModel, dsl_policy, dsl_targets, fit_dsl
from .mlp import MlpConfig, MlpPolicy, TrainingResult, objective_and_gradient, train_mlp_policy
from .oracle import OracleResult, oracle_policy
from .pto import PremiumRule, PtoModel, PtoRewardModel, SeparationError, fit_pto, pto_policy

__all__ = [
    "ConvergenceError", "DslModel", "dsl_policy", "dsl_targets", "fit_dsl",
    "MlpConfig", "MlpPolicy", "TrainingResult", "objective_and_gradient", "train_mlp_policy",
    "OracleResult", "oracle_policy",
    "PremiumRule", "PtoModel", "PtoRewardModel", "SeparationError", "fit_pto", "pto_policy",
]

"""Command line entry point: simulate, evaluate, kernel, optimize, experiment."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import List, Optional

import numpy as np
import yaml

from ..core import ActionSpace, constant_policy, fixed_probability_policy
from ..estimators import (
    TableRewardModel,
    dm_value,
    estimator_diagnostics,
    ips_value,
    kips_value,
)
from ..kernel import BasisSpec, build_design, kernel_matrix, naive_kernels, naive_weights, optimal_kernels, \
    plugin_moments
from ..optimize import MlpConfig, PremiumRule, dsl_policy, dsl_targets, fit_dsl, fit_pto, train_mlp_policy
from ..simenv import POPULATION_ENCODER, load_environment, read_dataset_csv, simulate, write_dataset_csv
from .artifacts import load_policy, policy_artifact, save_policy
from .config import KINDS, desk_scale, load_experiment, paper_scale
from .experiments import run_experiment
from .outputs import emit_outputs, summarize


def _levels(text: str) -> ActionSpace:
    return ActionSpace(tuple(float(v) for v in text.split(",")))


def _makedirs(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise SystemExit(f"cannot create {path}: {exc}")


def cmd_simulate(args) -> int:
    env = load_environment(args.config)
    params = env.params if args.seed is None else env.params.with_seed(args.seed)
    if args.no_hx:
        params = params.without_hx()
    evaluation = env.evaluation if args.extended else env.historical
    sim = simulate(params, args.n, env.logging_policy(), env.historical, evaluation)
    _makedirs(args.out)
    path = os.path.join(args.out, "dataset.csv")
    write_dataset_csv(sim, path)
    print(f"wrote {sim.n} records to {path}")
    return 0


def _resolve_policy(spec: str, historical: ActionSpace):
    if spec.startswith("constant:"):
        level = float(spec.split(":", 1)[1])
        return constant_policy(historical.index_of(level), historical.size), historical
    policy, _, evaluation = load_policy(spec)
    return policy, evaluation


def cmd_evaluate(args) -> int:
    data = read_dataset_csv(args.data)
    sample = data.learning_sample(POPULATION_ENCODER)
    policy, evaluation = _resolve_policy(args.policy, data.historical)
    kernels = designs = None
    if args.estimator == "ips":
        est = ips_value(sample, policy, evaluation)
    elif args.estimator == "dm-oracle":
        if not evaluation.same_as(data.evaluation) or np.isnan(data.true_rewards).any():
            raise SystemExit("dm-oracle needs true_reward columns for the policy's action space")
        est = dm_value(sample, TableRewardModel(data.true_rewards, data.evaluation), policy, evaluation)
    else:
        designs = build_design(BasisSpec.polynomial(args.basis_degree), data.historical, evaluation)
        if args.estimator == "kips-naive":
            kernels = naive_kernels(sample, designs)
        else:
            kernels = optimal_kernels(sample, designs, plugin_moments(sample, seed=args.seed or 0), jitter=True)
        est = kips_value(sample, policy, kernels)
    report = {"estimator": est.tag, "value": est.value, "std_error": est.std_error, "n": est.n}
    if args.estimator != "dm-oracle":
        report["diagnostics"] = estimator_diagnostics(sample, policy, kernels, designs)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        _makedirs(args.out)
        with open(os.path.join(args.out, "evaluation.json"), "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_kernel(args) -> int:
    env = load_environment(args.config)
    historical = _levels(args.historical) if args.historical else env.historical
    if args.evaluation == "extended":
        evaluation = env.evaluation
    elif args.evaluation:
        evaluation = _levels(args.evaluation)
    else:
        evaluation = historical
    props = (np.array([float(v) for v in args.propensities.split(",")]) if args.propensities
             else np.full(historical.size, 1.0 / historical.size))
    fixed_probability_policy(props)  # validates
    K = kernel_matrix(build_design(BasisSpec.polynomial(args.basis_degree), historical, evaluation),
                      naive_weights(props))
    rows = [["historical"] + [repr(float(v)) for v in evaluation.levels]]
    rows += [[repr(float(h))] + [repr(float(x)) for x in K[j]] for j, h in enumerate(historical.levels)]
    if args.out:
        _makedirs(args.out)
        with open(os.path.join(args.out, "kernel.csv"), "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
    return 0


def _write_log(path: str, rows: List[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_optimize(args) -> int:
    data = read_dataset_csv(args.data)
    sample = data.learning_sample(POPULATION_ENCODER)
    hyper = {}
    if args.config:
        with open(args.config) as fh:
            hyper = yaml.safe_load(fh) or {}
    designs = build_design(BasisSpec.polynomial(int(hyper.get("basis_degree", 2))), data.historical, data.historical)
    _makedirs(args.out)
    premium = None
    if args.method == "dsl":
        V = dsl_targets(sample, naive_kernels(sample, designs))
        tau = float(hyper.get("tau", 2.0 * sample.n * V.shape[1] * float(hyper.get("penalty", 1e-3))))
        model = fit_dsl(V, sample.features, tau=tau, max_sweeps=int(hyper.get("max_sweeps", 10_000)))
        log = [{"sweep": k, "objective": v} for k, v in enumerate(model.objective_history)]
        chosen = dsl_policy(model).actions(sample.features)
    elif args.method == "nn":
        mlp = {k: v for k, v in hyper.items() if k in MlpConfig.__dataclass_fields__}
        if args.seed is not None:
            mlp["seed"] = args.seed
        result = train_mlp_policy(sample, naive_kernels(sample, designs), MlpConfig(**mlp))
        model, log = result.policy, result.log
        chosen = model.as_deterministic_policy().actions(sample.features)
    else:
        env = load_environment(hyper.get("environment"))
        premium = PremiumRule.from_params(env.params)
        model = fit_pto(sample, max_iter=int(hyper.get("max_iter", 100)))
        log = [{"iterations": model.iterations}]
        chosen = None
    art = policy_artifact(args.method, model, POPULATION_ENCODER, data.historical, data.historical, premium)
    save_policy(art, os.path.join(args.out, "policy.json"))
    _write_log(os.path.join(args.out, "training_log.csv"), log)
    msg = f"wrote {args.method} policy to {os.path.join(args.out, 'policy.json')}"
    if chosen is not None:
        msg += f"; action shares {np.bincount(chosen, minlength=data.historical.size) / sample.n}"
    print(msg)
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        config = load_experiment(args.config)
        if config.kind != args.kind:
            raise SystemExit(f"config describes {config.kind!r}, not {args.kind!r}")
    elif args.paper_scale:
        config = paper_scale(args.kind)
    else:
        config = desk_scale(args.kind)
    config = config.with_overrides(seed=args.seed, threads=args.threads, output_dir=args.out)
    if args.no_hx:
        config = config.with_overrides(settings=("no-hx",))
    result = run_experiment(config)
    files = emit_outputs(result, config.output_dir, plots=args.plots)
    for s in summarize(result):
        print(f"{s['experiment']:15s} {s['setting']:6s} n={s['n']:<8d} {s['estimator']:16s} {s['target']:22s} "
              f"mean_err={s['mean_error']:+.5f} rmse={s['rmse']:.5f}")
    print("outputs:", ", ".join(sorted(files.values())))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pricing-ope", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic learning sample and write dataset.csv")
    p.add_argument("--config", help="environment YAML (default: packaged)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--out", default=".")
    p.add_argument("--no-hx", action="store_true", help="drop the higher-order elasticity term")
    p.add_argument("--extended", action="store_true", help="true rewards on the extended grid")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="estimate a policy's value from a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", required=True, help="constant:<level> or a policy.json artifact")
    p.add_argument("--estimator", choices=("ips", "kips-naive", "kips-optimal", "dm-oracle"), default="kips-naive")
    p.add_argument("--basis-degree", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("kernel", help="print the naive kernel matrix")
    p.add_argument("--config")
    p.add_argument("--historical", help="comma-separated historical levels")
    p.add_argument("--evaluation", help="comma-separated levels or 'extended'")
    p.add_argument("--propensities", help="comma-separated logging probabilities (default uniform)")
    p.add_argument("--basis-degree", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("optimize", help="fit a DSL, NN or PTO pricing policy")
    p.add_argument("--method", choices=("dsl", "nn", "pto"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="hyperparameter YAML")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="run a Monte-Carlo study and write CSV outputs")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", help="experiment YAML")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results")
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", action="store_true", help="minutes on a laptop (default)")
    scale.add_argument("--paper-scale", action="store_true", help="up to a million records per sample")
    p.add_argument("--no-hx", action="store_true", help="run only the setting without h(x)")
    p.add_argument("--threads", type=int)
    p.add_argument("--plots", action="store_true", help="also write an SVG plot (needs matplotlib)")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

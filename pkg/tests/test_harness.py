import csv
import json
import math
import os

import numpy as np
import pytest
import yaml

from pricing_ope.core import constant_policy, empirical_value
from pricing_ope.estimators import TableRewardModel, dm_value
from pricing_ope.harness import cli
from pricing_ope.harness.config import ExperimentConfig, desk_scale, load_experiment, paper_scale, save_experiment
from pricing_ope.harness.experiments import (
    COLUMNS,
    replication_seed,
    run_experiment,
    run_extrapolation,
    run_kernel_scatter,
    run_policy_study,
    run_rmse_vs_n,
)
from pricing_ope.harness.outputs import SUMMARY_COLUMNS, emit_outputs, summarize
from pricing_ope.optimize import MlpConfig
from pricing_ope.simenv import load_environment, simulate_config

TINY_MLP = MlpConfig(hidden=(4,), epochs=2, restarts=1, batch_size=512)


def tiny(kind, **kw):
    base = dict(sample_sizes=(2_000,), replications=3)
    base.update(kw)
    return ExperimentConfig(kind=kind, **base)


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError, match="unknown experiment kind"):
        ExperimentConfig(kind="nope", sample_sizes=(100,), replications=1)
    with pytest.raises(ValueError):
        tiny("rmse-vs-n", replications=0)
    with pytest.raises(ValueError):
        tiny("rmse-vs-n", settings=("hx", "maybe"))
    with pytest.raises(ValueError):
        tiny("rmse-vs-n", estimators=("SNIPS",))
    with pytest.raises(ValueError, match="version"):
        tiny("rmse-vs-n", version=99)
    with pytest.raises(ValueError, match="unknown experiment config keys"):
        ExperimentConfig.from_dict({**tiny("rmse-vs-n").to_dict(), "colour": "red"})


def test_config_round_trip_and_hash(tmp_path):
    cfg = tiny("policy-gap", mlp=TINY_MLP, settings=("hx", "no-hx"))
    path = tmp_path / "exp.yaml"
    save_experiment(cfg, str(path))
    assert load_experiment(str(path)) == cfg
    assert yaml.safe_load(path.read_text())["experiment"]["version"] == 1
    h = cfg.hash()
    assert cfg.with_overrides(output_dir="elsewhere", threads=4).hash() == h
    for change in [dict(seed=1), dict(replications=4), dict(basis_degree=1), dict(target_level=0.1),
                   dict(moments="plugin"), dict(mlp=MlpConfig(epochs=3)), dict(dsl_penalty_grid=(0.5,)),
                   dict(reference_size=5_000), dict(environment="x.yaml")]:
        assert cfg.with_overrides(**change).hash() != h, change


def test_presets():
    for kind in ("rmse-vs-n", "kernel-scatter", "extrapolation", "policy-gap", "estimator-bias"):
        assert max(desk_scale(kind).sample_sizes) <= 200_000
        assert max(paper_scale(kind).sample_sizes) >= max(desk_scale(kind).sample_sizes)
    assert desk_scale("rmse-vs-n").replications == 200
    assert desk_scale("policy-gap").replications == 10
    assert desk_scale("rmse-vs-n", replications=7).replications == 7


def test_replication_seeds_are_counter_based():
    assert replication_seed(0, 1, 2) == replication_seed(0, 1, 2)
    seeds = {replication_seed(0, 0, 0, 0, r) for r in range(500)}
    assert len(seeds) == 500
    assert replication_seed(1, 0, 0) != replication_seed(0, 0, 0)


# ---------------------------------------------------------------- runners

@pytest.fixture(scope="module")
def rmse_result():
    return run_rmse_vs_n(tiny("rmse-vs-n", sample_sizes=(1_000, 3_000)))


def test_rmse_rows_carry_truth(rmse_result):
    assert len(rmse_result.rows) == 2 * 3 * 4
    for r in rmse_result.rows:
        assert set(r) == set(COLUMNS)
        assert math.isfinite(r["truth"]) and r["error"] == r["estimate"] - r["truth"]
        assert r["target"] == "constant:0.0"


def test_summary_rmse_matches_long_rows(rmse_result):
    for s in summarize(rmse_result):
        err = rmse_result.column("error", n=s["n"], estimator=s["estimator"])
        assert abs(s["rmse"] - np.sqrt(np.mean(err**2))) <= 1e-12
        assert s["count"] == err.size


def test_emit_outputs_byte_identical(tmp_path):
    cfg = tiny("rmse-vs-n", sample_sizes=(1_000,))
    a = emit_outputs(run_experiment(cfg), str(tmp_path / "a"))
    b = emit_outputs(run_experiment(cfg), str(tmp_path / "b"))
    for key in ("long", "summary", "manifest"):
        assert open(a[key], "rb").read() == open(b[key], "rb").read()
    with open(a["long"]) as fh:
        assert tuple(next(csv.reader(fh))) == COLUMNS
    with open(a["summary"]) as fh:
        assert tuple(next(csv.reader(fh))) == SUMMARY_COLUMNS
    manifest = json.load(open(a["manifest"]))
    assert manifest["config_hash"] == cfg.hash() and manifest["master_seed"] == 0
    assert manifest["library_version"] and manifest["rows"] == 12
    c = emit_outputs(run_experiment(cfg.with_overrides(seed=5)), str(tmp_path / "c"))
    assert json.load(open(c["manifest"]))["config_hash"] != manifest["config_hash"]


def test_emit_outputs_reports_path_on_failure(tmp_path, rmse_result):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_outputs(rmse_result, str(blocker / "sub"))


def test_threads_do_not_change_rows():
    cfg = tiny("rmse-vs-n", sample_sizes=(1_000,), replications=2)
    assert run_rmse_vs_n(cfg).rows == run_rmse_vs_n(cfg.with_overrides(threads=2)).rows


def test_larger_replication_count_extends_smaller_one():
    small = run_rmse_vs_n(tiny("rmse-vs-n", sample_sizes=(1_000,), replications=2))
    big = run_rmse_vs_n(tiny("rmse-vs-n", sample_sizes=(1_000,), replications=3))
    assert set(tuple(r.items()) for r in small.rows) <= set(tuple(r.items()) for r in big.rows)


def test_kernel_scatter_needs_both_kernels():
    with pytest.raises(ValueError, match="both kernel variants"):
        run_kernel_scatter(tiny("kernel-scatter", estimators=("KIPS-naive",)))


def test_plugin_moments_variant_runs():
    res = run_kernel_scatter(tiny("kernel-scatter", estimators=("KIPS-naive", "KIPS-optimal"), moments="plugin"))
    naive = res.column("estimate", estimator="KIPS-naive")
    opt = res.column("estimate", estimator="KIPS-optimal")
    assert naive.size == opt.size == 3 and np.all(np.isfinite(opt))


def test_extrapolation_covers_extended_grid():
    res = run_extrapolation(tiny("extrapolation", replications=2, estimators=("KIPS-naive",)))
    levels = sorted({r["level"] for r in res.rows})
    assert len(levels) == 61 and levels[0] == pytest.approx(-0.3) and levels[-1] == pytest.approx(0.3)


def test_oracle_reward_dm_has_zero_bias():
    env = load_environment()
    sim = simulate_config(env, 2_000, seed=3)
    pol = constant_policy(2, env.evaluation.size)
    est = dm_value(sim.sample, TableRewardModel(sim.true_rewards, env.evaluation), pol, env.evaluation).value
    assert est - empirical_value(sim.true_rewards, pol, sim.features) == 0.0


def test_dm_rmse_plateaus_under_misspecification():
    res = run_rmse_vs_n(tiny("rmse-vs-n", sample_sizes=(50_000, 200_000), replications=20, estimators=("DM",)))
    rmse = {s["n"]: s["rmse"] for s in summarize(res)}
    assert rmse[50_000] / rmse[200_000] < 2.0


def test_policy_study_rows():
    cfg = tiny("policy-gap", sample_sizes=(4_000,), replications=1, settings=("hx", "no-hx"),
               reference_size=4_000, mlp=TINY_MLP, dsl_penalty_grid=(1e-3, 1e-2))
    res = run_policy_study(cfg)
    gap = res.select(experiment="policy-gap")
    bias = res.select(experiment="estimator-bias")
    assert len(gap) == 6 and len(bias) == 8
    assert all(r["estimate"] <= r["truth"] + 1e-12 for r in gap)
    assert {r["target"] for r in bias if r["estimator"] == "KIPS-naive"} == {"DSL", "NN", "PTO"}
    assert run_experiment(cfg.with_overrides(kind="estimator-bias")).rows == tuple(bias)


# ---------------------------------------------------------------- CLI

def test_cli_end_to_end(tmp_path, capsys):
    d = str(tmp_path)
    assert cli.main(["simulate", "--n", "3000", "--seed", "4", "--out", d]) == 0
    data = os.path.join(d, "dataset.csv")
    with open(data) as fh:
        header = next(csv.reader(fh))
    assert header[:9] == ["ticket_price", "lead_time", "passengers", "origin", "destination", "return_trip",
                          "trip_duration", "action_index", "action"]
    capsys.readouterr()

    cli.main(["evaluate", "--data", data, "--policy", "constant:0.0", "--estimator", "ips"])
    ips = json.loads(capsys.readouterr().out)
    cli.main(["evaluate", "--data", data, "--policy", "constant:0.0", "--estimator", "kips-naive"])
    kips = json.loads(capsys.readouterr().out)
    cli.main(["evaluate", "--data", data, "--policy", "constant:0.0", "--estimator", "dm-oracle"])
    oracle = json.loads(capsys.readouterr().out)
    assert ips["estimator"] == "IPS" and kips["estimator"] == "KIPS-naive"
    assert abs(kips["value"] - oracle["value"]) < 4 * kips["std_error"]
    assert "effective_sample_size" in kips["diagnostics"]

    cli.main(["kernel", "--historical", "0.1,0.2,0.3", "--basis-degree", "1"])
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert float(rows[1][1]) == pytest.approx(5 / 6)

    hyper = tmp_path / "mlp.yaml"
    hyper.write_text("hidden: [4]\nepochs: 2\nrestarts: 1\n")
    for method, extra in (("dsl", []), ("pto", []), ("nn", ["--config", str(hyper)])):
        out = os.path.join(d, method)
        assert cli.main(["optimize", "--method", method, "--data", data, "--out", out, "--seed", "1"] + extra) == 0
        assert os.path.exists(os.path.join(out, "training_log.csv"))
        capsys.readouterr()
        cli.main(["evaluate", "--data", data, "--policy", os.path.join(out, "policy.json")])
        assert math.isfinite(json.loads(capsys.readouterr().out)["value"])

    cfg = tmp_path / "exp.yaml"
    save_experiment(tiny("rmse-vs-n", sample_sizes=(500,), replications=2), str(cfg))
    outdir = os.path.join(d, "exp")
    assert cli.main(["experiment", "rmse-vs-n", "--config", str(cfg), "--out", outdir, "--seed", "9"]) == 0
    manifest = json.load(open(os.path.join(outdir, "manifest.json")))
    assert manifest["master_seed"] == 9
    with pytest.raises(SystemExit):
        cli.main(["experiment", "extrapolation", "--config", str(cfg)])

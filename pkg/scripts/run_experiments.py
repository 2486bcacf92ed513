#!/usr/bin/env python3
"""Run one or all Monte-Carlo studies and write CSVs, a manifest and an SVG per study.

    python3 scripts/run_experiments.py                 # every study, desk scale
    python3 scripts/run_experiments.py rmse-vs-n --replications 50
    python3 scripts/run_experiments.py --paper-scale --threads 8 --out results/paper

The two policy kinds share one run (policy-study), since both come from the
same learned policies.
"""
import argparse
import os
import time

from pricing_ope.harness.config import desk_scale, paper_scale
from pricing_ope.harness.experiments import run_experiment, run_policy_study
from pricing_ope.harness.outputs import emit_outputs, summarize

STUDIES = ("rmse-vs-n", "kernel-scatter", "extrapolation", "policy-study")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("studies", nargs="*", choices=STUDIES, default=list(STUDIES))
    ap.add_argument("--paper-scale", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--replications", type=int, help="override the preset replication count")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results")
    ap.add_argument("--no-plots", action="store_true")
    args = ap.parse_args()

    preset = paper_scale if args.paper_scale else desk_scale
    for study in args.studies:
        kind = "policy-gap" if study == "policy-study" else study
        cfg = preset(kind).with_overrides(seed=args.seed, replications=args.replications, threads=args.threads)
        out = os.path.join(args.out, study)
        t0 = time.perf_counter()
        result = run_policy_study(cfg) if study == "policy-study" else run_experiment(cfg)
        files = emit_outputs(result, out, plots=not args.no_plots)
        print(f"== {study}: {len(result.rows)} rows in {time.perf_counter() - t0:.0f}s -> {out}")
        for s in summarize(result):
            label = s["target"] if s["experiment"] != "extrapolation" else f"level {s['level']:+.2f}"
            print(f"   {s['setting']:5s} n={s['n']:<8d} {s['estimator']:16s} {label:16s} "
                  f"mean_err {s['mean_error']:+.5f}  rmse {s['rmse']:.5f}  rel {s['mean_relative_error']:+.4f}")
        print("   files:", ", ".join(os.path.basename(p) for p in files.values()))


if __name__ == "__main__":
    main()

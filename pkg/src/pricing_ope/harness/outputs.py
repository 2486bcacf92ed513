"""CSV, manifest and optional SVG emission for experiment results."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from collections import defaultdict
from typing import Dict, List, Optional

import numpy as np

from .. import __version__
from .experiments import COLUMNS, ExperimentResult

GROUP_KEYS = ("experiment", "setting", "n", "estimator", "target", "level")
SUMMARY_COLUMNS = GROUP_KEYS + (
    "count", "mean_estimate", "sd_estimate", "mean_truth", "mean_error", "sd_error", "rmse",
    "mean_relative_error", "sd_relative_error",
)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _sd(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else math.nan


def summarize(result: ExperimentResult) -> List[dict]:
    """Per-group mean, standard deviation and RMSE of the long-format errors."""
    groups: Dict[tuple, List[dict]] = defaultdict(list)
    for r in result.rows:
        groups[tuple(r[k] for k in GROUP_KEYS)].append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple(-math.inf if isinstance(v, float) and math.isnan(v) else v
                                                  for v in k)):
        rows = groups[key]
        est = np.array([r["estimate"] for r in rows])
        truth = np.array([r["truth"] for r in rows])
        err = np.array([r["error"] for r in rows])
        rel = err / truth
        out.append({
            **dict(zip(GROUP_KEYS, key)),
            "count": len(rows),
            "mean_estimate": float(np.mean(est)),
            "sd_estimate": _sd(est),
            "mean_truth": float(np.mean(truth)),
            "mean_error": float(np.mean(err)),
            "sd_error": _sd(err),
            "rmse": float(np.sqrt(np.mean(err**2))),
            "mean_relative_error": float(np.mean(rel)),
            "sd_relative_error": _sd(rel),
        })
    return out


def _write_csv(path: str, columns, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def emit_outputs(result: ExperimentResult, output_dir: str, plots: bool = False) -> Dict[str, str]:
    """Write <kind>_long.csv, <kind>_summary.csv, manifest.json and optionally <kind>.svg."""
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {output_dir}: {exc}") from exc
    files = {
        "long": os.path.join(output_dir, f"{result.kind}_long.csv"),
        "summary": os.path.join(output_dir, f"{result.kind}_summary.csv"),
    }
    _write_csv(files["long"], COLUMNS, result.rows)
    _write_csv(files["summary"], SUMMARY_COLUMNS, summarize(result))
    if plots:
        files["plot"] = os.path.join(output_dir, f"{result.kind}.svg")
        plot_result(result, files["plot"])

    manifest = {
        "kind": result.kind,
        "library_version": __version__,
        "config_hash": result.config.hash() if result.config is not None else None,
        "master_seed": result.config.seed if result.config is not None else None,
        "config": result.config.to_dict() if result.config is not None else None,
        "rows": len(result.rows),
        "files": {k: {"path": os.path.basename(p), "sha256": _sha256(p)} for k, p in files.items()},
    }
    files["manifest"] = os.path.join(output_dir, "manifest.json")
    try:
        with open(files["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {files['manifest']}: {exc}") from exc
    return files


def plot_result(result: ExperimentResult, path: str, summary: Optional[List[dict]] = None) -> None:
    """Vector plot of one experiment; matplotlib is imported only here."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = summary if summary is not None else summarize(result)
    fig, axes = plt.subplots(1, 2 if result.kind == "policy-study" else 1, figsize=(7, 4.5), squeeze=False)
    ax = axes[0, 0]
    by = defaultdict(list)
    if result.kind == "rmse-vs-n":
        for s in summary:
            by[s["estimator"]].append((s["n"], s["rmse"]))
        for est, pts in sorted(by.items()):
            n, rmse = zip(*sorted(pts))
            ax.loglog(n, rmse, marker="o", label=est)
        ax.set_xlabel("sample size n")
        ax.set_ylabel("RMSE")
        ax.legend()
    elif result.kind == "kernel-scatter":
        naive = result.column("estimate", estimator="KIPS-naive")
        opt = result.column("estimate", estimator="KIPS-optimal")
        ax.scatter(naive, opt, s=8)
        lo, hi = min(naive.min(), opt.min()), max(naive.max(), opt.max())
        ax.plot([lo, hi], [lo, hi], color="grey", lw=1)
        ax.set_xlabel("naive kernel estimate")
        ax.set_ylabel("variance-optimal kernel estimate")
    elif result.kind == "extrapolation":
        for s in summary:
            by[s["estimator"]].append((s["level"], s["rmse"]))
        for est, pts in sorted(by.items()):
            lv, rmse = zip(*sorted(pts))
            ax.plot(lv, rmse, marker=".", label=est)
        ax.set_xlabel("constant action level")
        ax.set_ylabel("RMSE")
        ax.legend()
    else:
        panels = [("policy-gap", "mean_relative_error", "sd_relative_error", "relative gap"),
                  ("estimator-bias", "mean_error", "sd_error", "bias")]
        panels = [p for p in panels if any(s["experiment"] == p[0] for s in summary)]
        for ax, (exp, mean_key, sd_key, label) in zip(axes[0], panels):
            rows = [s for s in summary if s["experiment"] == exp]
            if not rows:
                continue
            labels = [f"{s['estimator']}/{s['target']}\n{s['setting']}" for s in rows]
            ax.bar(range(len(rows)), [s[mean_key] for s in rows], yerr=[s[sd_key] for s in rows], color="grey")
            ax.set_xticks(range(len(rows)))
            ax.set_xticklabels(labels, rotation=60, fontsize=7)
            ax.axhline(0.0, color="black", lw=0.8)
            ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

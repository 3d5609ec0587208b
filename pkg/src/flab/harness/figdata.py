"""Figure-data export: run directories in, tidy CSVs out.

Every figure analog reduces to `x,series,mean,stderr` rows, where x is
the 1-based exposure number, series is a learner kind (plus `batch`
for the joint-training reference, rendered as a dashed line), and
mean/stderr aggregate over the run's seeds. The plotting side consumes
only these files.
"""

from __future__ import annotations

import json
import os
import shutil

import numpy as np

from flab.errors import ConfigError, DataFormatError
from flab.harness.csvio import read_metrics_csv, write_figure_csv

FIGURES = {
    "fig2a": {"doc": "single-exposure reconstruction curve vs batch",
              "batch": True},
    "fig2b": {"doc": "repeated-exposure reconstruction curve vs batch",
              "batch": True},
    "fig5": {"doc": "autoencoder error curve vs batch, plus sample grid",
             "batch": True, "grid": True},
    "fig6a": {"doc": "classification accuracy across learners vs batch",
              "batch": True},
    "fig7": {"doc": "episodic vs continuous memory-only training",
             "required": {"gdumb", "gdumbpp"}},
    "fig8": {"doc": "feature-forgetting triad for one run",
             "analysis": True},
}


def _load_run(run_dir):
    path = os.path.join(run_dir, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"{run_dir} has no readable manifest: {exc}") from exc
    rows = []
    ok_seeds = [r["seed"] for r in manifest["seeds"] if r["status"] == "ok"]
    if not ok_seeds:
        raise ConfigError(f"{run_dir}: no successful seeds to export")
    for seed in ok_seeds:
        rows.extend(read_metrics_csv(os.path.join(run_dir, f"seed{seed:03d}",
                                                  "metrics.csv")))
    return manifest, rows


def _series_points(rows, metric, scope_prefix="overall"):
    """(x -> [per-seed values]) for one metric at overall scope."""
    cells = {}
    for r in rows:
        if r.metric == metric and r.scope == scope_prefix:
            cells.setdefault(r.exposure, []).append(r.value)
    return cells


def _mean_stderr_points(series, cells):
    pts = []
    for x in sorted(cells):
        v = np.asarray(cells[x], dtype=np.float64)
        stderr = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        pts.append((float(x), series, float(v.mean()), stderr))
    return pts


def _curve_metric(manifest, rows):
    """The run's own headline metric (not batch_, not analysis)."""
    names = {r.metric for r in rows
             if r.scope == "overall" and not r.metric.startswith("batch_")}
    if len(names) != 1:
        raise DataFormatError(
            f"run {manifest['name']}: expected one curve metric, found {sorted(names)}")
    return names.pop()


def export_figure_data(run_dirs, figure_id, out_dir):
    """Build <figure_id>.csv (and companions) under out_dir."""
    if figure_id not in FIGURES:
        raise ConfigError(f"unknown figure {figure_id!r}; choose from {sorted(FIGURES)}")
    spec = FIGURES[figure_id]
    if not run_dirs:
        raise ConfigError("export needs at least one run directory")
    os.makedirs(out_dir, exist_ok=True)
    runs = [_load_run(d) for d in run_dirs]

    if spec.get("analysis"):
        return _export_analysis(runs[0], figure_id, out_dir)

    points = []
    kinds_seen = set()
    batch_done = False
    xcover = set()
    for manifest, rows in runs:
        kind = manifest["config"]["learner"]["kind"]
        if kind in kinds_seen:
            raise ConfigError(f"two runs share the learner kind {kind!r}")
        kinds_seen.add(kind)
        metric = _curve_metric(manifest, rows)
        cells = _series_points(rows, metric)
        if not cells:
            raise DataFormatError(f"run {manifest['name']}: no overall {metric} rows")
        xcover.update(cells)
        points.extend(_mean_stderr_points(kind, cells))

    required = spec.get("required")
    if required and not required.issubset(kinds_seen):
        missing = sorted(required - kinds_seen)
        raise ConfigError(f"{figure_id} needs runs for learners: "
                          f"{', '.join(missing)} (missing)")

    if spec.get("batch"):
        for manifest, rows in runs:
            batch_rows = [r for r in rows
                          if r.metric.startswith("batch_") and r.scope == "overall"]
            if not batch_rows:
                continue
            values = [r.value for r in batch_rows]
            v = np.asarray(values, dtype=np.float64)
            stderr = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            points.extend((float(x), "batch", float(v.mean()), stderr)
                          for x in sorted(xcover))
            batch_done = True
            break
        if not batch_done:
            raise ConfigError(f"{figure_id} wants a batch reference, but no run "
                              "recorded batch metrics (enable batch.enabled)")

    out_path = os.path.join(out_dir, f"{figure_id}.csv")
    write_figure_csv(points, out_path)
    written = [out_path]

    if spec.get("grid"):
        written.append(_export_grid(runs, figure_id, out_dir))
    return written


def _export_grid(runs, figure_id, out_dir):
    for manifest, _ in runs:
        run_dir = os.path.join(manifest["config"]["out_dir"], manifest["name"])
        for report in manifest["seeds"]:
            if report["status"] != "ok":
                continue
            src = os.path.join(run_dir, f"seed{report['seed']:03d}", "recon_grid.csv")
            if os.path.exists(src):
                dst = os.path.join(out_dir, f"{figure_id}_grid.csv")
                shutil.copyfile(src, dst)
                return dst
    raise ConfigError(f"{figure_id} wants a reconstruction grid, but no run wrote "
                      "one (enable recon_grid.enabled)")


_ANALYSIS_SERIES = [
    ("vf_probe", "vf_probe_accuracy", "analysis:vf_probe"),
    ("cka", "cka_batch", "analysis:cka"),
    ("ft_fc", "ftfc_accuracy", "analysis:ft_fc"),
]


def _export_analysis(run, figure_id, out_dir):
    manifest, rows = run
    points = []
    for series, metric, scope in _ANALYSIS_SERIES:
        cells = {}
        for r in rows:
            if r.metric == metric and r.scope == scope:
                cells.setdefault(r.exposure, []).append(r.value)
        if not cells:
            raise ConfigError(f"{figure_id} needs {metric} rows; "
                              f"run {manifest['name']} has none (enable analysis)")
        points.extend(_mean_stderr_points(series, cells))
    metric = _curve_metric(manifest, rows)
    points.extend(_mean_stderr_points("accuracy", _series_points(rows, metric)))
    out_path = os.path.join(out_dir, f"{figure_id}.csv")
    write_figure_csv(points, out_path)
    return [out_path]

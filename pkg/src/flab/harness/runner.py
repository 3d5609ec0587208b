"""Experiment execution.

One run = one config = one output directory containing per-seed metric
CSVs, optional checkpoints and reconstruction grids, an aggregate
mean-curve CSV, and a manifest with content hashes. Exposure numbers
in every artifact are 1-based; internal stream ids stay 0-based.

Stream layout per seed (all under RngStream(seed)):
  (DATA, ...)          dataset generation
  (SCHEDULE, 0|1)      exposure order
  (SCHEDULE, 2, t)     with-replacement subsampling for exposure t
  (INIT/TRAIN/MEMORY)  learner internals
  (BATCH, 0|1)         batch reference model init and batch order
  (ANALYSIS, k)        probe example choice and probe training
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time

import numpy as np

from flab import ENGINE_VERSION
from flab.analysis import cka, extract_features, finetune_fc, train_vf_probes, vf_targets
from flab.continual.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from flab.continual.learners import make_learner
from flab.continual.schedule import schedule_repeated, schedule_single
from flab.data.dataset import load_dataset, make_dataset, resolve_config, save_dataset
from flab.data.shapes import sdf_oracle
from flab.data.sprites import occupancy_from_sdf, pixel_centers
from flab.errors import ConfigError, FlabError
from flab.harness.csvio import (MetricRow, atomic_write_text, fmt,
                                read_metrics_csv, write_mean_curves_csv,
                                write_metrics_csv)
from flab.nn.losses import stable_sigmoid, weighted_softmax_cross_entropy
from flab.nn.optim import make_optimizer
from flab.rng import ANALYSIS, BATCH, INIT, SCHEDULE, RngStream
from flab.tasks import make_task, stack_images

logger = logging.getLogger("flab.harness")

MANIFEST_SCHEMA = "flab-manifest/1"
GRID_MAGIC = "#FLAB-GRID v1"


# -- config plumbing ------------------------------------------------------

def dataset_config(cfg, seed):
    return {**cfg["dataset"], "seed": seed}


def task_from_config(cfg):
    name = cfg["task"]["name"]
    if name == "proxy":
        if cfg["task"]["backbone"] == "sdf_recon":
            return make_task("sdf_recon", frame=cfg["task"]["frame"])
        return make_task("autoencoder")
    opts = {k: v for k, v in cfg["task"].items() if k != "name"}
    if name == "classification":
        opts["arch"] = cfg["model"]["arch"]
        opts["input_dim"] = cfg["dataset"]["resolution"] ** 2
    if name == "sdf_recon":
        opts = {
            "frame": opts["frame"],
            "points_per_batch": opts["points_per_batch"],
            "tau": opts["tau"],
            "eval_resolution": opts["eval_resolution"],
            "eval_per_class": opts["eval_per_class"],
            "gt_resolution": opts["gt_resolution"],
            "gt_count": opts["gt_count"],
            "pred_count": opts["pred_count"],
        }
    return make_task(name, **opts)


def dataset_cache_path(out_root, cfg, seed):
    digest = hashlib.sha256(
        json.dumps(dataset_config(cfg, seed), sort_keys=True).encode()).hexdigest()[:12]
    return os.path.join(out_root, "datasets", f"ds_{digest}_s{seed}.bin")


def dataset_for_seed(cfg, seed, out_root=None):
    """Load the cached dataset when present; otherwise generate it."""
    dcfg = dataset_config(cfg, seed)
    if out_root is not None:
        cache = dataset_cache_path(out_root, cfg, seed)
        if os.path.exists(cache):
            ds = load_dataset(cache)
            if ds.config == resolve_config(dcfg):
                return ds
            logger.warning("cache %s was built from a different dataset config; "
                           "regenerating", cache)
    return make_dataset(dcfg)


def generate_datasets(cfg, out_root):
    """gen-data: build and cache one dataset per seed."""
    paths = []
    for seed in cfg["seeds"]:
        path = dataset_cache_path(out_root, cfg, seed)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        if os.path.exists(path):
            ds = load_dataset(path)
            if ds.config == resolve_config(dataset_config(cfg, seed)):
                logger.info("seed %d: cache up to date at %s", seed, path)
                paths.append(path)
                continue
        ds = make_dataset(dataset_config(cfg, seed))
        save_dataset(ds, path)
        logger.info("seed %d: wrote %s", seed, path)
        paths.append(path)
    return paths


def make_schedule(cfg, classes, seed):
    s = cfg["schedule"]
    if s["mode"] == "single":
        return schedule_single(classes, s["per_exposure"], seed=seed)
    return schedule_repeated(classes, s["per_exposure"], s["repetitions"],
                             seed=seed, sample_k=s["sample_k"])


def exposure_data(dataset, exposure, rng):
    """Materialize this exposure's per-class training lists."""
    out = {}
    for c in exposure.class_ids:
        pool = dataset.train[c]
        if exposure.sample_rule == "with_replacement":
            idx = rng.integers(0, len(pool), size=exposure.sample_k)
            out[c] = [pool[int(i)] for i in idx]
        else:
            out[c] = list(pool)
    return out


# -- batch reference model ------------------------------------------------

def label_columns(classes):
    lut = np.full(max(classes) + 1, -1, dtype=np.int64)
    for col, c in enumerate(sorted(classes)):
        lut[c] = col
    return lut


def train_batch_oracle(cfg, task, dataset, rng, steps=None):
    """Train one model on all classes jointly.

    With steps set, training stops at exactly that optimizer-step
    budget (the step-matched reference); otherwise it runs the
    configured number of epochs.
    """
    classes = dataset.classes
    pool = dataset.examples("train")
    hy = cfg["hyper"]
    if task.name == "classification":
        model = task.build_model(rng.split(BATCH, 0), num_outputs=len(classes))
        lut = label_columns(classes)
    else:
        model = task.build_model(rng.split(BATCH, 0))
        lut = None
    opt = make_optimizer(hy["optimizer"], hy["lr"], momentum=hy["momentum"],
                         weight_decay=hy["weight_decay"])
    order_rng = rng.split(BATCH, 1)
    n = len(pool)
    bs = hy["batch_size"]
    if steps is None:
        steps = cfg["batch"]["epochs"] * ((n + bs - 1) // bs)
    if steps < 1:
        raise ConfigError("batch reference has a zero step budget")
    while opt.step_count < steps:
        order = order_rng.permutation(n)
        for start in range(0, n, bs):
            if opt.step_count >= steps:
                break
            batch = [pool[int(i)] for i in order[start:start + bs]]
            inputs, targets = task.make_batch(batch, order_rng)
            res = model.forward(inputs)
            if lut is not None:
                _, grad = weighted_softmax_cross_entropy(
                    res.outputs, lut[targets], np.ones(len(batch)))
            else:
                _, grad = task.loss(res.outputs, targets, None)
            grads = model.backward(res, grad)
            opt.step(model.parameters(), grads)
    return model, opt.step_count


def eval_model_per_class(task, model, head_classes, test_by_class):
    """Per-class metric for a bare model (no learner around it)."""
    if task.name == "classification":
        ids = np.array(sorted(head_classes))
        per = {}
        for c in sorted(test_by_class):
            exs = test_by_class[c]
            hits = []
            for start in range(0, len(exs), 256):
                imgs = stack_images(exs[start:start + 256])
                cols = np.argmax(model.forward(imgs).outputs, axis=1)
                hits.append(ids[cols] == c)
            per[c] = float(np.mean(np.concatenate(hits)))
        return per
    return task.evaluate(model, test_by_class)


# -- reconstruction grids -------------------------------------------------

def _grid_examples(dataset, count):
    """Round-robin across classes so the grid shows every shape family."""
    picked = []
    by_class = [list(dataset.test[c]) for c in dataset.classes]
    i = 0
    while len(picked) < count and any(by_class):
        lane = by_class[i % len(by_class)]
        if lane:
            picked.append(lane.pop(0))
        i += 1
    if len(picked) < count:
        raise ConfigError(f"test split has fewer than {count} examples")
    return picked


def _reconstruct(task, model, examples):
    images = stack_images(examples)
    if task.name == "autoencoder":
        out = model.forward(images).outputs
    elif task.name == "silhouette":
        out = stable_sigmoid(model.forward(images).outputs)
    else:
        grids = task.predict_grids(model, examples)
        return np.stack([occupancy_from_sdf(g).astype(np.float64) for g in grids])
    side = int(round(np.sqrt(out.shape[1])))
    return out.reshape(len(examples), side, side)


def _grid_gt(task, examples):
    if task.name != "sdf_recon":
        return np.stack([e.image for e in examples])
    res = task.eval_resolution
    pts = pixel_centers(res).reshape(-1, 2)
    rows = []
    for e in examples:
        sdf = sdf_oracle(e.shape, task.frame, pts).reshape(res, res)
        rows.append(occupancy_from_sdf(sdf).astype(np.float64))
    return np.stack(rows)


def write_recon_grid(path, gt_row, recon_rows, labels):
    """Header plus raw float rows; one flattened image per line."""
    rows = [gt_row] + recon_rows
    h, w = gt_row.shape[1], gt_row.shape[2]
    for r in rows:
        if r.shape != rows[0].shape:
            raise ConfigError("grid rows must share image count and size")
    header = (f"{GRID_MAGIC} rows={len(rows)} cols={gt_row.shape[0]} "
              f"height={h} width={w} labels={'|'.join(labels)}")
    lines = [header]
    for row in rows:
        for img in row:
            lines.append(",".join(fmt(v) for v in np.clip(img, 0.0, 1.0).ravel()))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


# -- representation analysis ---------------------------------------------

def _snapshot_model(task, path, throwaway_rng):
    header, _ = read_checkpoint(path)
    meta = header["meta"]
    if task.name == "classification":
        model = task.build_model(throwaway_rng, num_outputs=len(meta["seen"]))
    else:
        model = task.build_model(throwaway_rng)
    load_checkpoint(model, path)
    return model, meta


def analysis_rows(cfg, seed, seed_dir, dataset, task):
    """CKA-to-batch, VF probes, and FC finetuning per saved exposure."""
    acfg = cfg["analysis"]
    ckpt_dir = os.path.join(seed_dir, "checkpoints")
    batch_path = os.path.join(ckpt_dir, "batch.ckpt")
    if not os.path.exists(batch_path):
        raise ConfigError(f"analysis needs {batch_path}; run with snapshots+batch enabled")
    snap_paths = sorted(p for p in os.listdir(ckpt_dir) if p.startswith("exposure_"))
    if not snap_paths:
        raise ConfigError(f"no exposure checkpoints under {ckpt_dir}")

    rng = RngStream(seed)
    throwaway = RngStream(seed, (INIT, 9999))
    batch_model, _ = _snapshot_model(task, batch_path, throwaway.split(0))

    test_all = dataset.examples("test")
    n_probe = min(acfg["probe_examples"], len(test_all))
    sel = rng.split(ANALYSIS, 0).permutation(len(test_all))[:n_probe]
    probe_images = stack_images([test_all[int(i)] for i in sel])
    half = n_probe // 2

    batch_feats = extract_features(batch_model, probe_images)
    targets_train = vf_targets(batch_feats[:half], theta=acfg["vf_theta"])
    targets_test = vf_targets(batch_feats[half:], theta=acfg["vf_theta"])

    lut = label_columns(dataset.classes)
    train_all = dataset.examples("train")
    val_all = dataset.examples("val")
    train_images = stack_images(train_all)
    val_images = stack_images(val_all)
    test_images = stack_images(test_all)
    y_train = lut[np.array([e.label for e in train_all])]
    y_val = lut[np.array([e.label for e in val_all])]
    y_test = lut[np.array([e.label for e in test_all])]

    rows = []
    for k, name in enumerate(snap_paths):
        model, meta = _snapshot_model(task, os.path.join(ckpt_dir, name),
                                      throwaway.split(k + 1))
        exposure = int(meta["exposure"])
        feats = extract_features(model, probe_images)
        cka_val = cka(feats, batch_feats, kernel=acfg["kernel"],
                      sigma_fraction=acfg["sigma_fraction"])
        probe = train_vf_probes(feats[:half], targets_train, feats[half:],
                                targets_test, epochs=acfg["probe_epochs"],
                                lr=acfg["probe_lr"],
                                rng=rng.split(ANALYSIS, 1, exposure))
        ftfc = finetune_fc(extract_features(model, train_images), y_train,
                           extract_features(model, test_images), y_test,
                           num_classes=len(dataset.classes),
                           epochs=acfg["ftfc_epochs"], lr=acfg["ftfc_lr"],
                           batch_size=acfg["ftfc_batch_size"],
                           rng=rng.split(ANALYSIS, 2, exposure),
                           features_val=extract_features(model, val_images),
                           labels_val=y_val)
        rows.extend([
            MetricRow(exposure, seed, "cka_batch", "analysis:cka", cka_val),
            MetricRow(exposure, seed, "vf_probe_accuracy", "analysis:vf_probe",
                      probe["mean_accuracy"]),
            MetricRow(exposure, seed, "vf_degenerate_units", "analysis:vf_probe",
                      float(probe["num_degenerate"])),
            MetricRow(exposure, seed, "ftfc_accuracy", "analysis:ft_fc", ftfc),
        ])
        logger.info("seed %d analysis exposure %d: cka=%.3f vf=%.3f ftfc=%.3f",
                    seed, exposure, cka_val, probe["mean_accuracy"], ftfc)
    return rows


# -- per-seed run -----------------------------------------------------------

def run_seed(cfg, seed, seed_dir, out_root=None):
    """Run one seed end to end; returns (metric rows, summary dict)."""
    os.makedirs(seed_dir, exist_ok=True)
    dataset = dataset_for_seed(cfg, seed, out_root)
    task = task_from_config(cfg)
    schedule = make_schedule(cfg, dataset.classes, seed)
    rng = RngStream(seed)
    learner = make_learner(cfg["learner"]["kind"], task, cfg["hyper"], rng)

    snapshots = cfg["snapshots"]["enabled"]
    grid_cfg = cfg["recon_grid"]
    grid_examples = _grid_examples(dataset, grid_cfg["examples"]) if grid_cfg["enabled"] else None
    grid_rows, grid_labels = [], []

    ckpt_dir = os.path.join(seed_dir, "checkpoints")
    if snapshots:
        os.makedirs(ckpt_dir, exist_ok=True)

    rows = []
    metric = learner.metric_name
    final_exposure = len(schedule)
    for exp in schedule:
        data = exposure_data(dataset, exp, rng.split(SCHEDULE, 2, exp.index))
        learner.observe(exp.index, data)
        number = exp.index + 1
        per = learner.eval_per_class({c: dataset.test[c] for c in learner.seen})
        overall = float(np.mean(list(per.values())))
        rows.append(MetricRow(number, seed, metric, "overall", overall))
        rows.extend(MetricRow(number, seed, metric, f"class:{c}", v)
                    for c, v in per.items())
        logger.info("seed %d exposure %d/%d classes=%s %s=%.4f",
                    seed, number, final_exposure, list(exp.class_ids), metric, overall)
        if snapshots:
            save_checkpoint(learner.model,
                            os.path.join(ckpt_dir, f"exposure_{number:03d}.ckpt"),
                            meta={"exposure": number, "seed": seed,
                                  "seen": list(learner.seen),
                                  "steps": learner.total_steps})
        if grid_examples is not None and (grid_cfg["exposures"] is None
                                          or number in grid_cfg["exposures"]):
            grid_rows.append(_reconstruct(task, learner.model, grid_examples))
            grid_labels.append(f"e{number:03d}")

    summary = {"total_steps": learner.total_steps, "exposures": final_exposure}

    if cfg["batch"]["enabled"]:
        steps = learner.total_steps if cfg["batch"]["mode"] == "step_matched" else None
        batch_model, batch_steps = train_batch_oracle(cfg, task, dataset, rng, steps)
        batch_metric = "accuracy" if task.name == "classification" else task.metric
        per = eval_model_per_class(task, batch_model, dataset.classes,
                                   {c: dataset.test[c] for c in dataset.classes})
        overall = float(np.mean(list(per.values())))
        rows.append(MetricRow(final_exposure, seed, f"batch_{batch_metric}",
                              "overall", overall))
        rows.extend(MetricRow(final_exposure, seed, f"batch_{batch_metric}",
                              f"class:{c}", v) for c, v in per.items())
        summary["batch_steps"] = batch_steps
        logger.info("seed %d batch reference: %s=%.4f (%d steps)",
                    seed, batch_metric, overall, batch_steps)
        if snapshots:
            save_checkpoint(batch_model, os.path.join(ckpt_dir, "batch.ckpt"),
                            meta={"exposure": final_exposure, "seed": seed,
                                  "classes": list(dataset.classes),
                                  "seen": sorted(dataset.classes),
                                  "steps": batch_steps})

    if cfg["analysis"]["enabled"]:
        rows.extend(analysis_rows(cfg, seed, seed_dir, dataset, task))

    if grid_examples is not None:
        write_recon_grid(os.path.join(seed_dir, "recon_grid.csv"),
                         _grid_gt(task, grid_examples), grid_rows,
                         ["gt"] + grid_labels)

    write_metrics_csv(rows, os.path.join(seed_dir, "metrics.csv"))
    return rows, summary


# -- whole experiment -------------------------------------------------------

def _inventory(run_dir):
    inv = {}
    for root, _, files in os.walk(run_dir):
        for f in sorted(files):
            if f == "manifest.json" or f.startswith(".tmp-"):
                continue
            path = os.path.join(root, f)
            rel = os.path.relpath(path, run_dir)
            with open(path, "rb") as fh:
                inv[rel] = hashlib.sha256(fh.read()).hexdigest()
    return dict(sorted(inv.items()))


def _write_manifest(run_dir, manifest):
    atomic_write_text(os.path.join(run_dir, "manifest.json"),
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg, out_root=None):
    """Execute every seed with crash isolation; returns the manifest."""
    out_root = out_root or cfg["out_dir"]
    run_dir = os.path.join(out_root, cfg["name"])
    os.makedirs(run_dir, exist_ok=True)
    seed_reports = []
    all_rows = []
    for seed in cfg["seeds"]:
        seed_dir = os.path.join(run_dir, f"seed{seed:03d}")
        t0 = time.monotonic()
        report = {"seed": seed, "metrics": f"seed{seed:03d}/metrics.csv"}
        try:
            rows, summary = run_seed(cfg, seed, seed_dir, out_root)
            report.update(status="ok", wall_time_s=round(time.monotonic() - t0, 3),
                          **summary)
            all_rows.extend(rows)
        except Exception as exc:  # crash isolation: other seeds continue
            logger.error("seed %d failed: %s", seed, exc)
            report.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                          wall_time_s=round(time.monotonic() - t0, 3))
        seed_reports.append(report)

    if all_rows:
        write_mean_curves_csv(all_rows, os.path.join(run_dir, "mean_curves.csv"))
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "engine_version": ENGINE_VERSION,
        "name": cfg["name"],
        "config": cfg,
        "seeds": seed_reports,
        "status": "ok" if all(r["status"] == "ok" for r in seed_reports) else "failed",
        "files": _inventory(run_dir),
    }
    _write_manifest(run_dir, manifest)
    return manifest


def analyze_run(cfg, out_root=None):
    """Recompute analysis rows from stored snapshots and refresh the CSVs."""
    out_root = out_root or cfg["out_dir"]
    run_dir = os.path.join(out_root, cfg["name"])
    manifest_path = os.path.join(run_dir, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"no completed run at {run_dir}: {exc}") from exc
    task = task_from_config(cfg)
    if task.name != "classification":
        raise ConfigError("analysis probes classification runs only")
    all_rows = []
    for report in manifest["seeds"]:
        if report["status"] != "ok":
            logger.warning("seed %d skipped (status %s)", report["seed"], report["status"])
            continue
        seed = report["seed"]
        seed_dir = os.path.join(run_dir, f"seed{seed:03d}")
        dataset = dataset_for_seed(cfg, seed, out_root)
        kept = [r for r in read_metrics_csv(os.path.join(seed_dir, "metrics.csv"))
                if not r.scope.startswith("analysis:")]
        fresh = analysis_rows(cfg, seed, seed_dir, dataset, task)
        write_metrics_csv(kept + fresh, os.path.join(seed_dir, "metrics.csv"))
        all_rows.extend(kept + fresh)
    if all_rows:
        write_mean_curves_csv(all_rows, os.path.join(run_dir, "mean_curves.csv"))
    manifest["files"] = _inventory(run_dir)
    _write_manifest(run_dir, manifest)
    return manifest

"""Experiment configuration: JSON in, fully defaulted dict out.

The schema is versioned ("flab-config/1"); unknown keys are rejected
everywhere and every default is materialized into the parsed config,
so the manifest's config echo is complete. Validation failures name
the offending location as a JSON-pointer path.
"""

from __future__ import annotations

import copy
import json

import jsonschema

from flab.errors import ConfigError

SCHEMA_VERSION = "flab-config/1"

TASK_NAMES = ["classification", "autoencoder", "silhouette", "sdf_recon", "proxy"]
LEARNER_KINDS = ["naive", "classifier_exemplars", "yass", "gdumb", "gdumbpp",
                 "icarl", "bic", "e2eil", "ncm_proxy"]
_CLASSIFICATION_ONLY = {"classifier_exemplars", "yass", "icarl", "bic", "e2eil"}
# Kinds that cannot function with an empty exemplar memory. The plain
# exemplar learners degrade gracefully (budget 0 makes them Naive).
_NEEDS_MEMORY = {"gdumb", "gdumbpp", "icarl", "bic", "e2eil"}
_SDF_TASK_KEYS = {"frame", "points_per_batch", "tau", "eval_resolution",
                  "eval_per_class", "gt_resolution", "gt_count", "pred_count"}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": SCHEMA_VERSION,
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "task", "learner"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9._-]+$"},
        "out_dir": {"type": "string", "minLength": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0},
                  "minItems": 1},
        "task": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": TASK_NAMES},
                "backbone": {"enum": ["autoencoder", "sdf_recon"]},
                "frame": {"enum": ["viewer", "canonical"]},
                "points_per_batch": {"type": "integer", "minimum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "eval_resolution": {"type": "integer", "minimum": 64},
                "eval_per_class": {"type": "integer", "minimum": 1},
                "gt_resolution": {"type": "integer", "minimum": 64},
                "gt_count": {"type": "integer", "minimum": 8},
                "pred_count": {"type": "integer", "minimum": 8},
            },
        },
        "learner": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": LEARNER_KINDS},
                "use_wg": {"type": "boolean"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "arch": {"enum": ["mlp", "conv"]},
            },
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_classes": {"type": "integer", "minimum": 1, "maximum": 8},
                "per_class_train": {"type": "integer", "minimum": 1},
                "per_class_val": {"type": ["integer", "null"], "minimum": 1},
                "per_class_test": {"type": "integer", "minimum": 1},
                "points_per_example": {"type": "integer", "minimum": 0},
                "sdf_frame": {"enum": ["viewer", "canonical"]},
                "resolution": {"type": "integer", "minimum": 8},
                "antialias": {"type": "boolean"},
                "brightness": {"type": "array", "minItems": 2, "maxItems": 2,
                               "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "noise_sigma": {"type": "number", "minimum": 0},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["single", "repeated"]},
                "per_exposure": {"type": "integer", "minimum": 1},
                "repetitions": {"type": "integer", "minimum": 1},
                "sample_k": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "hyper": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["sgd", "adam"]},
                "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "memory_budget": {"type": "integer", "minimum": 0},
                "finetune_epochs": {"type": "integer", "minimum": 0},
                "finetune_lr_scale": {"type": "number", "exclusiveMinimum": 0},
                "bic_val_fraction": {"type": "number", "exclusiveMinimum": 0,
                                     "maximum": 0.5},
                "bic_steps": {"type": "integer", "minimum": 1},
                "bic_lr": {"type": "number", "exclusiveMinimum": 0},
                "proxy_exemplars_per_class": {"type": "integer", "minimum": 1},
                "proxy_replay": {"type": "boolean"},
            },
        },
        "batch": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "mode": {"enum": ["step_matched", "epochs"]},
                "epochs": {"type": "integer", "minimum": 1},
            },
        },
        "snapshots": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"enabled": {"type": "boolean"}},
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "probe_examples": {"type": "integer", "minimum": 8},
                "kernel": {"enum": ["linear", "rbf"]},
                "sigma_fraction": {"type": "number", "exclusiveMinimum": 0},
                "vf_theta": {"type": "number"},
                "probe_epochs": {"type": "integer", "minimum": 1},
                "probe_lr": {"type": "number", "exclusiveMinimum": 0},
                "ftfc_epochs": {"type": "integer", "minimum": 1},
                "ftfc_lr": {"type": "number", "exclusiveMinimum": 0},
                "ftfc_batch_size": {"type": "integer", "minimum": 1},
            },
        },
        "recon_grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "examples": {"type": "integer", "minimum": 1},
                "exposures": {"type": ["array", "null"],
                              "items": {"type": "integer", "minimum": 1}},
            },
        },
    },
}

_DEFAULTS = {
    "out_dir": "runs",
    "seeds": [0, 1, 2],
    "dataset": {
        "num_classes": 8,
        "per_class_train": 200,
        "per_class_val": None,
        "per_class_test": 50,
        "points_per_example": 0,
        "sdf_frame": "viewer",
        "resolution": 32,
        "antialias": True,
        "brightness": [0.7, 1.0],
        "noise_sigma": 0.05,
    },
    "model": {"arch": "mlp"},
    "schedule": {"mode": "single", "per_exposure": 1, "repetitions": 1,
                 "sample_k": None},
    "hyper": {
        "lr": 0.05,
        "optimizer": "sgd",
        "momentum": 0.9,
        "weight_decay": 0.0,
        "batch_size": 32,
        "memory_budget": 200,
        "finetune_epochs": 5,
        "finetune_lr_scale": 0.1,
        "bic_val_fraction": 0.1,
        "bic_steps": 200,
        "bic_lr": 0.01,
        "proxy_exemplars_per_class": 20,
        "proxy_replay": False,
    },
    "batch": {"enabled": False, "mode": "step_matched", "epochs": 50},
    "snapshots": {"enabled": False},
    "analysis": {
        "enabled": False,
        "probe_examples": 512,
        "kernel": "rbf",
        "sigma_fraction": 1.0,
        "vf_theta": 1.0,
        "probe_epochs": 20,
        "probe_lr": 1e-3,
        "ftfc_epochs": 30,
        "ftfc_lr": 1e-3,
        "ftfc_batch_size": 64,
    },
    "recon_grid": {"enabled": False, "examples": 8, "exposures": None},
}

_SDF_TASK_DEFAULTS = {
    "frame": "viewer",
    "points_per_batch": 64,
    "tau": 0.02,
    "eval_resolution": 64,
    "eval_per_class": 12,
    "gt_resolution": 256,
    "gt_count": 1024,
    "pred_count": 2048,
}


def _merge(defaults, user):
    out = copy.deepcopy(defaults)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(err):
    return "/" + "/".join(str(p) for p in err.absolute_path)


def default_config(task="classification", learner="naive"):
    """A minimal valid config, fully defaulted; handy starting point."""
    return validate_config({"schema": SCHEMA_VERSION,
                            "task": {"name": task},
                            "learner": {"kind": learner}})


def _fail(path, message):
    raise ConfigError(f"config error at {path}: {message}")


def _cross_rules(cfg):
    task = cfg["task"]["name"]
    kind = cfg["learner"]["kind"]
    use_wg = cfg["learner"].get("use_wg")

    if use_wg is True and kind not in ("yass", "classifier_exemplars"):
        _fail("/learner/use_wg", f"weighted gradients are incompatible with kind {kind!r}")
    if use_wg is False and kind == "yass":
        _fail("/learner/use_wg", "kind 'yass' means weighted gradients; cannot disable")
    if kind in _CLASSIFICATION_ONLY and task != "classification":
        _fail("/learner/kind", f"{kind!r} requires task 'classification', got {task!r}")
    if kind == "ncm_proxy" and task != "proxy":
        _fail("/learner/kind", "'ncm_proxy' pairs only with task 'proxy'")
    if task == "proxy" and kind != "ncm_proxy":
        _fail("/task/name", "task 'proxy' pairs only with learner 'ncm_proxy'")

    if task == "proxy":
        allowed = {"name", "backbone"}
        if cfg["task"]["backbone"] == "sdf_recon":
            allowed.add("frame")
        extra = set(cfg["task"]) - allowed
        if extra:
            _fail(f"/task/{sorted(extra)[0]}",
                  "option not available for the selected proxy backbone")
        if cfg["task"]["backbone"] == "sdf_recon":
            if cfg["dataset"]["points_per_example"] < 1:
                _fail("/dataset/points_per_example",
                      "an sdf_recon backbone needs presampled points (>= 1 per example)")
            if cfg["dataset"]["sdf_frame"] != cfg["task"]["frame"]:
                _fail("/dataset/sdf_frame",
                      "dataset point frame must match the task frame")
    elif task != "sdf_recon":
        extra = (_SDF_TASK_KEYS | {"backbone"}) & set(cfg["task"])
        if extra:
            _fail(f"/task/{sorted(extra)[0]}",
                  f"option only valid for task 'sdf_recon', not {task!r}")
    else:
        if "backbone" in cfg["task"]:
            _fail("/task/backbone", "backbone selection belongs to the proxy task")
        if cfg["dataset"]["points_per_example"] < 1:
            _fail("/dataset/points_per_example",
                  "task 'sdf_recon' needs presampled points (>= 1 per example)")
        if cfg["dataset"]["sdf_frame"] != cfg["task"]["frame"]:
            _fail("/dataset/sdf_frame",
                  "dataset point frame must match the task frame")

    if cfg["schedule"]["per_exposure"] > cfg["dataset"]["num_classes"]:
        _fail("/schedule/per_exposure", "more classes per exposure than classes exist")
    if cfg["schedule"]["sample_k"] is not None and cfg["schedule"]["mode"] != "repeated":
        _fail("/schedule/sample_k", "subsampling applies to repeated schedules only")

    if kind in _NEEDS_MEMORY and cfg["hyper"]["memory_budget"] < 1:
        _fail("/hyper/memory_budget", f"{kind!r} needs a positive exemplar budget")

    if cfg["model"]["arch"] == "conv":
        if task != "classification":
            _fail("/model/arch", "the conv architecture is wired for classification only")
        if cfg["dataset"]["resolution"] % 8 != 0:
            _fail("/model/arch", "conv stages need resolution divisible by 8")

    if cfg["analysis"]["enabled"]:
        if not cfg["snapshots"]["enabled"]:
            _fail("/analysis/enabled", "analysis needs snapshots.enabled = true")
        if not cfg["batch"]["enabled"]:
            _fail("/analysis/enabled", "analysis needs the batch reference model")
        if task != "classification":
            _fail("/analysis/enabled", "analysis probes classification runs only")
    if cfg["batch"]["enabled"] and task == "proxy":
        _fail("/batch/enabled", "the proxy task has no batch reference analog")
    if cfg["recon_grid"]["enabled"] and task not in ("autoencoder", "silhouette",
                                                     "sdf_recon"):
        _fail("/recon_grid/enabled", "reconstruction grids need an image-output task")


def validate_config(raw):
    """Materialize defaults, validate, and apply cross-field rules."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(_DEFAULTS, raw)
    cfg.setdefault("schema", SCHEMA_VERSION)
    task = cfg.get("task", {}).get("name")
    if isinstance(cfg.get("task"), dict) and task == "sdf_recon":
        cfg["task"] = _merge(_SDF_TASK_DEFAULTS, cfg["task"])
    if isinstance(cfg.get("task"), dict) and task == "proxy":
        cfg["task"].setdefault("backbone", "autoencoder")
        if cfg["task"]["backbone"] == "sdf_recon":
            cfg["task"].setdefault("frame", "viewer")
    # Epoch default follows the task family: 5 for classification heads,
    # 50 for the reconstruction objectives.
    if isinstance(cfg.get("hyper"), dict) and "epochs" not in cfg["hyper"]:
        cfg["hyper"]["epochs"] = 5 if task == "classification" else 50

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"config error at {_pointer(err)}: {err.message}")
    _cross_rules(cfg)
    if "name" not in cfg:
        cfg["name"] = f"{cfg['learner']['kind']}-{task}"
    return cfg


def parse_config(path):
    """Load, default, and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    return validate_config(raw)


def serialize_config(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"

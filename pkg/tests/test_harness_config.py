"""Config schema: defaults, pointer-style errors, and cross-field rules."""

import json

import pytest

from flab.errors import ConfigError
from flab.harness.config import (SCHEMA_VERSION, default_config, parse_config,
                                 serialize_config, validate_config)


def _minimal(task="classification", kind="naive", **extra):
    cfg = {"schema": SCHEMA_VERSION, "task": {"name": task},
           "learner": {"kind": kind}}
    cfg.update(extra)
    return cfg


def test_defaults_are_materialized():
    cfg = default_config()
    assert cfg["schema"] == SCHEMA_VERSION
    assert cfg["hyper"]["epochs"] == 5
    assert cfg["hyper"]["lr"] == 0.05
    assert cfg["seeds"] == [0, 1, 2]
    assert cfg["dataset"]["num_classes"] == 8
    assert cfg["schedule"] == {"mode": "single", "per_exposure": 1,
                               "repetitions": 1, "sample_k": None}
    assert cfg["name"] == "naive-classification"
    assert cfg["analysis"]["enabled"] is False


def test_epoch_default_depends_on_task_family():
    recon = validate_config(_minimal("autoencoder", "naive",
                                     dataset={"points_per_example": 0}))
    assert recon["hyper"]["epochs"] == 50
    sdf = validate_config(_minimal("sdf_recon", "naive",
                                   dataset={"points_per_example": 32}))
    assert sdf["hyper"]["epochs"] == 50
    assert sdf["task"]["tau"] == 0.02
    assert sdf["task"]["eval_resolution"] == 64
    explicit = validate_config(_minimal(hyper={"epochs": 7}))
    assert explicit["hyper"]["epochs"] == 7


def test_unknown_keys_are_pointed_at():
    with pytest.raises(ConfigError, match="config error at /"):
        validate_config(_minimal(mystery=1))
    with pytest.raises(ConfigError, match="/hyper"):
        validate_config(_minimal(hyper={"learning_rate": 0.1}))
    with pytest.raises(ConfigError, match="/dataset/num_classes"):
        validate_config(_minimal(dataset={"num_classes": 9}))


def test_schema_field_is_pinned():
    with pytest.raises(ConfigError, match="/schema"):
        validate_config({"schema": "flab-config/999",
                         "task": {"name": "classification"},
                         "learner": {"kind": "naive"}})
    filled = validate_config({"task": {"name": "classification"},
                              "learner": {"kind": "naive"}})
    assert filled["schema"] == SCHEMA_VERSION


def test_cross_rule_use_wg():
    with pytest.raises(ConfigError, match="/learner/use_wg"):
        validate_config(_minimal(kind="gdumb", learner={"kind": "gdumb",
                                                        "use_wg": True}))
    with pytest.raises(ConfigError, match="cannot disable"):
        validate_config(_minimal(learner={"kind": "yass", "use_wg": False}))
    ok = validate_config(_minimal(learner={"kind": "classifier_exemplars",
                                           "use_wg": True}))
    assert ok["learner"]["use_wg"] is True


def test_cross_rule_task_learner_pairing():
    with pytest.raises(ConfigError, match="requires task 'classification'"):
        validate_config(_minimal("autoencoder", "icarl"))
    with pytest.raises(ConfigError, match="pairs only with task 'proxy'"):
        validate_config(_minimal("autoencoder", "ncm_proxy"))
    with pytest.raises(ConfigError, match="pairs only with learner 'ncm_proxy'"):
        validate_config(_minimal("proxy", "naive"))
    ok = validate_config(_minimal("proxy", "ncm_proxy"))
    assert ok["name"] == "ncm_proxy-proxy"


def test_cross_rule_sdf_options():
    with pytest.raises(ConfigError, match="only valid for task 'sdf_recon'"):
        validate_config({"schema": SCHEMA_VERSION,
                         "task": {"name": "classification", "tau": 0.05},
                         "learner": {"kind": "naive"}})
    with pytest.raises(ConfigError, match="presampled points"):
        validate_config(_minimal("sdf_recon"))
    with pytest.raises(ConfigError, match="frame must match"):
        validate_config(_minimal("sdf_recon", dataset={"points_per_example": 16,
                                                       "sdf_frame": "canonical"}))


def test_cross_rule_proxy_backbone():
    def raw(task_section, kind="ncm_proxy", **extra):
        cfg = {"schema": SCHEMA_VERSION, "task": task_section,
               "learner": {"kind": kind}}
        cfg.update(extra)
        return cfg

    plain = validate_config(raw({"name": "proxy"}))
    assert plain["task"]["backbone"] == "autoencoder"
    assert "frame" not in plain["task"]
    sdf = validate_config(raw(
        {"name": "proxy", "backbone": "sdf_recon", "frame": "canonical"},
        dataset={"points_per_example": 16, "sdf_frame": "canonical"}))
    assert sdf["task"]["frame"] == "canonical"
    with pytest.raises(ConfigError, match="/task/frame"):
        validate_config(raw({"name": "proxy", "frame": "viewer"}))
    with pytest.raises(ConfigError, match="presampled points"):
        validate_config(raw({"name": "proxy", "backbone": "sdf_recon"}))
    with pytest.raises(ConfigError, match="frame must match"):
        validate_config(raw(
            {"name": "proxy", "backbone": "sdf_recon", "frame": "canonical"},
            dataset={"points_per_example": 16}))
    with pytest.raises(ConfigError, match="/task/backbone"):
        validate_config(raw({"name": "sdf_recon", "backbone": "autoencoder"},
                            kind="naive", dataset={"points_per_example": 16}))
    with pytest.raises(ConfigError, match="/task/backbone"):
        validate_config(raw({"name": "classification", "backbone": "autoencoder"},
                            kind="naive"))


def test_cross_rule_schedule_and_memory():
    with pytest.raises(ConfigError, match="/schedule/per_exposure"):
        validate_config(_minimal(dataset={"num_classes": 3},
                                 schedule={"per_exposure": 4}))
    with pytest.raises(ConfigError, match="repeated schedules only"):
        validate_config(_minimal(schedule={"mode": "single", "sample_k": 5}))
    with pytest.raises(ConfigError, match="positive exemplar budget"):
        validate_config(_minimal(kind="gdumb", hyper={"memory_budget": 0}))
    ok = validate_config(_minimal(kind="classifier_exemplars",
                                  hyper={"memory_budget": 0}))
    assert ok["hyper"]["memory_budget"] == 0


def test_cross_rule_analysis_prerequisites():
    with pytest.raises(ConfigError, match="snapshots.enabled"):
        validate_config(_minimal(analysis={"enabled": True},
                                 batch={"enabled": True}))
    with pytest.raises(ConfigError, match="batch reference"):
        validate_config(_minimal(analysis={"enabled": True},
                                 snapshots={"enabled": True}))
    with pytest.raises(ConfigError, match="classification runs only"):
        validate_config(_minimal("autoencoder", "naive",
                                 analysis={"enabled": True},
                                 snapshots={"enabled": True},
                                 batch={"enabled": True}))
    ok = validate_config(_minimal(analysis={"enabled": True},
                                  snapshots={"enabled": True},
                                  batch={"enabled": True}))
    assert ok["analysis"]["kernel"] == "rbf"


def test_cross_rule_batch_and_grid():
    with pytest.raises(ConfigError, match="no batch reference analog"):
        validate_config(_minimal("proxy", "ncm_proxy", batch={"enabled": True}))
    with pytest.raises(ConfigError, match="image-output task"):
        validate_config(_minimal(recon_grid={"enabled": True}))
    ok = validate_config(_minimal("autoencoder", "naive",
                                  recon_grid={"enabled": True}))
    assert ok["recon_grid"]["examples"] == 8


def test_parse_config_reports_json_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "task": {,}\n}\n')
    with pytest.raises(ConfigError, match=r"bad\.json:2:12"):
        parse_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.json")


def test_parse_and_serialize_roundtrip(tmp_path):
    cfg = validate_config(_minimal("sdf_recon",
                                   dataset={"points_per_example": 32}))
    p = tmp_path / "cfg.json"
    p.write_text(serialize_config(cfg))
    again = parse_config(p)
    assert again == cfg
    assert json.loads(serialize_config(again)) == cfg


def test_validate_config_rejects_non_objects():
    with pytest.raises(ConfigError):
        validate_config([1, 2])
    with pytest.raises(ConfigError):
        validate_config(_minimal(seeds=[]))
    with pytest.raises(ConfigError):
        validate_config(_minimal(seeds=[-1]))


def test_model_arch_defaults_and_rules():
    assert default_config()["model"] == {"arch": "mlp"}
    conv = validate_config(_minimal(model={"arch": "conv"}))
    assert conv["model"]["arch"] == "conv"
    with pytest.raises(ConfigError, match="/model/arch"):
        validate_config(_minimal("autoencoder", model={"arch": "conv"}))
    with pytest.raises(ConfigError, match="/model/arch"):
        validate_config(_minimal(model={"arch": "conv"},
                                 dataset={"resolution": 20}))
    with pytest.raises(ConfigError, match="/model"):
        validate_config(_minimal(model={"arch": "resnet"}))

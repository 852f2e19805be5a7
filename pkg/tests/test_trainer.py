import json
from dataclasses import replace

import numpy as np
import pytest

from wagcn.checkpoint import load_checkpoint, save_checkpoint
from wagcn.data import DatasetManifest
from wagcn.errors import ConfigError, NumericalError
from wagcn.metrics import dataset_eval
from wagcn.model import FusedParams, init_params, score_video
from wagcn.trainer import (
    ABLATION_ROWS,
    TrainConfig,
    apply_overrides,
    run_ablation,
    score_manifest,
    sweep_sampling_length,
    train,
)


def _losses(res):
    return [e["loss"] for e in res.log]


def test_zero_epochs_returns_init(tiny_data, tiny_cfg, tmp_path):
    res = train(tiny_data.train, replace(tiny_cfg, epochs=0), out_dir=tmp_path)
    init = init_params(tiny_cfg.model_config(12), tiny_cfg.seed)
    loaded = load_checkpoint(tmp_path / "final")
    for name, arr in init.arrays.items():
        assert loaded.arrays[name].tobytes() == arr.tobytes()
    assert res.log == []


def test_training_is_deterministic(tiny_data, tiny_cfg):
    a = train(tiny_data.train, tiny_cfg)
    b = train(tiny_data.train, tiny_cfg)
    assert _losses(a) == _losses(b)
    for name in a.params.arrays:
        assert a.params.arrays[name].tobytes() == b.params.arrays[name].tobytes()


def test_workers_do_not_change_results(tiny_data, tiny_cfg):
    a = train(tiny_data.train, tiny_cfg)
    b = train(tiny_data.train, replace(tiny_cfg, workers=3))
    assert _losses(a) == _losses(b)
    for name in a.params.arrays:
        assert a.params.arrays[name].tobytes() == b.params.arrays[name].tobytes()


def test_loss_decreases(tiny_data, tiny_cfg):
    res = train(tiny_data.train, replace(tiny_cfg, epochs=15, lr=3e-3))
    losses = _losses(res)
    assert len(losses) == 15
    assert losses[-1] < losses[0]


def test_lr_zero_leaves_params_unchanged(tiny_data, tiny_cfg):
    res = train(tiny_data.train, replace(tiny_cfg, epochs=1, lr=0.0))
    init = init_params(tiny_cfg.model_config(12), tiny_cfg.seed)
    for name, arr in init.arrays.items():
        assert res.params.arrays[name].tobytes() == arr.tobytes()


def test_single_class_manifest_rejected(tiny_data, tiny_cfg):
    normals = DatasetManifest([r for r in tiny_data.train if r.label == 0])
    with pytest.raises(ConfigError):
        train(normals, tiny_cfg)
    with pytest.raises(ConfigError):
        train(DatasetManifest([]), tiny_cfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(overflow_manifest, tiny_cfg):
    with pytest.raises(NumericalError, match="epoch 1, batch"):
        train(overflow_manifest, tiny_cfg)


def test_confident_model_keeps_training(tiny_data, tiny_cfg):
    # a huge step size saturates the sigmoid; the loss must stay finite
    res = train(tiny_data.train, replace(tiny_cfg, lr=10.0, epochs=4, dropout=0.0))
    assert all(np.isfinite(e["loss"]) for e in res.log)


def test_eval_and_checkpoints(tiny_data, tiny_cfg, tmp_path):
    res = train(tiny_data.train, replace(tiny_cfg, eval_every=1), tiny_data.test, tmp_path)
    assert all("auc" in e for e in res.log)
    assert 0 <= res.final_auc <= 1
    assert res.best_auc == max(e["auc"] for e in res.log)
    log_lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == tiny_cfg.epochs
    assert json.loads(log_lines[0])["epoch"] == 1
    assert (tmp_path / "best" / "meta.json").exists()
    loaded = load_checkpoint(tmp_path / "final")
    scores = score_manifest(loaded, tiny_data.test)
    assert dataset_eval(tiny_data.test, scores).auc == res.final_auc


def test_late_fusion_trains_two_branches(tiny_data, tiny_cfg, tmp_path):
    cfg = replace(tiny_cfg, graph=replace(tiny_cfg.graph, mode="late_fusion"))
    res = train(tiny_data.train, cfg, tiny_data.test, tmp_path)
    assert isinstance(res.params, FusedParams)
    assert [b.config.graph.mode for b in res.params.branches] == ["feature_only", "temporal_only"]
    assert {e["branch"] for e in res.log} == {"feature_only", "temporal_only"}
    loaded = load_checkpoint(tmp_path / "final")
    feats = tiny_data.test.records[0].load_features()
    np.testing.assert_array_equal(score_video(feats, loaded), score_video(feats, res.params))
    single = train(tiny_data.train, replace(tiny_cfg, graph=replace(tiny_cfg.graph, mode="feature_only")))
    np.testing.assert_array_equal(
        score_video(feats, res.params.branches[0]), score_video(feats, single.params)
    )


@pytest.mark.parametrize("variant", ["dyn_a2", "para_a", "csim_a", "jsim_a"])
def test_variants_train(tiny_data, tiny_cfg, variant, tmp_path):
    cfg = replace(tiny_cfg, epochs=2, graph=replace(tiny_cfg.graph, variant=variant))
    res = train(tiny_data.train, cfg, tiny_data.test, tmp_path)
    assert 0 <= res.final_auc <= 1
    loaded = load_checkpoint(tmp_path / "final")
    assert dataset_eval(tiny_data.test, score_manifest(loaded, tiny_data.test)).auc == res.final_auc


def test_checkpoint_single_precision(tmp_path, tiny_cfg):
    cfg = replace(tiny_cfg, precision="single").model_config(12)
    params = init_params(cfg, 0)
    save_checkpoint(params, tmp_path / "ck", seed=0)
    loaded = load_checkpoint(tmp_path / "ck")
    assert loaded.config == params.config
    assert all(loaded.arrays[k].dtype == np.float32 for k in loaded.arrays)


def test_single_precision_training(tiny_data, tiny_cfg):
    res = train(tiny_data.train, replace(tiny_cfg, precision="single"), tiny_data.test)
    assert res.params.arrays["fc.W"].dtype == np.float32
    assert 0 <= res.final_auc <= 1


def test_sweep(tiny_data, tiny_cfg, tmp_path):
    cfg = replace(tiny_cfg, epochs=2)
    rows = sweep_sampling_length(tiny_data.train, tiny_data.test, cfg, [8, 16, 8], tmp_path)
    assert [r["T"] for r in rows] == [8, 16, 8]
    assert rows[0]["auc"] == rows[2]["auc"]
    alone = train(tiny_data.train, replace(cfg, T=16), tiny_data.test)
    assert rows[1]["auc"] == alone.final_auc
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "T,auc"
    assert (tmp_path / "sweep.png").stat().st_size > 0


def test_ablation_structure(tiny_data, tiny_cfg, tmp_path):
    rows = run_ablation(tiny_data.train, tiny_data.test, replace(tiny_cfg, epochs=1), tmp_path)
    assert [r["name"] for r in rows] == [r[0] for r in ABLATION_ROWS]
    assert len(rows) == 9
    assert all(0 <= r["auc"] <= 1 for r in rows)
    assert json.loads((tmp_path / "ablation.json").read_text()) == rows
    assert (tmp_path / "ablation.png").exists()


def test_config_validation_and_overrides():
    base = TrainConfig().to_dict()
    d = apply_overrides(base, ["T=64", "graph.variant=dyn_a2", "dims=[8,4,1]", "residual=false"])
    cfg = TrainConfig.from_dict(d)
    assert cfg.T == 64 and cfg.graph.variant == "dyn_a2" and cfg.dims == [8, 4, 1] and not cfg.residual
    for bad in (["nope=1"], ["graph.nope=1"], ["T"]):
        with pytest.raises(ConfigError):
            apply_overrides(base, bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(apply_overrides(base, ["T=0"]))
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({**base, "extra": 1})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(apply_overrides(base, ["graph.mode=sideways"]))

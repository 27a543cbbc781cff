import numpy as np
import pytest

from ide_net import training
from ide_net.autolabel import label_pair
from ide_net.model import IDENet, ModelConfig
from ide_net.synthgen import ScenarioMix, generate_dataset
from ide_net.training import (
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    make_batches,
    normalized_positions,
    predict,
    save_checkpoint,
    split_train_val,
    train,
)
from ide_net.prep import center_coords, fit_norm
from ide_net.trajio import AgentTrack


def tiny_cfg():
    return ModelConfig.desk(16, n_heads=2)


@pytest.fixture(scope="module")
def labeled():
    samples = generate_dataset(ScenarioMix.balanced(12, steps=30), 4)
    return [s.with_labels(label_pair(s)) for s in samples]


def test_split_is_disjoint_and_deterministic(labeled):
    train_a, val_a = split_train_val(labeled, 0.25, 7)
    train_b, val_b = split_train_val(labeled, 0.25, 7)
    ids = lambda xs: [s.sample_id for s in xs]
    assert ids(train_a) == ids(train_b) and ids(val_a) == ids(val_b)
    assert not set(ids(train_a)) & set(ids(val_a))
    assert len(train_a) + len(val_a) == len(labeled)
    assert len(val_a) == 3
    _, val_c = split_train_val(labeled, 0.25, 8)
    assert ids(val_c) != ids(val_a)
    with pytest.raises(ValueError):
        split_train_val(labeled[:1], 0.9, 0)


def test_batches_share_length(labeled):
    cut = lambda tr: AgentTrack(tr.agent_id, tr.frames[:20], tr.xy[:20], tr.vel[:20], tr.frame_period)
    mixed = labeled[:5] + [s.with_tracks(cut(s.track_a), cut(s.track_b)).with_labels(None) for s in labeled[5:]]
    stats = fit_norm([center_coords(s) for s in mixed])
    batches = make_batches(mixed, normalized_positions(mixed, stats), 4, np.random.default_rng(0))
    assert sum(len(b.ids) for b in batches) == len(mixed)
    for b in batches:
        assert b.positions.shape[0] == len(b.ids)
        assert b.per_step.shape == b.positions.shape[0:1] + b.positions.shape[2:3]


def test_zero_learning_rate_leaves_parameters(labeled):
    cfg = TrainConfig(epochs=1, batch_size=4, lr=0.0, val_fraction=0.0)
    result = train(labeled, tiny_cfg(), cfg)
    fresh = IDENet(tiny_cfg(), seed=cfg.seed).state_dict()
    for name, value in result.model.state_dict().items():
        assert np.array_equal(value, fresh[name]), name


def test_one_epoch_moves_parameters_and_logs(labeled, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, val_fraction=0.25)
    result = train(labeled, tiny_cfg(), cfg, log_path=tmp_path / "log.jsonl")
    assert len(result.history) == 2
    assert result.best_epoch in (1, 2)
    assert {"whether", "when", "traj", "prior", "uncertainty", "rotation", "total"} <= set(result.history[0]["train"])
    assert "score" in result.history[0]["val"]
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 2


def test_what_only_runs_without_labels(labeled):
    unlabeled = [s.with_labels(None) for s in labeled]
    cfg = TrainConfig(epochs=1, batch_size=6, lr=1e-3, tasks=("what", "tp"), val_fraction=0.2)
    result = train(unlabeled, tiny_cfg(), cfg)
    train_terms = result.history[0]["train"]
    assert train_terms["whether"] == 0.0 and train_terms["when"] == 0.0
    assert np.isfinite(train_terms["total"])
    pred = predict(result.model, result.stats, unlabeled[:2], tasks=("what",))
    assert pred["p_whether"][0] is None
    assert pred["p_what"][0].shape == (30, 3)


def test_nan_input_aborts_with_diagnostic(labeled, monkeypatch):
    # tracks reject non-finite values, so poison the normalized positions
    real = training.normalized_positions

    def poisoned(samples, stats):
        out = real(samples, stats)
        if out:
            out[0] = out[0].copy()
            out[0][0, 5, 0] = np.nan
        return out

    monkeypatch.setattr(training, "normalized_positions", poisoned)
    cfg = TrainConfig(epochs=1, batch_size=12, lr=1e-3, val_fraction=0.0)
    with pytest.raises(TrainingDiverged, match="non-finite loss at epoch 1"):
        train(labeled, tiny_cfg(), cfg)


def test_checkpoint_round_trip(labeled, tmp_path):
    cfg = TrainConfig(epochs=1, batch_size=6, lr=1e-3, val_fraction=0.0)
    result = train(labeled, tiny_cfg(), cfg)
    save_checkpoint(tmp_path, result.model, result.stats, cfg)
    model, stats, tcfg = load_checkpoint(tmp_path)
    assert stats.scale == result.stats.scale
    assert tcfg["epochs"] == 1
    a = predict(result.model, result.stats, labeled[:3])
    b = predict(model, stats, labeled[:3])
    for key in ("p_whether", "p_when", "p_what"):
        for u, v in zip(a[key], b[key]):
            assert np.array_equal(u, v)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(tasks=("whether", "bogus"))
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)
    w = TrainConfig(tasks=("whether",)).effective_weights()
    assert w.when == w.traj == w.prior == w.uncertainty == w.rotation == 0.0
    assert w.whether > 0

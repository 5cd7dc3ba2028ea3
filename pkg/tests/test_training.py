import numpy as np
import pytest
import torch

from egogesture.core import ConfigError, TrainingError
from egogesture.model import build
from egogesture.training import TrainConfig, read_history, train, write_history
from egogesture.training import loop
from egogesture.training.loop import _augmented, ensemble_target, evaluate_losses, prepare, sample_targets

FAST = dict(batch_size=4, lr_schedule=((1, 1e-3),), augment=False, bias_correction=True)


def test_zero_epochs_returns_initial(tiny_config, synthetic8):
    net0 = build(tiny_config, seed=0)
    net, hist = train(synthetic8, TrainConfig(epochs=0), tiny_config)
    assert hist == []
    for a, b in zip(net.parameters(), net0.parameters()):
        assert torch.equal(a, b)


@pytest.mark.parametrize("kw", [dict(batch_size=0), dict(epochs=-1), dict(lr_schedule=((1, 1e-6), (5, 1e-5))),
                                dict(lr_schedule=((1, 0.0),))])
def test_bad_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_overlapping_splits_rejected(tiny_config, synthetic8):
    with pytest.raises(ConfigError):
        train(synthetic8, TrainConfig(epochs=1, **FAST), tiny_config, val_dataset=synthetic8[:1])


def test_targets(synthetic8):
    s = synthetic8[0]
    code, row = sample_targets(s)
    assert code.tolist() == list(s.code.bits)
    for f in range(5):
        if s.code[f]:
            x, y = s.fingertips[f]
            assert row[2 * f] == pytest.approx((x - s.bbox.x_tl) / s.bbox.width)
        else:
            assert row[2 * f] == row[2 * f + 1] == 0
    m = ensemble_target(row)
    assert m.shape == (10, 10) and np.all(m == row)


def test_history_and_validation_losses(tiny_config, synthetic8):
    cfg = TrainConfig(epochs=3, **FAST)
    net, hist = train(synthetic8[:6], cfg, tiny_config, val_dataset=synthetic8[6:])
    assert [h["epoch"] for h in hist] == [1, 2, 3]
    assert all(h["val_L"] is not None for h in hist)
    v = evaluate_losses(net, synthetic8[6:])
    assert hist[-1]["val_L"] == pytest.approx(v[2], rel=1e-5)
    assert hist[-1]["train_L"] == pytest.approx(hist[-1]["train_L1"] + hist[-1]["train_L2"], rel=1e-6)


def test_training_is_deterministic(tiny_config, synthetic8):
    cfg = TrainConfig(epochs=2, batch_size=4, augment=True, lr_schedule=((1, 1e-3),), seed=4)
    a, ha = train(synthetic8, cfg, tiny_config)
    b, hb = train(synthetic8, cfg, tiny_config)
    assert ha == hb
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)


def test_augmentation_independent_of_worker_count(synthetic8):
    from concurrent.futures import ThreadPoolExecutor
    cfg = TrainConfig(seed=1)
    serial = _augmented(synthetic8, cfg, 3, None)
    with ThreadPoolExecutor(3) as pool:
        threaded = _augmented(synthetic8, cfg, 3, pool)
    assert serial == threaded


def test_loss_decreases(tiny_config, synthetic8):
    net, hist = train(synthetic8, TrainConfig(epochs=15, **FAST), tiny_config)
    assert hist[-1]["train_L"] < hist[0]["train_L"]


def test_max_steps(tiny_config, synthetic8):
    _, hist = train(synthetic8, TrainConfig(epochs=10, max_steps=3, **FAST), tiny_config)
    assert len(hist) == 2  # two steps per epoch at batch 4


def test_divergence_restores_last_good(tiny_config, synthetic8, tmp_path, monkeypatch):
    real = loop.compute_losses
    calls = {"n": 0}

    def flaky(net, batch, train_mode, renormalize=False):
        calls["n"] += 1
        l1, l2, total = real(net, batch, train_mode, renormalize)
        if calls["n"] == 5:
            total = total * float("nan")
        return l1, l2, total

    monkeypatch.setattr(loop, "compute_losses", flaky)
    cfg = TrainConfig(epochs=5, checkpoint_dir=str(tmp_path), **FAST)
    with pytest.raises(TrainingError) as e:
        train(synthetic8, cfg, tiny_config)
    assert e.value.step == 5
    assert e.value.checkpoint is not None and (tmp_path / "last_good.npz").exists()


def test_checkpoints_written(tiny_config, synthetic8, tmp_path):
    train(synthetic8, TrainConfig(epochs=2, checkpoint_every=1, checkpoint_dir=str(tmp_path), **FAST), tiny_config)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0001.npz", "epoch_0002.npz"]


def test_history_csv_round_trip(tmp_path):
    hist = [{"epoch": 1, "train_L1": 0.5, "train_L2": 0.1, "train_L": 0.6, "val_L1": None, "val_L2": None,
             "val_L": None}]
    write_history(hist, tmp_path / "h.csv")
    back = read_history(tmp_path / "h.csv")
    assert back[0]["epoch"] == 1 and back[0]["train_L"] == pytest.approx(0.6) and back[0]["val_L"] is None


def test_prepare_shapes(synthetic8):
    b = prepare(synthetic8, 32)
    assert b.images.shape == (8, 32, 32, 3) and b.images.max() <= 1.0
    assert b.targets_for("ensemble").shape == (8, 10, 10) and b.targets_for("fc").shape == (8, 10)

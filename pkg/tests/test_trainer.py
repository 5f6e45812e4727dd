import math

import numpy as np
import pytest

from qars import trainer as trainer_mod
from qars.data import QERecord
from qars.encoder import ParamGroup
from qars.errors import ConfigError, NumericError
from qars.estimator import EstimatorModel, build_estimator
from qars.optim import OptimizerState, optimizer_step
from qars.synthetic import make_planted_dataset
from qars.tensor import Tensor
from qars.trainer import TrainConfig, Trainer, frozen_steps, lr_for_group, steps_per_epoch, train


def param(value, grad):
    p = Tensor(np.array([value]), requires_grad=True)
    p.grad = np.array([grad])
    return p


def one_step(kind, value, grad, lr, wd=0.0):
    p = param(value, grad)
    optimizer_step(kind, [ParamGroup("g", {"p": p})], [lr], OptimizerState(), weight_decay=wd)
    return p.data[0]


# --- schedule arithmetic ---------------------------------------------------------

def test_lr_for_group():
    assert lr_for_group(1e-5, 0.95, 0) == 1e-5
    assert lr_for_group(1e-5, 0.95, 1) == pytest.approx(9.5e-6, rel=1e-15)
    assert all(lr_for_group(1e-5, 1.0, k) == 1e-5 for k in range(6))


def test_frozen_steps():
    assert frozen_steps(8, 100) == 800
    assert frozen_steps(0.3, 1000) == 300
    assert frozen_steps(0, 17) == 0
    assert frozen_steps(0.25, 10) == 3


def test_steps_per_epoch():
    assert steps_per_epoch(40, 4, 1) == 10
    assert steps_per_epoch(41, 4, 2) == 6
    assert steps_per_epoch(3870, 2, 4) == 484


# --- optimizer -------------------------------------------------------------------

def test_adam_first_step():
    assert one_step("adam", 1.0, 0.5, 1e-3) == pytest.approx(0.999, abs=1e-9)
    assert one_step("adam", 1.0, -0.5, 1e-3) == pytest.approx(1.001, abs=1e-9)


def test_adamw_decays_without_gradient():
    assert one_step("adamw", 1.0, 0.0, 1e-2, wd=1e-2) == pytest.approx(0.9999, abs=1e-15)
    # plain Adam ignores weight decay
    assert one_step("adam", 1.0, 0.0, 1e-2, wd=1e-2) == 1.0


def test_adam_zero_gradient_is_no_op():
    assert one_step("adam", 1.0, 0.0, 1e-3) == 1.0


def test_adam_state_counts_steps_and_shapes():
    p = Tensor(np.ones((2, 3)), requires_grad=True)
    state = OptimizerState()
    for _ in range(3):
        p.grad = np.full((2, 3), 0.1)
        optimizer_step("adam", [ParamGroup("g", {"p": p})], [1e-3], state)
    assert state.step == 3 and state.param_steps["p"] == 3
    assert state.exp_avg["p"].shape == p.shape == state.exp_avg_sq["p"].shape


def test_non_finite_gradient_aborts_step():
    good, bad = param(1.0, 0.5), param(2.0, np.nan)
    state = OptimizerState()
    with pytest.raises(NumericError, match="bad"):
        optimizer_step("adam", [ParamGroup("g", {"good": good, "bad": bad})], [1e-3], state)
    assert good.data[0] == 1.0 and bad.data[0] == 2.0
    assert state.step == 0 and not state.exp_avg


# --- config ------------------------------------------------------------------------

def test_config_json_roundtrip(tmp_path):
    cfg = TrainConfig.blind_preset()
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert TrainConfig.load(tmp_path / "c.json") == cfg


def test_config_presets():
    nb, bl = TrainConfig.nonblind_preset(), TrainConfig.blind_preset()
    assert (nb.optimizer, nb.lr_frozen_phase, nb.lr_unfrozen_phase, nb.frozen_epochs) == ("adam", 3e-5, 1e-5, 8.0)
    assert (nb.batch_size, nb.accumulated_batches, nb.hidden_units, nb.layerwise_decay) == (4, 2, (4096, 2048), None)
    assert (bl.optimizer, bl.lr_frozen_phase, bl.layerwise_decay, bl.frozen_epochs) == ("adamw", 3.1e-5, 0.95, 0.3)
    assert (bl.batch_size, bl.accumulated_batches, bl.hidden_units, bl.dropout) == (2, 4, (2048, 1024), 0.15)


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        TrainConfig.from_json('{"bogus": 1}')
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(ConfigError):
        TrainConfig(loss="l1")
    with pytest.raises(ConfigError):
        TrainConfig(layerwise_decay=1.5)


# --- training -------------------------------------------------------------------------

def tiny_data(n, seed=0):
    rng = np.random.default_rng(seed)
    words = ["a", "b", "c", "d", "e", "f"]
    out = []
    for _ in range(n):
        ref = " ".join(rng.choice(words, size=3))
        hyp = " ".join(rng.choice(words, size=3))
        out.append(QERecord(hyp, float(rng.integers(1, 6)), source=ref.upper(), reference=ref))
    return out


def tiny_model(records, layers=2, hidden=(8, 4), dtype=np.float32):
    m = build_estimator("reference", records, hidden=hidden, seed=1, dim=8, layers=layers, heads=2)
    return m.astype(dtype) if dtype != np.float32 else m


def encoder_snapshot(model):
    return {k: v.data.copy() for k, v in model.encoder.params.items()}


def test_schedule_conformance():
    records = tiny_data(40)
    model = tiny_model(records)
    cfg = TrainConfig(frozen_epochs=8, batch_size=4, accumulated_batches=1, layerwise_decay=0.95,
                      lr_unfrozen_phase=1e-3, hidden_units=(8, 4), max_epochs=9)
    before = encoder_snapshot(model)
    seen = {}

    def on_step(tr):
        changed = any(not np.array_equal(before[k], v.data) for k, v in model.encoder.params.items())
        seen[tr.state.step] = (changed, dict(tr.state.group_lr))

    train(model, cfg, records, tiny_data(8, seed=1), on_step=on_step)
    assert max(seen) == 90
    assert not any(seen[s][0] for s in range(1, 81))
    assert seen[81][0]
    assert seen[80][1] == {"embeddings": 0.0, "layer1": 0.0, "layer2": 0.0, "head": cfg.lr_frozen_phase}
    lrs = seen[81][1]
    assert lrs["head"] == 1e-3
    assert lrs["layer2"] == 1e-3
    assert lrs["layer1"] == pytest.approx(1e-3 * 0.95, rel=1e-15)
    assert lrs["embeddings"] == pytest.approx(1e-3 * 0.95**2, rel=1e-15)


def test_fractional_frozen_phase_ends_mid_epoch():
    records = tiny_data(40)
    tr = Trainer(tiny_model(records), TrainConfig(frozen_epochs=0.3, batch_size=2, accumulated_batches=4,
                                                  hidden_units=(8, 4)), len(records))
    assert (tr.steps_per_epoch, tr.frozen_steps) == (5, 2)


def accumulation_run(batch_size, accumulated):
    records = tiny_data(4)
    model = tiny_model(records, layers=1, dtype=np.float64)
    cfg = TrainConfig(frozen_epochs=0, batch_size=batch_size, accumulated_batches=accumulated, dropout=0.0,
                      lr_unfrozen_phase=1e-3, hidden_units=(8, 4))
    tr = Trainer(model, cfg, len(records))
    tr.run_epoch(records)
    return model, tr


def flat_params(model):
    return np.concatenate([p.data.ravel() for p in model.params.values()])


def test_accumulation_equivalence():
    ma, ta = accumulation_run(4, 1)
    mb, tb = accumulation_run(2, 2)
    assert ta.state.step == tb.state.step == 1
    a, b = flat_params(ma), flat_params(mb)
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-6


def test_accumulated_gradient_is_mean_of_micro_batches(monkeypatch):
    captured = []

    def capture(kind, groups, lrs, state, weight_decay=0.0):
        captured.append({k: p.grad.copy() for g in groups for k, p in g.params.items()})

    monkeypatch.setattr(trainer_mod, "optimizer_step", capture)
    accumulation_run(4, 1)
    accumulation_run(2, 2)
    full, accumulated = captured
    assert full.keys() == accumulated.keys()
    for k, g in full.items():
        np.testing.assert_allclose(accumulated[k], g, rtol=1e-9, atol=1e-12)


def test_best_epoch_earliest_maximum(monkeypatch):
    records = tiny_data(8)
    model = tiny_model(records)
    values = iter([0.1, 0.5, 0.5, 0.2])
    snapshots = []

    def fake_dev(m, dev):
        snapshots.append({k: v.data.copy() for k, v in m.params.items()})
        return next(values)

    monkeypatch.setattr(trainer_mod, "dev_pearson", fake_dev)
    cfg = TrainConfig(frozen_epochs=0, lr_unfrozen_phase=1e-3, hidden_units=(8, 4), max_epochs=4)
    report, model = train(model, cfg, records, tiny_data(4, seed=2))
    assert report.best_epoch == 2
    for k, v in model.params.items():
        np.testing.assert_array_equal(v.data, snapshots[1][k])


def test_constant_dev_gold_rejected():
    records = tiny_data(8)
    dev = [QERecord("a", 3.0, source="A", reference="a")] * 3
    with pytest.raises(ConfigError, match="constant"):
        train(tiny_model(records), TrainConfig(hidden_units=(8, 4)), records, dev)


def test_hidden_units_must_match_head():
    records = tiny_data(8)
    with pytest.raises(ConfigError):
        Trainer(tiny_model(records), TrainConfig(hidden_units=(16, 4)), 8)


def test_training_is_deterministic(tmp_path):
    records, dev = tiny_data(12), tiny_data(6, seed=3)
    cfg = TrainConfig(frozen_epochs=1, lr_frozen_phase=1e-3, lr_unfrozen_phase=1e-3, hidden_units=(8, 4),
                      max_epochs=3)
    for name in ("a", "b"):
        train(tiny_model(records), cfg, records, dev, out_dir=tmp_path / name)
    for fname in ("params.bin", "metadata.txt", "epochs.tsv", "vocab.txt"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    lines = (tmp_path / "a" / "epochs.tsv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("1\t")


def overfit_32(epochs=200):
    data = make_planted_dataset(n_train=32, n_dev=16, seed=0)
    model = EstimatorModel("reference", data.student_encoder(), data.vocab, hidden=(64, 32), seed=0)
    cfg = TrainConfig(lr_frozen_phase=1e-3, lr_unfrozen_phase=1e-3, frozen_epochs=0, batch_size=8,
                      accumulated_batches=1, dropout=0.0, max_epochs=epochs)
    report, _ = train(model, cfg, data.train, data.dev)
    return report


def test_overfit_small_set():
    report = overfit_32(60)
    assert report.train_loss[-1] < 0.01
    assert all(math.isfinite(x) for x in report.train_loss)

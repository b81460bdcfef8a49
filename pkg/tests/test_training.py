"""Optimizer and training-loop checks: Adam update algebra, reproducibility,
checkpoint selection and persistence."""

import numpy as np
import pytest

from entrometer import dataio, qsim
from entrometer.errors import DataFormatError
from entrometer.neural import (AdamState, ExampleSet, ModelConfig, TrainConfig,
                               TrainingDiverged, adam_step,
                               examples_from_records, flatten_params,
                               load_checkpoint, read_history, save_checkpoint,
                               train, write_history)
from entrometer.neural import init_params

TINY_MODEL = ModelConfig(rnn_features=(4, 4), gat_features=(4,),
                         dfnn_features=(4, 2), learning_rate=3e-3, seed=21)


@pytest.fixture(scope="module")
def tiny_sets():
    cfg = dataio.UnitaryDatasetConfig(qsim.SystemConfig(4), n_states=6,
                                      time_interval=(0.0, 4.0), n_batches=3,
                                      n_samples=25, seed=31)
    train_recs = dataio.generate_unitary_records(cfg, "exact")
    val_cfg = dataio.UnitaryDatasetConfig(qsim.SystemConfig(4), n_states=6,
                                          time_interval=(0.0, 4.0), n_batches=2,
                                          n_samples=25, seed=32)
    val_recs = dataio.generate_unitary_records(val_cfg, "exact")
    return (examples_from_records(train_recs, "hce"),
            examples_from_records(val_recs, "hce"))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    params = init_params(TINY_MODEL)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    state = AdamState.zeros_like(params)
    new, state = adam_step(params, grads, state, lr=1e-3)
    for k in params:
        assert np.array_equal(new[k], params[k])


def test_adam_first_step_magnitude():
    params = {"w": np.zeros(5)}
    grads = {"w": np.full(5, 0.1)}
    state = AdamState.zeros_like(params)
    lr = 5e-4
    new, state = adam_step(params, grads, state, lr=lr)
    # bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g)
    assert np.abs(np.abs(new["w"]) - lr).max() < lr * 1e-4
    assert (new["w"] < 0).all()
    assert state.step == 1


def test_adam_moments_are_emas():
    params = {"w": np.zeros(3)}
    state = AdamState.zeros_like(params)
    g1 = {"w": np.array([1.0, -2.0, 0.5])}
    params, state = adam_step(params, g1, state)
    assert np.allclose(state.m["w"], 0.1 * g1["w"])
    assert np.allclose(state.v["w"], 0.001 * g1["w"] ** 2)
    g2 = {"w": np.array([0.0, 1.0, 1.0])}
    _, state2 = adam_step(params, g2, state)
    assert np.allclose(state2.m["w"], 0.9 * state.m["w"] + 0.1 * g2["w"])
    assert np.allclose(state2.v["w"], 0.999 * state.v["w"] + 0.001 * g2["w"] ** 2)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_training_reproducible_and_argmin(tiny_sets):
    train_set, val_set = tiny_sets
    cfg = TrainConfig(epochs=8, minibatch_size=6, seed=5)
    a = train(TINY_MODEL, cfg, train_set, val_set)
    b = train(TINY_MODEL, cfg, train_set, val_set)
    assert a.history == b.history
    assert np.array_equal(flatten_params(a.params, TINY_MODEL),
                          flatten_params(b.params, TINY_MODEL))
    val_losses = [v for _, _, v in a.history]
    assert a.best_val_loss == min(val_losses)
    assert a.best_epoch == int(np.argmin(val_losses))
    assert a.best_val_loss <= min(val_losses)


def test_training_loss_decreases_smoothed(tiny_sets):
    train_set, val_set = tiny_sets
    cfg = TrainConfig(epochs=14, minibatch_size=6, seed=7)
    result = train(TINY_MODEL, cfg, train_set, val_set)
    tr = np.array([t for _, t, _ in result.history])
    smoothed = np.convolve(tr, np.ones(3) / 3, mode="valid")
    first10 = smoothed[:10]
    assert (np.diff(first10) < 0).all()


def test_training_divergence_on_bad_gradients(tiny_sets):
    train_set, val_set = tiny_sets
    poisoned = ExampleSet(train_set.outcomes.copy(), train_set.labels.copy())
    poisoned.labels[:] = np.nan
    cfg = TrainConfig(epochs=3, minibatch_size=6, seed=1)
    with np.errstate(invalid="ignore"):
        with pytest.raises(TrainingDiverged):
            train(TINY_MODEL, cfg, poisoned, val_set)


def test_training_divergence_on_non_finite_val_loss(tiny_sets):
    train_set, val_set = tiny_sets
    poisoned = ExampleSet(val_set.outcomes.copy(), val_set.labels.copy())
    poisoned.labels[:] = np.nan
    cfg = TrainConfig(epochs=3, minibatch_size=6, seed=1)
    with np.errstate(invalid="ignore"):
        with pytest.raises(TrainingDiverged) as err:
            train(TINY_MODEL, cfg, train_set, poisoned)
    # the epoch that diverged is still recorded
    assert len(err.value.history) == 1


def test_train_rejects_mismatched_sites(tiny_sets):
    train_set, _ = tiny_sets
    other = ExampleSet(np.ones((4, 10, 3), dtype=np.uint8), np.zeros(4))
    with pytest.raises(ValueError):
        train(TINY_MODEL, TrainConfig(epochs=1), train_set, other)


def test_examples_from_records_flattening():
    cfg = dataio.UnitaryDatasetConfig(qsim.SystemConfig(4), n_states=3,
                                      time_interval=(0.0, 2.0), n_batches=2,
                                      n_samples=10, seed=3)
    recs = dataio.generate_unitary_records(cfg, "exact")
    examples = examples_from_records(recs, "hce")
    assert examples.n_examples == 6
    assert examples.outcomes.shape == (6, 10, 4)
    assert examples.labels[0] == examples.labels[1] == recs[0].labels["hce"]


# ---------------------------------------------------------------------------
# checkpoints and history
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    params = init_params(TINY_MODEL, member=4)
    save_checkpoint(tmp_path, params, TINY_MODEL, seed=9, epoch=17,
                    val_loss=-1.25)
    loaded, cfg, meta = load_checkpoint(tmp_path)
    assert cfg == TINY_MODEL
    assert meta["epoch"] == "17"
    assert float(meta["val_loss"]) == -1.25
    for k in params:
        assert np.array_equal(loaded[k], params[k])


def test_checkpoint_detects_corruption(tmp_path):
    params = init_params(TINY_MODEL)
    save_checkpoint(tmp_path, params, TINY_MODEL, seed=0, epoch=0, val_loss=0.0)
    payload = (tmp_path / "params.f64").read_bytes()
    (tmp_path / "params.f64").write_bytes(payload[:-8])
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path)
    (tmp_path / "params.f64").write_bytes(b"\x00" * 8 + payload[8:])
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path)
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / "missing")


def test_history_round_trip(tmp_path):
    history = [(0, 1.5, 2.5), (1, 1.25, 2.25), (2, 1.0, 2.0)]
    path = write_history(tmp_path / "history.csv", history)
    assert read_history(path) == history
    header = path.read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_loss"

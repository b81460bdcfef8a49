"""Adam optimization, the epoch loop and checkpoint persistence.

An epoch is one pass over all labeled examples (an example is a single
sample batch with its scalar label) in a freshly shuffled order, stepping
on fixed-size minibatches.  After every epoch the mean validation loss is
recorded; the returned parameters are the checkpoint with the lowest
validation loss seen.

Checkpoints are a text manifest plus a raw little-endian float64 payload
whose layout is `model.param_layout` order, each tensor raveled C-style.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataio import LabeledRecord
from ..errors import DataFormatError, NumericalError
from ..streams import SHUFFLE, stream
from .model import (ModelConfig, flatten_params, forward_loss, gradients,
                    init_params, param_layout, unflatten_params)

CHECKPOINT_MANIFEST = "checkpoint.txt"
CHECKPOINT_PAYLOAD = "params.f64"
HISTORY_NAME = "history.csv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4000
    minibatch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be positive")


@dataclass
class ExampleSet:
    """Flattened (batch, label) pairs ready for the optimizer."""

    outcomes: np.ndarray  # (n_examples, n_samples, n_sites) uint8
    labels: np.ndarray    # (n_examples,) float64

    def __post_init__(self):
        if self.outcomes.shape[0] != self.labels.shape[0]:
            raise ValueError("examples and labels disagree in length")

    @property
    def n_examples(self) -> int:
        return self.labels.size

    @property
    def n_sites(self) -> int:
        return self.outcomes.shape[2]


def examples_from_records(records: list[LabeledRecord], label_kind: str) -> ExampleSet:
    """Every (record, batch) pair becomes one labeled example."""
    outcomes = np.concatenate([r.batches for r in records], axis=0)
    labels = np.concatenate([
        np.full(r.batches.shape[0], r.labels[label_kind]) for r in records
    ])
    return ExampleSet(outcomes, labels)


class TrainingDiverged(NumericalError):
    """Loss became non-finite; carries the history up to the failure."""

    def __init__(self, message: str, history: list[tuple[int, float, float]]):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float = 5e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and moments."""
    t = state.step + 1
    new_params = {}
    new_m = {}
    new_v = {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_epoch: int
    best_val_loss: float
    history: list[tuple[int, float, float]] = field(repr=False)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_set: ExampleSet,
          val_set: ExampleSet, member: int = 0,
          progress=None) -> TrainResult:
    """Minibatch Adam over shuffled examples; keeps the best-validation params."""
    if train_set.n_sites != val_set.n_sites:
        raise ValueError("train and validation sets disagree in n_sites")
    params = init_params(model_cfg, member)
    adam = AdamState.zeros_like(params)
    rng = stream(train_cfg.seed, SHUFFLE, member)
    mb = train_cfg.minibatch_size

    history: list[tuple[int, float, float]] = []
    best_loss = np.inf
    best_epoch = -1
    best_params = {k: p.copy() for k, p in params.items()}

    for epoch in range(train_cfg.epochs):
        perm = rng.permutation(train_set.n_examples)
        losses = []
        for start in range(0, train_set.n_examples, mb):
            idx = perm[start:start + mb]
            try:
                loss, grads = gradients(params, model_cfg,
                                        train_set.outcomes[idx],
                                        train_set.labels[idx])
            except NumericalError as exc:
                raise TrainingDiverged(
                    f"gradient failure at epoch {epoch}: {exc}", history) from exc
            params, adam = adam_step(params, grads, adam, lr=model_cfg.learning_rate)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss = forward_loss(params, model_cfg, val_set.outcomes, val_set.labels)
        history.append((epoch, train_loss, val_loss))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch}", history)
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_params = {k: p.copy() for k, p in params.items()}
        if progress is not None:
            progress(epoch, train_loss, val_loss)
    return TrainResult(best_params, best_epoch, float(best_loss), history)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _fmt_tuple(t: tuple[int, ...]) -> str:
    return ",".join(str(v) for v in t)


def save_checkpoint(directory: str | Path, params: dict[str, np.ndarray],
                    cfg: ModelConfig, *, seed: int, epoch: int,
                    val_loss: float) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = flatten_params(params, cfg).astype("<f8").tobytes()
    lines = [
        "format_version = 1",
        f"rnn_features = {_fmt_tuple(cfg.rnn_features)}",
        f"gat_features = {_fmt_tuple(cfg.gat_features)}",
        f"dfnn_features = {_fmt_tuple(cfg.dfnn_features)}",
        f"learning_rate = {repr(cfg.learning_rate)}",
        f"model_seed = {cfg.seed}",
        f"train_seed = {seed}",
        f"epoch = {epoch}",
        f"val_loss = {repr(float(val_loss))}",
        f"n_params = {len(payload) // 8}",
        f"params_file = {CHECKPOINT_PAYLOAD}",
        f"params_crc32 = {zlib.crc32(payload):08x}",
    ]
    (directory / CHECKPOINT_PAYLOAD).write_bytes(payload)
    (directory / CHECKPOINT_MANIFEST).write_text("\n".join(lines) + "\n",
                                                 encoding="utf-8")
    return directory


def load_checkpoint(directory: str | Path
                    ) -> tuple[dict[str, np.ndarray], ModelConfig, dict[str, str]]:
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise DataFormatError(f"no {CHECKPOINT_MANIFEST} under {directory}")
    entries = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and "=" in line:
            k, v = line.split("=", 1)
            entries[k.strip()] = v.strip()
    if entries.get("format_version") != "1":
        raise DataFormatError(f"unsupported checkpoint version {entries.get('format_version')}")

    def _tuple(key):
        return tuple(int(v) for v in entries[key].split(","))

    cfg = ModelConfig(rnn_features=_tuple("rnn_features"),
                      gat_features=_tuple("gat_features"),
                      dfnn_features=_tuple("dfnn_features"),
                      learning_rate=float(entries["learning_rate"]),
                      seed=int(entries["model_seed"]))
    payload = (directory / entries.get("params_file", CHECKPOINT_PAYLOAD)).read_bytes()
    if f"{zlib.crc32(payload):08x}" != entries["params_crc32"]:
        raise DataFormatError("checkpoint payload checksum mismatch")
    vec = np.frombuffer(payload, dtype="<f8")
    if vec.size != int(entries["n_params"]):
        raise DataFormatError("checkpoint payload size inconsistent with manifest")
    expected = sum(int(np.prod(s)) for _, s in param_layout(cfg))
    if vec.size != expected:
        raise DataFormatError(
            f"payload holds {vec.size} parameters, model needs {expected}")
    return unflatten_params(vec.astype(np.float64), cfg), cfg, entries


def write_history(path: str | Path, history: list[tuple[int, float, float]]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, vl in history:
            writer.writerow([epoch, repr(tr), repr(vl)])
    return path


def read_history(path: str | Path) -> list[tuple[int, float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]))
            for r in rows]

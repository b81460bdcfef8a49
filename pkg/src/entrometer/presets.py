"""Named experiment configurations.

``full`` presets carry the published benchmark parameters; ``desk`` presets
shrink every axis to something a laptop finishes in minutes to an hour and
are the configurations the acceptance suite pins down.

Seed convention: a preset derives dataset seeds from the base seed by fixed
offsets (train +0, validation +1, test/eval +2, splits +3/+4), so one
``--seed`` flag reproduces an entire experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

from .baseline import BaselineConfig
from .dataio import (DissipativeDatasetConfig, UnitaryDatasetConfig,
                     make_validation_splits, noise_grid)
from .neural import ModelConfig, TrainConfig
from .qsim import Bipartition, SystemConfig

SCALES = ("full", "desk")
DEFAULT_SEED = 7041


@dataclass(frozen=True)
class UnitaryExperiment:
    train: UnitaryDatasetConfig
    val: UnitaryDatasetConfig
    eval: UnitaryDatasetConfig
    model: ModelConfig
    training: TrainConfig
    ensemble: int
    id_interval: tuple[float, float]


@dataclass(frozen=True)
class DissipativeExperiment:
    train: DissipativeDatasetConfig
    val: DissipativeDatasetConfig
    test: DissipativeDatasetConfig
    model: ModelConfig
    training: TrainConfig
    ensemble: int


def _check_scale(scale: str) -> None:
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}, expected one of {SCALES}")


def unitary_experiment(scale: str = "full", seed: int = DEFAULT_SEED,
                       ensemble: int = 1) -> UnitaryExperiment:
    """Quench benchmark: train on ht in [0,5], evaluate out to ht = 10."""
    _check_scale(scale)
    if scale == "full":
        system = SystemConfig(n_sites=10)
        n_states, n_batches, n_samples = 100, 50, 1000
        val_batches, eval_batches = 50, 1
        epochs = 4000
    else:
        system = SystemConfig(n_sites=6)
        n_states, n_batches, n_samples = 50, 20, 100
        val_batches, eval_batches = 5, 10
        epochs = 400
    train = UnitaryDatasetConfig(system, n_states, (0.0, 5.0), n_batches,
                                 n_samples, seed=seed)
    val = UnitaryDatasetConfig(system, n_states, (0.0, 5.0), val_batches,
                               n_samples, seed=seed + 1)
    n_eval = 100
    eval_cfg = UnitaryDatasetConfig(system, n_eval, (0.0, 10.0), eval_batches,
                                    n_samples, seed=seed + 2)
    model = ModelConfig(seed=seed)
    training = TrainConfig(epochs=epochs, minibatch_size=10, seed=seed)
    return UnitaryExperiment(train, val, eval_cfg, model, training, ensemble,
                             (0.0, 5.0))


def dissipative_experiment(scale: str = "full",
                           seed: int = DEFAULT_SEED) -> DissipativeExperiment:
    """Noise-plane benchmark at fixed evolution time t* = 0.75."""
    _check_scale(scale)
    if scale == "full":
        system = SystemConfig(n_sites=8)
        grid_n, n_batches, n_samples = 5, 50, 1000
        val_batches, test_batches = 50, 1
        n_val_random, n_val_section = 20, 40
        n_test_random, n_test_section = 30, 30
        epochs = 4000
    else:
        system = SystemConfig(n_sites=6)
        grid_n, n_batches, n_samples = 3, 20, 100
        val_batches, test_batches = 5, 1
        n_val_random, n_val_section = 8, 8
        n_test_random, n_test_section = 10, 0
        epochs = 400

    train_points = noise_grid(grid_n)
    val_random = make_validation_splits("random", n_val_random, seed=seed + 3)
    val_section = make_validation_splits("cross_section", n_val_section, seed=seed + 5)
    val_points = [tuple(p) for p in val_random] + [tuple(p) for p in val_section]
    val_tags = ("random",) * n_val_random + ("cross_section",) * n_val_section

    test_random = make_validation_splits("random", n_test_random, seed=seed + 4)
    test_points = [tuple(p) for p in test_random]
    test_tags = ["random"] * n_test_random
    if n_test_section:
        test_section = make_validation_splits("cross_section", n_test_section,
                                              seed=seed + 6)
        test_points += [tuple(p) for p in test_section]
        test_tags += ["cross_section"] * n_test_section

    train = DissipativeDatasetConfig(system, train_points, n_batches=n_batches,
                                     n_samples=n_samples, seed=seed,
                                     tags=("grid",) * len(train_points))
    val = DissipativeDatasetConfig(system, tuple(val_points), n_batches=val_batches,
                                   n_samples=n_samples, seed=seed + 1,
                                   tags=val_tags)
    test = DissipativeDatasetConfig(system, tuple(test_points),
                                    n_batches=test_batches, n_samples=n_samples,
                                    seed=seed + 2, tags=tuple(test_tags))
    model = ModelConfig(seed=seed)
    training = TrainConfig(epochs=epochs, minibatch_size=10, seed=seed)
    return DissipativeExperiment(train, val, test, model, training, ensemble=1)


def baseline_config(preset: str, n_sites: int, seed: int = DEFAULT_SEED
                    ) -> BaselineConfig:
    """Measurement budgets of the two published comparison points.

    `low` spends 2 x 500 = 1000 shots per state (the network's budget);
    `high` spends 300 x 5000 = 1.5e6 shots per state.
    """
    part = Bipartition.half_chain(n_sites)
    if preset == "low":
        return BaselineConfig(2, 500, part, seed)
    if preset == "high":
        return BaselineConfig(300, 5000, part, seed)
    raise ValueError(f"unknown baseline preset {preset!r}, expected low|high")

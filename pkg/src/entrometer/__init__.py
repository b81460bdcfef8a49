"""Entanglement-entropy estimation for spin chains from few measurement samples.

Subpackages: `qsim` (exact chain dynamics and entropies), `povm`
(generalized measurement model and samplers), `dataio` (dataset generation
and persistence), `neural` (the set-regression estimator), `baseline`
(randomized-measurement comparator), `metrics`, `presets`, `plotting` and
the `cli` front end.
"""

__version__ = "0.1.0"

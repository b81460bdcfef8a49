"""Randomized-measurement purity estimation (the conventional comparator).

The subsystem is measured in the computational basis after independent
Haar-random single-qubit rotations; for each rotation the second moment of
the outcome distribution is estimated with unbiased coincidence counting,

    X_U = 2^Na * sum_{s,s'} (-2)^(-D(s,s')) * P2(s, s'),

with D the Hamming distance, P2(s,s) = n_s (n_s - 1) / (M (M - 1)) and
P2(s,s') = n_s n_s' / (M (M - 1)) otherwise.  Averaging X_U over the random
rotations gives an unbiased estimate of Tr(rho_A^2); the quoted error bar
is the standard error of the per-rotation values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qsim, streams


@dataclass(frozen=True)
class BaselineConfig:
    """Measurement budget: n_unitaries rotations, n_measurements shots each."""

    n_unitaries: int
    n_measurements: int
    subsystem: qsim.Bipartition
    seed: int = 0

    def __post_init__(self):
        if self.n_unitaries < 2:
            raise ValueError("need n_unitaries >= 2 for a variance estimate")
        if self.n_measurements < 2:
            raise ValueError("coincidence counting needs n_measurements >= 2")


@dataclass(frozen=True)
class MeasurementRecord:
    """Subsystem bitstring counts for one random rotation."""

    counts: np.ndarray  # (2^Na,) int64

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1 or counts.min() < 0:
            raise ValueError("counts must be a non-negative vector")

    @property
    def n_shots(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class EntropyEstimate:
    """Estimated entropy in nats; `physical` is False for purity <= 0."""

    value: float
    physical: bool


def random_local_unitaries(n_sites: int, seed: int | np.random.Generator
                           ) -> np.ndarray:
    """Independent Haar-random 2x2 unitaries, one per site; shape (n_sites, 2, 2).

    Drawn via QR of a complex Gaussian matrix with the R diagonal's phases
    divided out, which makes the distribution exactly Haar.
    """
    rng = seed if isinstance(seed, np.random.Generator) else streams.stream(seed)
    out = np.empty((n_sites, 2, 2), dtype=np.complex128)
    for i in range(n_sites):
        z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        q, r = np.linalg.qr(z)
        d = np.diagonal(r)
        out[i] = q * (d / np.abs(d))[None, :]
    return out


def _subsystem_probabilities(state: qsim.PureState | qsim.DensityMatrix,
                             unitaries: np.ndarray,
                             part: qsim.Bipartition) -> np.ndarray:
    """Computational-basis outcome distribution of the rotated subsystem."""
    n = state.n_sites
    part.validate_for(n)
    sites = part.subsystem_a
    if len(unitaries) != len(sites):
        raise ValueError(f"{len(unitaries)} unitaries for {len(sites)} subsystem sites")
    if isinstance(state, qsim.PureState):
        amp = state.amplitudes
        for u, site in zip(unitaries, sites):
            amp = qsim.apply_site_operator(amp, u, site, n)
        rotated = qsim.PureState(amp)
    else:
        mat = state.matrix
        for u, site in zip(unitaries, sites):
            mat = qsim.apply_site_operator_left(mat, u, site, n)
            mat = qsim.apply_site_operator_left(mat.conj().T, u, site, n).conj().T
        rotated = qsim.DensityMatrix(mat, validate=False)
    red = qsim.partial_trace(rotated, part)
    probs = np.real(np.diagonal(red.matrix)).copy()
    probs[probs < 0] = 0.0
    return probs / probs.sum()


def simulate_randomized_measurements(state: qsim.PureState | qsim.DensityMatrix,
                                     unitaries: np.ndarray,
                                     part: qsim.Bipartition, n_meas: int,
                                     seed: int | np.random.Generator
                                     ) -> MeasurementRecord:
    """Rotate, reduce to the subsystem and draw i.i.d. projective outcomes."""
    rng = seed if isinstance(seed, np.random.Generator) else streams.stream(seed)
    probs = _subsystem_probabilities(state, unitaries, part)
    return MeasurementRecord(rng.multinomial(n_meas, probs))


def _hamming_weights(n_a: int) -> np.ndarray:
    s = np.arange(1 << n_a)
    xor = s[:, None] ^ s[None, :]
    return np.array([[bin(v).count("1") for v in row] for row in xor])


def purity_estimates(records: list[MeasurementRecord], n_a: int) -> np.ndarray:
    """Per-rotation purity estimates X_U (unbiased coincidence counting)."""
    if not records:
        raise ValueError("need at least one measurement record")
    weights = (-2.0) ** (-_hamming_weights(n_a))
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        counts = rec.counts.astype(np.float64)
        if counts.size != (1 << n_a):
            raise ValueError(f"record {i} has {counts.size} bins, expected {1 << n_a}")
        m = counts.sum()
        if m < 2:
            raise ValueError("coincidence counting needs at least 2 shots per rotation")
        pair_sum = counts @ weights @ counts - counts.sum()  # diagonal D=0 correction
        out[i] = (2.0 ** n_a) * pair_sum / (m * (m - 1.0))
    return out


def estimate_purity(records: list[MeasurementRecord], n_a: int) -> float:
    """Mean of the per-rotation purity estimates."""
    return float(purity_estimates(records, n_a).mean())


def hce_from_purity(purity: float) -> EntropyEstimate:
    """-ln(purity); non-positive estimates are flagged instead of propagated."""
    if purity <= 0.0:
        return EntropyEstimate(float("nan"), False)
    return EntropyEstimate(float(-np.log(purity)), True)


@dataclass(frozen=True)
class BaselineEstimate:
    purity: float
    purity_stderr: float
    hce: EntropyEstimate
    hce_stderr: float


def baseline_estimate(state: qsim.PureState | qsim.DensityMatrix,
                      cfg: BaselineConfig) -> BaselineEstimate:
    """Full protocol on one state: rotations, shots, estimator and error bars."""
    n_a = len(cfg.subsystem.subsystem_a)
    records = []
    for u in range(cfg.n_unitaries):
        rng = streams.stream(cfg.seed, streams.BASELINE, u)
        unitaries = random_local_unitaries(n_a, rng)
        records.append(simulate_randomized_measurements(
            state, unitaries, cfg.subsystem, cfg.n_measurements, rng))
    per_u = purity_estimates(records, n_a)
    purity = float(per_u.mean())
    stderr = float(per_u.std(ddof=1) / np.sqrt(len(per_u)))
    hce = hce_from_purity(purity)
    hce_err = stderr / purity if hce.physical else float("nan")
    return BaselineEstimate(purity, stderr, hce, float(hce_err))

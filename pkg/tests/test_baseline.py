"""Randomized-measurement estimator checks: Haar statistics, measurement
simulation against dense linear algebra, and estimator bias/variance."""

import numpy as np
import pytest

from entrometer import baseline as bl
from entrometer import qsim


def random_pure(n: int, seed: int) -> qsim.PureState:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return qsim.PureState(v / np.linalg.norm(v))


# ---------------------------------------------------------------------------
# unitary draws
# ---------------------------------------------------------------------------

def test_unitaries_are_unitary_and_reproducible():
    us = bl.random_local_unitaries(6, seed=4)
    assert us.shape == (6, 2, 2)
    for u in us:
        assert np.abs(u @ u.conj().T - np.eye(2)).max() < 1e-12
    again = bl.random_local_unitaries(6, seed=4)
    assert np.array_equal(us, again)
    other = bl.random_local_unitaries(6, seed=5)
    assert not np.allclose(us, other)


def test_haar_first_moment():
    rng = np.random.default_rng(0)
    us = bl.random_local_unitaries(10_000, rng)
    mean_sq = float(np.mean(np.abs(us[:, 0, 0]) ** 2))
    assert abs(mean_sq - 0.5) < 0.02


# ---------------------------------------------------------------------------
# measurement simulation
# ---------------------------------------------------------------------------

def test_identity_unitaries_on_zero_state():
    zero = qsim.PureState(np.eye(1 << 3)[0])
    part = qsim.Bipartition((0, 1))
    eye = np.stack([np.eye(2, dtype=complex)] * 2)
    rec = bl.simulate_randomized_measurements(zero, eye, part, 100, seed=1)
    assert rec.counts[0] == 100
    assert rec.counts[1:].sum() == 0


def test_counts_sum_to_shots():
    psi = random_pure(4, 2)
    part = qsim.Bipartition.half_chain(4)
    us = bl.random_local_unitaries(2, seed=3)
    rec = bl.simulate_randomized_measurements(psi, us, part, 777, seed=4)
    assert rec.n_shots == 777


@pytest.mark.parametrize("n,keep", [(2, (0,)), (3, (0, 1)), (4, (1, 2))])
def test_probabilities_match_dense_oracle(n, keep, monkeypatch):
    psi = random_pure(n, n + 7)
    part = qsim.Bipartition(keep)
    us = bl.random_local_unitaries(len(keep), seed=n)
    # oracle: build the full rotation as a dense kron product
    full = np.array([[1.0]], dtype=complex)
    per_site = [np.eye(2, dtype=complex)] * n
    for u, site in zip(us, keep):
        per_site[site] = u
    for m in per_site:
        full = np.kron(full, m)
    rho = np.outer(psi.amplitudes, psi.amplitudes.conj())
    rho = full @ rho @ full.conj().T
    red = qsim.partial_trace(qsim.DensityMatrix(rho, validate=False), part)
    expected = np.real(np.diagonal(red.matrix))
    got = bl._subsystem_probabilities(psi, us, part)
    assert np.abs(got - expected).max() < 1e-10


def test_density_matrix_state_supported():
    rng = np.random.default_rng(9)
    psi = random_pure(3, 11)
    rho = qsim.DensityMatrix.from_pure(psi)
    part = qsim.Bipartition((0,))
    us = bl.random_local_unitaries(1, seed=12)
    p_pure = bl._subsystem_probabilities(psi, us, part)
    p_mixed = bl._subsystem_probabilities(rho, us, part)
    assert np.abs(p_pure - p_mixed).max() < 1e-12


# ---------------------------------------------------------------------------
# purity estimation
# ---------------------------------------------------------------------------

def test_plugin_estimator_recovers_unit_purity():
    """Counts proportional to the exact outcome distribution of a pure product
    subsystem drive the estimator to purity 1."""
    zero = qsim.PureState(np.array([1.0, 0.0, 0.0, 0.0]))
    part = qsim.Bipartition((0,))
    rng = np.random.default_rng(3)
    n_meas = 1_000_000
    records = []
    for _ in range(3000):
        us = bl.random_local_unitaries(1, rng)
        probs = bl._subsystem_probabilities(zero, us, part)
        records.append(bl.MeasurementRecord(np.round(probs * n_meas).astype(int)))
    est = bl.estimate_purity(records, 1)
    assert abs(est - 1.0) < 0.02


def test_bell_pair_subsystem_purity():
    bell = qsim.PureState(np.array([1.0, 0, 0, 1.0]) / np.sqrt(2))
    cfg = bl.BaselineConfig(200, 10_000, qsim.Bipartition((0,)), seed=6)
    est = bl.baseline_estimate(bell, cfg)
    stderr = max(est.purity_stderr, 1e-4)
    assert abs(est.purity - 0.5) < 3 * stderr
    assert est.hce.physical


def test_unbiasedness_on_random_state():
    psi = random_pure(4, 40)
    part = qsim.Bipartition((0, 1))
    truth = np.sum(np.abs(qsim.partial_trace(psi, part).matrix) ** 2).real
    estimates = [
        bl.baseline_estimate(psi, bl.BaselineConfig(50, 1000, part, seed=s)).purity
        for s in range(40)
    ]
    estimates = np.array(estimates)
    se = estimates.std(ddof=1) / np.sqrt(len(estimates))
    assert abs(estimates.mean() - truth) < 3 * se + 1e-12


def test_variance_shrinks_with_budget():
    psi = random_pure(3, 41)
    part = qsim.Bipartition((0,))

    def spread(n_u, n_m, seeds=12):
        vals = [bl.baseline_estimate(
            psi, bl.BaselineConfig(n_u, n_m, part, seed=1000 + s)).purity
            for s in range(seeds)]
        return np.var(vals, ddof=1)

    assert spread(40, 400) < spread(4, 400)
    assert spread(4, 4000) < spread(4, 40)


def test_estimator_input_validation():
    with pytest.raises(ValueError):
        bl.BaselineConfig(1, 100, qsim.Bipartition((0,)))
    with pytest.raises(ValueError):
        bl.BaselineConfig(2, 1, qsim.Bipartition((0,)))
    with pytest.raises(ValueError):
        bl.purity_estimates([], 1)
    with pytest.raises(ValueError):
        bl.purity_estimates([bl.MeasurementRecord(np.array([1, 0]))], 1)
    with pytest.raises(ValueError):
        bl.purity_estimates([bl.MeasurementRecord(np.array([5, 5, 5]))], 1)


# ---------------------------------------------------------------------------
# entropy mapping
# ---------------------------------------------------------------------------

def test_hce_from_purity_values():
    assert bl.hce_from_purity(1.0).value == 0.0
    assert abs(bl.hce_from_purity(0.5).value - np.log(2)) < 1e-12
    flagged = bl.hce_from_purity(-0.01)
    assert not flagged.physical
    assert np.isnan(flagged.value)
    assert not bl.hce_from_purity(0.0).physical


def test_flagged_estimates_excluded_from_averages():
    values = [bl.hce_from_purity(p) for p in (0.5, -0.01, 0.25)]
    usable = [v.value for v in values if v.physical]
    assert len(usable) == 2
    assert np.isfinite(usable).all()

"""Pauli-4 generalized measurement: operators, probabilities and samplers.

The single-site measurement has four outcomes: scaled projectors onto the
+1 eigenstates of sigma_x, sigma_y and sigma_z, plus the completing fourth
element.  Multi-site outcomes are strings a in {1,2,3,4}^N measured with
the tensor product of the corresponding elements, so a state induces a
categorical distribution over 4^N outcome strings.

Two samplers are provided: an exact ancestral sampler driven by prefix
marginals (site-by-site conditionals), and a Metropolis chain with
single-site uniform-resample proposals.  Both consume Philox streams and
are bit-reproducible given (state, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SamplingError
from .qsim import DensityMatrix, PureState, apply_site_operator, apply_site_operator_left
from .streams import stream

N_OUTCOMES = 4


@dataclass(frozen=True)
class Pauli4Set:
    """The four single-qubit measurement operators, shape (4, 2, 2)."""

    ops: np.ndarray

    def __post_init__(self):
        ops = np.asarray(self.ops, dtype=np.complex128)
        object.__setattr__(self, "ops", ops)
        if ops.shape != (4, 2, 2):
            raise ValueError(f"expected shape (4, 2, 2), got {ops.shape}")


@dataclass(frozen=True)
class PovmBatch:
    """A set of outcome strings, shape (n_samples, n_sites), symbols 1..4."""

    outcomes: np.ndarray

    def __post_init__(self):
        out = np.asarray(self.outcomes, dtype=np.uint8)
        object.__setattr__(self, "outcomes", out)
        if out.ndim != 2:
            raise ValueError(f"expected 2-d outcome array, got shape {out.shape}")
        if out.size and (out.min() < 1 or out.max() > N_OUTCOMES):
            raise ValueError("outcome symbols must lie in 1..4")

    @property
    def n_samples(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_sites(self) -> int:
        return self.outcomes.shape[1]

    @property
    def one_hot(self) -> np.ndarray:
        return encode_one_hot(self.outcomes)


@dataclass(frozen=True)
class McmcConfig:
    """Metropolis chain settings; thinning counts sweeps between kept samples."""

    burn_in: int = 100
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thinning < 1:
            raise ValueError(f"thinning must be >= 1, got {self.thinning}")


def default_mcmc_config(n_sites: int, seed: int) -> McmcConfig:
    """Burn-in of 100 sweeps and thinning of one sweep per site."""
    return McmcConfig(burn_in=100, thinning=n_sites, seed=seed)


# ---------------------------------------------------------------------------
# operators and probabilities
# ---------------------------------------------------------------------------

def pauli4_operators() -> Pauli4Set:
    """M1..M3 are third-projectors onto |+>, |L>, |0>; M4 completes to identity."""
    plus = np.array([1.0, 1.0], dtype=np.complex128) / np.sqrt(2.0)
    circ = np.array([1.0, 1.0j], dtype=np.complex128) / np.sqrt(2.0)
    zero = np.array([1.0, 0.0], dtype=np.complex128)
    m1 = np.outer(plus, plus.conj()) / 3.0
    m2 = np.outer(circ, circ.conj()) / 3.0
    m3 = np.outer(zero, zero.conj()) / 3.0
    m4 = np.eye(2, dtype=np.complex128) - m1 - m2 - m3
    return Pauli4Set(np.stack([m1, m2, m3, m4]))


def _check_outcome(a: Sequence[int] | np.ndarray, n_sites: int) -> np.ndarray:
    arr = np.asarray(a, dtype=np.int64)
    if arr.shape != (n_sites,):
        raise ValueError(f"outcome length {arr.shape} does not match N={n_sites}")
    if arr.min() < 1 or arr.max() > N_OUTCOMES:
        raise ValueError("outcome symbols must lie in 1..4")
    return arr


def outcome_probability(state: PureState | DensityMatrix,
                        a: Sequence[int] | np.ndarray) -> float:
    """Probability of one outcome string, by sequential single-site application."""
    n = state.n_sites
    arr = _check_outcome(a, n)
    ops = pauli4_operators().ops
    if isinstance(state, PureState):
        phi = state.amplitudes
        for site, sym in enumerate(arr):
            phi = apply_site_operator(phi, ops[sym - 1], site, n)
        return float(np.vdot(state.amplitudes, phi).real)
    mat = state.matrix
    for site, sym in enumerate(arr):
        mat = apply_site_operator_left(mat, ops[sym - 1], site, n)
    return float(np.trace(mat).real)


def prefix_marginals(state: PureState | DensityMatrix) -> list[np.ndarray]:
    """Marginal probabilities of outcome prefixes, one array per chain length.

    Entry k has shape (4**k,), indexed with site 0 as the most significant
    base-4 digit; the last entry is the full joint distribution.  Built by
    contracting one site at a time, so the cost is O(N 4^N) with a 4^N-sized
    working tensor.
    """
    n = state.n_sites
    dim = 1 << n
    ops = pauli4_operators().ops
    if isinstance(state, PureState):
        t = np.outer(state.amplitudes.conj(), state.amplitudes).reshape(1, dim, dim)
    else:
        t = state.matrix.T.reshape(1, dim, dim).copy()
    tables = [np.ones(1)]
    for _ in range(n):
        a, dx, dy = t.shape
        t = t.reshape(a, 2, dx // 2, 2, dy // 2)
        t = np.einsum("mxy,axXyY->amXY", ops, t).reshape(a * 4, dx // 2, dy // 2)
        tables.append(np.einsum("axx->a", t).real.copy())
    return tables


def outcome_distribution(state: PureState | DensityMatrix) -> np.ndarray:
    """Full joint distribution over 4^N outcome strings (site 0 = MSB digit)."""
    return prefix_marginals(state)[-1]


# ---------------------------------------------------------------------------
# outcome index <-> symbol conversions
# ---------------------------------------------------------------------------

def outcomes_to_indices(outcomes: np.ndarray) -> np.ndarray:
    """Base-4 index of each outcome string (symbols 1..4, site 0 = MSB)."""
    out = np.asarray(outcomes, dtype=np.int64) - 1
    n = out.shape[-1]
    pow4 = 4 ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return out @ pow4


def indices_to_outcomes(indices: np.ndarray, n_sites: int) -> np.ndarray:
    """Inverse of :func:`outcomes_to_indices`."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.empty(idx.shape + (n_sites,), dtype=np.uint8)
    for site in range(n_sites - 1, -1, -1):
        out[..., site] = idx % 4 + 1
        idx = idx // 4
    return out


# ---------------------------------------------------------------------------
# one-hot encoding
# ---------------------------------------------------------------------------

def encode_one_hot(outcomes: np.ndarray) -> np.ndarray:
    """Map symbols 1..4 to unit vectors along a trailing length-4 axis."""
    arr = np.asarray(outcomes)
    if arr.size and (arr.min() < 1 or arr.max() > N_OUTCOMES):
        raise ValueError("outcome symbols must lie in 1..4")
    return np.eye(N_OUTCOMES, dtype=np.uint8)[arr.astype(np.int64) - 1]


def decode_one_hot(one_hot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_one_hot`; rejects rows that are not one-hot."""
    arr = np.asarray(one_hot)
    if arr.shape[-1] != N_OUTCOMES:
        raise ValueError(f"trailing axis must have length 4, got {arr.shape}")
    if not np.isin(arr, (0, 1)).all() or not (arr.sum(axis=-1) == 1).all():
        raise ValueError("malformed one-hot rows")
    return (arr.argmax(axis=-1) + 1).astype(np.uint8)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def ancestral_from_marginals(tables: list[np.ndarray], n_samples: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Vectorized ancestral draws given precomputed prefix marginals.

    Each sample extends its prefix site by site with the exact conditional
    P(a_k | a_1..a_{k-1}) = t_{k+1}[prefix, a_k] / t_k[prefix], so the joint
    law of the returned strings is exactly the measurement distribution.
    """
    n = len(tables) - 1
    u = rng.random((n_samples, n))
    prefix = np.zeros(n_samples, dtype=np.int64)
    symbols = np.empty((n_samples, n), dtype=np.uint8)
    for site in range(n):
        cond = np.clip(tables[site + 1].reshape(-1, 4)[prefix], 0.0, None)
        cum = np.cumsum(cond, axis=1)
        total = cum[:, -1:].copy()
        total[total == 0.0] = 1.0  # unreachable prefixes; keep arithmetic finite
        r = u[:, site, None] * total
        choice = (r >= cum[:, :3]).sum(axis=1)
        symbols[:, site] = choice + 1
        prefix = prefix * 4 + choice
    return symbols


def exact_sampler(state: PureState | DensityMatrix, n_samples: int,
                  seed: int) -> PovmBatch:
    """Ancestral sampler: draw each site from its exact conditional in turn."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    tables = prefix_marginals(state)
    return PovmBatch(ancestral_from_marginals(tables, n_samples, stream(seed)))


def metropolis_from_table(table: np.ndarray, n_sites: int, n_samples: int,
                          burn_in: int, thinning: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Metropolis chain over outcome strings, given the joint distribution.

    One sweep proposes a uniform symbol resample at every site in order;
    acceptance is min(1, P(a')/P(a)).  The chain starts from a uniformly
    drawn string (re-drawn while its probability is zero), discards
    `burn_in` sweeps, then keeps one sample every `thinning` sweeps.
    """
    table = np.clip(table, 0.0, None)
    idx = -1
    p_cur = 0.0
    for _ in range(1000):
        cand = int(rng.integers(table.size))
        if table[cand] > 0.0:
            idx, p_cur = cand, float(table[cand])
            break
    if idx < 0:
        raise SamplingError("no positive-probability outcome found in 1000 draws")

    pow4 = [4 ** (n_sites - 1 - s) for s in range(n_sites)]
    cur = [int(d) for d in indices_to_outcomes(np.array([idx]), n_sites)[0] - 1]
    total_sweeps = burn_in + n_samples * thinning
    proposals = rng.integers(0, 4, size=(total_sweeps, n_sites)).tolist()
    uniforms = rng.random((total_sweeps, n_sites)).tolist()

    kept = np.empty((n_samples, n_sites), dtype=np.uint8)
    n_kept = 0
    for sweep in range(total_sweeps):
        prop, u = proposals[sweep], uniforms[sweep]
        for s in range(n_sites):
            c = prop[s]
            if c == cur[s]:
                continue
            idx2 = idx + (c - cur[s]) * pow4[s]
            p_new = float(table[idx2])
            if p_new >= p_cur or u[s] * p_cur < p_new:
                cur[s] = c
                idx = idx2
                p_cur = p_new
        if sweep >= burn_in and (sweep - burn_in + 1) % thinning == 0:
            kept[n_kept] = cur
            n_kept += 1
    kept += 1
    return kept


def mcmc_sampler(state: PureState | DensityMatrix, n_samples: int,
                 cfg: McmcConfig) -> PovmBatch:
    """Metropolis sampler over outcome strings; see :func:`metropolis_from_table`."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    table = outcome_distribution(state)
    symbols = metropolis_from_table(table, state.n_sites, n_samples,
                                    cfg.burn_in, cfg.thinning, stream(cfg.seed))
    return PovmBatch(symbols)

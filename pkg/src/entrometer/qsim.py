"""Dense exact simulation of the transverse-field Ising chain.

States live in the full 2^N Hilbert space with site 0 mapped to the most
significant bit of the basis index.  Unitary dynamics use a cached
eigendecomposition of the Hamiltonian; open-system dynamics integrate the
master equation with fixed-step RK4 on the bare density matrix.  All
entropies are returned in nats.

Everything here is a pure function of its inputs; cached decompositions are
immutable once built, so concurrent use across parameter points is safe.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import CapacityError, InvalidStateError, NumericalError

MAX_SITES = 12  # dense 2^N x 2^N matrices beyond this do not fit in memory

_HERMITICITY_TOL = 1e-10
_TRACE_TOL = 1e-10
_EIGENVALUE_FLOOR = -1e-8
_LOG_CLAMP = 1e-14


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    """Chain geometry and couplings for H = -J sum(sz sz) + h sum(sx), periodic."""

    n_sites: int
    coupling: float = 1.0
    field: float = 1.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError(f"need at least 2 sites, got {self.n_sites}")
        if self.n_sites > MAX_SITES:
            raise CapacityError(
                f"n_sites={self.n_sites} exceeds dense-simulation cap {MAX_SITES}"
            )
        if self.coupling < 0:
            raise ValueError(f"coupling must be >= 0, got {self.coupling}")

    @property
    def dim(self) -> int:
        return 1 << self.n_sites


@dataclass(frozen=True)
class NoiseRates:
    """Single-qubit noise strengths, in units of the transverse field."""

    dephasing: float = 0.0
    decay: float = 0.0

    def __post_init__(self):
        if self.dephasing < 0 or self.decay < 0:
            raise ValueError(f"noise rates must be non-negative, got {self}")


@dataclass(frozen=True)
class Bipartition:
    """A proper subsystem of the chain; the complement is implied."""

    subsystem_a: tuple[int, ...]

    def __post_init__(self):
        sites = tuple(sorted(set(self.subsystem_a)))
        object.__setattr__(self, "subsystem_a", sites)
        if not sites:
            raise ValueError("subsystem A must be non-empty")

    @classmethod
    def half_chain(cls, n_sites: int) -> "Bipartition":
        """Contiguous block of the first ceil(N/2) sites."""
        return cls(tuple(range((n_sites + 1) // 2)))

    def validate_for(self, n_sites: int) -> None:
        if any(s < 0 or s >= n_sites for s in self.subsystem_a):
            raise ValueError(f"sites {self.subsystem_a} invalid for N={n_sites}")
        if len(self.subsystem_a) >= n_sites:
            raise ValueError("subsystem A must be a proper subset of the chain")

    def complement(self, n_sites: int) -> "Bipartition":
        rest = tuple(s for s in range(n_sites) if s not in self.subsystem_a)
        return Bipartition(rest)


@dataclass(frozen=True)
class PureState:
    """Normalized state vector over 2^N basis states (site 0 = MSB)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        object.__setattr__(self, "amplitudes", amp)
        n = int(np.log2(amp.size))
        if amp.ndim != 1 or (1 << n) != amp.size:
            raise ValueError(f"amplitude vector length {amp.size} is not a power of 2")
        norm = float(np.linalg.norm(amp))
        if abs(norm - 1.0) > 1e-10:
            raise InvalidStateError(f"state norm {norm} deviates from 1 beyond 1e-10")

    @property
    def n_sites(self) -> int:
        return int(np.log2(self.amplitudes.size))


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, (numerically) positive operator on k sites."""

    matrix: np.ndarray
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.complex128)
        object.__setattr__(self, "matrix", mat)
        n = int(np.log2(mat.shape[0]))
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or (1 << n) != mat.shape[0]:
            raise ValueError(f"density matrix shape {mat.shape} is not 2^k x 2^k")
        if self.validate:
            herm = float(np.abs(mat - mat.conj().T).max())
            if herm > _HERMITICITY_TOL:
                raise InvalidStateError(f"Hermiticity deviation {herm:.2e} > 1e-10")
            tr = complex(np.trace(mat))
            if abs(tr - 1.0) > _TRACE_TOL:
                raise InvalidStateError(f"trace {tr} deviates from 1 beyond 1e-10")
            lo = float(np.linalg.eigvalsh(mat).min())
            if lo < _EIGENVALUE_FLOOR:
                raise InvalidStateError(f"minimum eigenvalue {lo:.2e} < -1e-8")

    @property
    def n_sites(self) -> int:
        return int(np.log2(self.matrix.shape[0]))

    @classmethod
    def from_pure(cls, psi: PureState) -> "DensityMatrix":
        amp = psi.amplitudes
        return cls(np.outer(amp, amp.conj()), validate=False)


# ---------------------------------------------------------------------------
# operators and single-site helpers
# ---------------------------------------------------------------------------

def site_mask(n_sites: int, site: int) -> int:
    """Bit mask of `site` in the basis index (site 0 = MSB)."""
    return 1 << (n_sites - 1 - site)


@lru_cache(maxsize=None)
def _z_values(n_sites: int) -> np.ndarray:
    """(N, 2^N) array of sigma_z eigenvalues per site and basis state."""
    x = np.arange(1 << n_sites)
    return np.stack(
        [1.0 - 2.0 * ((x >> (n_sites - 1 - i)) & 1) for i in range(n_sites)]
    )


def apply_site_operator(vec: np.ndarray, op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Apply a single-qubit operator at `site` to a state vector."""
    left = 1 << site
    right = 1 << (n_sites - 1 - site)
    v = vec.reshape(left, 2, right)
    return np.einsum("ab,lbr->lar", op, v).reshape(vec.shape)


def apply_site_operator_left(mat: np.ndarray, op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Left-multiply a density matrix by a single-qubit operator at `site`."""
    dim = mat.shape[0]
    left = 1 << site
    right = 1 << (n_sites - 1 - site)
    m = mat.reshape(left, 2, right, dim)
    return np.einsum("ab,lbrc->larc", op, m).reshape(dim, dim)


# ---------------------------------------------------------------------------
# Hamiltonian and initial state
# ---------------------------------------------------------------------------

def build_tfim_hamiltonian(cfg: SystemConfig) -> np.ndarray:
    """Dense Hamiltonian -J sum_i sz_i sz_{i+1} + h sum_i sx_i, periodic ring.

    The bond sum runs over all N sites with index N wrapping to 0, so at N=2
    the single physical bond is counted twice.
    """
    n, dim = cfg.n_sites, cfg.dim
    z = _z_values(n)
    zz = sum(z[i] * z[(i + 1) % n] for i in range(n))
    h = np.zeros((dim, dim))
    x = np.arange(dim)
    h[x, x] = -cfg.coupling * zz
    for i in range(n):
        h[x, x ^ site_mask(n, i)] += cfg.field
    return h


def initial_plus_state(cfg: SystemConfig) -> PureState:
    """Uniform superposition |+>^N, the paramagnetic product state."""
    amp = np.full(cfg.dim, 2.0 ** (-cfg.n_sites / 2), dtype=np.complex128)
    return PureState(amp)


# ---------------------------------------------------------------------------
# unitary evolution
# ---------------------------------------------------------------------------

class _EigCache:
    """LRU cache of Hamiltonian eigendecompositions, keyed by matrix bytes.

    Entries are immutable once stored; the lock only guards the bookkeeping,
    so concurrent evolution over many parameter points is safe.
    """

    def __init__(self, capacity: int = 8):
        self._store: OrderedDict[str, tuple[np.ndarray, np.ndarray]] = OrderedDict()
        self._capacity = capacity
        self._lock = threading.Lock()

    def get(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        arr = np.ascontiguousarray(h)
        key = hashlib.sha1(arr.tobytes()).hexdigest() + f":{arr.shape}:{arr.dtype}"
        with self._lock:
            if key in self._store:
                self._store.move_to_end(key)
                return self._store[key]
        w, v = np.linalg.eigh(arr)
        with self._lock:
            self._store[key] = (w, v)
            if len(self._store) > self._capacity:
                self._store.popitem(last=False)
        return w, v


_eig_cache = _EigCache()


def evolve_unitary(psi0: PureState, h: np.ndarray, t: float) -> PureState:
    """Propagate |psi0> to exp(-iHt)|psi0> via the cached eigendecomposition."""
    amp = psi0.amplitudes
    if h.shape != (amp.size, amp.size):
        raise ValueError(f"Hamiltonian shape {h.shape} does not match state dim {amp.size}")
    w, v = _eig_cache.get(h)
    phases = np.exp(-1j * w * t)
    out = v @ (phases * (v.conj().T @ amp))
    return PureState(out)


# ---------------------------------------------------------------------------
# dissipative evolution
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _dephasing_kernel(n_sites: int) -> np.ndarray:
    """K[x,y] = sum_i z_i(x) z_i(y); dephasing acts as gz * (K*rho - N*rho)."""
    z = _z_values(n_sites)
    return z.T @ z


@lru_cache(maxsize=None)
def _excitation_weight(n_sites: int) -> np.ndarray:
    """Number of excited (|1>) sites per basis state."""
    x = np.arange(1 << n_sites)
    return np.array([bin(i).count("1") for i in x], dtype=float)


def _decay_gain(rho: np.ndarray, n_sites: int) -> np.ndarray:
    """sum_i sminus_i rho splus_i, with sminus = |0><1| (|1> decays to |0>)."""
    dim = rho.shape[0]
    out = np.zeros_like(rho)
    for i in range(n_sites):
        left = 1 << i
        right = 1 << (n_sites - 1 - i)
        r = rho.reshape(left, 2, right, left, 2, right)
        o = out.reshape(left, 2, right, left, 2, right)
        o[:, 0, :, :, 0, :] += r[:, 1, :, :, 1, :]
    return out


def _lindblad_rhs_raw(rho: np.ndarray, h: np.ndarray, gz: float, gm: float,
                      n_sites: int) -> np.ndarray:
    comm = h @ rho - rho @ h
    drho = -1j * comm
    if gz != 0.0:
        k = _dephasing_kernel(n_sites)
        drho += gz * (k * rho - n_sites * rho)
    if gm != 0.0:
        wt = _excitation_weight(n_sites)
        drho += gm * (_decay_gain(rho, n_sites) - 0.5 * (wt[:, None] + wt[None, :]) * rho)
    return drho


def lindblad_rhs(rho: DensityMatrix | np.ndarray, h: np.ndarray,
                 rates: NoiseRates) -> np.ndarray:
    """Right-hand side of the master equation with dephasing and decay channels.

    Decay uses the convention that the computational |1> state is the excited
    one, i.e. the jump operator is |0><1| on every site.
    """
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=np.complex128)
    if h.shape != mat.shape:
        raise ValueError(f"H shape {h.shape} does not match rho shape {mat.shape}")
    n = int(np.log2(mat.shape[0]))
    return _lindblad_rhs_raw(mat, h, rates.dephasing, rates.decay, n)


_MAX_RK4_STEPS = 10_000_000


def evolve_lindblad(rho0: DensityMatrix, h: np.ndarray, rates: NoiseRates,
                    t: float, dt: float = 1e-3) -> DensityMatrix:
    """Fixed-step RK4 integration of the master equation up to time t.

    The state is re-Hermitized after every step; positivity is monitored by
    the returned DensityMatrix's validation, not enforced during integration.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    n_full, rem = divmod(t, dt)
    if n_full > _MAX_RK4_STEPS:
        raise NumericalError(f"{int(n_full)} RK4 steps exceed cap {_MAX_RK4_STEPS}")
    n = rho0.n_sites
    gz, gm = rates.dephasing, rates.decay
    rho = rho0.matrix.copy()

    def step(r, step_dt):
        k1 = _lindblad_rhs_raw(r, h, gz, gm, n)
        k2 = _lindblad_rhs_raw(r + 0.5 * step_dt * k1, h, gz, gm, n)
        k3 = _lindblad_rhs_raw(r + 0.5 * step_dt * k2, h, gz, gm, n)
        k4 = _lindblad_rhs_raw(r + step_dt * k3, h, gz, gm, n)
        r = r + (step_dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return 0.5 * (r + r.conj().T)

    for _ in range(int(n_full)):
        rho = step(rho, dt)
    if rem > 1e-15:
        rho = step(rho, rem)

    drift = abs(float(np.trace(rho).real) - 1.0)
    if drift > 1e-6:
        raise NumericalError(f"trace drifted by {drift:.2e} > 1e-6 during integration")
    return DensityMatrix(rho)


# ---------------------------------------------------------------------------
# reductions and entropies
# ---------------------------------------------------------------------------

def partial_trace(state: DensityMatrix | PureState, part: Bipartition) -> DensityMatrix:
    """Reduced density matrix of subsystem A (trace over the complement)."""
    n = state.n_sites
    part.validate_for(n)
    a = list(part.subsystem_a)
    b = [s for s in range(n) if s not in part.subsystem_a]
    da, db = 1 << len(a), 1 << len(b)
    if isinstance(state, PureState):
        psi = state.amplitudes.reshape([2] * n).transpose(a + b).reshape(da, db)
        red = psi @ psi.conj().T
    else:
        perm = a + b
        r = state.matrix.reshape([2] * (2 * n))
        r = r.transpose(perm + [n + p for p in perm]).reshape(da, db, da, db)
        red = np.einsum("ibjb->ij", r)
    return DensityMatrix(red, validate=False)


def renyi2_entropy(rho_a: DensityMatrix) -> float:
    """Second-order Renyi entropy -ln Tr(rho_A^2), in nats."""
    purity = float(np.sum(np.abs(rho_a.matrix) ** 2))
    if not 0.0 < purity <= 1.0 + 1e-9:
        raise NumericalError(f"purity {purity} outside (0, 1]")
    return float(-np.log(purity))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """-Tr(rho ln rho) in nats, with 0 ln 0 = 0."""
    lam = np.linalg.eigvalsh(rho.matrix)
    if float(lam.min()) < _EIGENVALUE_FLOOR:
        raise InvalidStateError(f"eigenvalue {lam.min():.2e} below -1e-8")
    lam = np.clip(lam, 0.0, 1.0)
    safe = np.clip(lam, _LOG_CLAMP, 1.0)
    return float(-np.sum(np.where(lam > _LOG_CLAMP, lam * np.log(safe), 0.0)))


def mutual_information(state: DensityMatrix | PureState, part: Bipartition) -> float:
    """S(rho_A) + S(rho_B) - S(rho) with von Neumann entropies, in nats."""
    n = state.n_sites
    s_a = von_neumann_entropy(partial_trace(state, part))
    s_b = von_neumann_entropy(partial_trace(state, part.complement(n)))
    if isinstance(state, PureState):
        s_full = 0.0
    else:
        s_full = von_neumann_entropy(state)
    return s_a + s_b - s_full

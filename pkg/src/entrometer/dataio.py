"""Dataset generation, persistence and split construction.

A dataset directory holds three files:

* ``manifest.txt``   UTF-8 ``key = value`` pairs: format version, system
  parameters, generation seeds, per-record parameters/labels/byte offsets
  and CRC32 checksums of both payloads.
* ``labels.f64``     little-endian float64, one value per (record, label kind).
* ``samples.u8``     one byte per site per sample (symbols 1..4), records
  concatenated in manifest order, each record laid out C-contiguously as
  (batch, sample, site).

Generation is deterministic given (config, seed): every (record, batch)
pair draws from its own Philox stream, so worker parallelism cannot change
the output bytes.  One-hot expansion is left to consumers.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qsim, streams
from .errors import DataFormatError
from .povm import ancestral_from_marginals, metropolis_from_table, prefix_marginals

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
LABELS_NAME = "labels.f64"
SAMPLES_NAME = "samples.u8"

WORKERS_ENV = "ENTROMETER_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# configs and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitaryDatasetConfig:
    """Quench states at equidistant times, labeled with half-chain entropy."""

    system: qsim.SystemConfig
    n_states: int
    time_interval: tuple[float, float] = (0.0, 5.0)
    n_batches: int = 50
    n_samples: int = 1000
    seed: int = 0
    label_kinds: tuple[str, ...] = ("hce",)

    def __post_init__(self):
        lo, hi = self.time_interval
        if not lo < hi:
            raise ValueError(f"need t_min < t_max, got {self.time_interval}")
        if min(self.n_states, self.n_batches, self.n_samples) < 1:
            raise ValueError("counts must be positive")
        _check_label_kinds(self.label_kinds)


@dataclass(frozen=True)
class DissipativeDatasetConfig:
    """Noisy evolution to a fixed time over a set of (dephasing, decay) points."""

    system: qsim.SystemConfig
    points: tuple[tuple[float, float], ...]
    fixed_time: float = 0.75
    n_batches: int = 50
    n_samples: int = 1000
    seed: int = 0
    label_kinds: tuple[str, ...] = ("mi",)
    rk4_dt: float = 1e-3
    max_rate: float = 0.5
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.points:
            raise ValueError("noise grid must be non-empty")
        for gz, gm in self.points:
            if gz < 0 or gm < 0 or gz > self.max_rate or gm > self.max_rate:
                raise ValueError(
                    f"rates ({gz}, {gm}) outside [0, {self.max_rate}]^2")
        if self.tags and len(self.tags) != len(self.points):
            raise ValueError("tags must match points one-to-one")
        if min(self.n_batches, self.n_samples) < 1:
            raise ValueError("counts must be positive")
        _check_label_kinds(self.label_kinds)


def _check_label_kinds(kinds: tuple[str, ...]) -> None:
    if not kinds or any(k not in ("hce", "mi") for k in kinds):
        raise ValueError(f"label kinds must be drawn from ('hce', 'mi'), got {kinds}")


@dataclass
class LabeledRecord:
    """One parameter point: physical params, scalar labels, N_B sample batches."""

    params: dict[str, float]
    labels: dict[str, float]
    batches: np.ndarray  # (n_batches, n_samples, n_sites) uint8, symbols 1..4
    tag: str = ""


@dataclass
class DatasetManifest:
    version: int
    kind: str
    system: qsim.SystemConfig
    sampler: str
    seed: int
    n_records: int
    n_batches: int
    n_samples: int
    label_kinds: tuple[str, ...]
    extras: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# label computation
# ---------------------------------------------------------------------------

def compute_labels(state: qsim.PureState | qsim.DensityMatrix,
                   kinds: tuple[str, ...]) -> dict[str, float]:
    part = qsim.Bipartition.half_chain(state.n_sites)
    out = {}
    for kind in kinds:
        if kind == "hce":
            out["hce"] = qsim.renyi2_entropy(qsim.partial_trace(state, part))
        else:
            out["mi"] = qsim.mutual_information(state, part)
    return out


def _sample_batches(state, n_batches: int, n_samples: int, sampler: str,
                    seed: int, record_index: int) -> np.ndarray:
    """All batches for one record; one Philox stream per (record, batch)."""
    n = state.n_sites
    tables = prefix_marginals(state)
    out = np.empty((n_batches, n_samples, n), dtype=np.uint8)
    for b in range(n_batches):
        rng = streams.stream(seed, streams.SAMPLING, record_index, b)
        if sampler == "exact":
            out[b] = ancestral_from_marginals(tables, n_samples, rng)
        elif sampler == "mcmc":
            out[b] = metropolis_from_table(tables[-1], n, n_samples,
                                           burn_in=100, thinning=n, rng=rng)
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
    return out


def _unitary_record(cfg: UnitaryDatasetConfig, index: int, t: float,
                    sampler: str) -> LabeledRecord:
    h = qsim.build_tfim_hamiltonian(cfg.system)
    psi = qsim.evolve_unitary(qsim.initial_plus_state(cfg.system), h, t)
    labels = compute_labels(psi, cfg.label_kinds)
    batches = _sample_batches(psi, cfg.n_batches, cfg.n_samples, sampler,
                              cfg.seed, index)
    return LabeledRecord({"t": float(t)}, labels, batches)


def _dissipative_record(cfg: DissipativeDatasetConfig, index: int,
                        point: tuple[float, float], sampler: str,
                        tag: str) -> LabeledRecord:
    h = qsim.build_tfim_hamiltonian(cfg.system)
    rho0 = qsim.DensityMatrix.from_pure(qsim.initial_plus_state(cfg.system))
    rates = qsim.NoiseRates(dephasing=point[0], decay=point[1])
    rho = qsim.evolve_lindblad(rho0, h, rates, cfg.fixed_time, cfg.rk4_dt)
    labels = compute_labels(rho, cfg.label_kinds)
    batches = _sample_batches(rho, cfg.n_batches, cfg.n_samples, sampler,
                              cfg.seed, index)
    return LabeledRecord({"gamma_z": float(point[0]), "gamma_minus": float(point[1])},
                         labels, batches, tag=tag)


def _run_jobs(worker, jobs):
    n_workers = worker_count()
    if n_workers == 1 or len(jobs) <= 1:
        return [worker(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(worker, *job) for job in jobs]
        return [f.result() for f in futures]


def generate_unitary_records(cfg: UnitaryDatasetConfig,
                             sampler: str = "mcmc") -> list[LabeledRecord]:
    lo, hi = cfg.time_interval
    times = np.linspace(lo, hi, cfg.n_states)
    jobs = [(cfg, i, float(t), sampler) for i, t in enumerate(times)]
    return _run_jobs(_unitary_record, jobs)


def generate_dissipative_records(cfg: DissipativeDatasetConfig,
                                 sampler: str = "mcmc") -> list[LabeledRecord]:
    tags = cfg.tags or ("",) * len(cfg.points)
    jobs = [(cfg, i, p, sampler, tags[i]) for i, p in enumerate(cfg.points)]
    return _run_jobs(_dissipative_record, jobs)


def generate_unitary_dataset(cfg: UnitaryDatasetConfig, sampler: str,
                             path: str | Path) -> Path:
    records = generate_unitary_records(cfg, sampler)
    extras = {"t_min": repr(cfg.time_interval[0]), "t_max": repr(cfg.time_interval[1])}
    if sampler == "mcmc":
        extras |= {"mcmc_burn_in": "100", "mcmc_thinning": str(cfg.system.n_sites)}
    manifest = DatasetManifest(FORMAT_VERSION, "unitary", cfg.system, sampler,
                               cfg.seed, cfg.n_states, cfg.n_batches,
                               cfg.n_samples, cfg.label_kinds, extras)
    return write_dataset(path, manifest, records)


def generate_dissipative_dataset(cfg: DissipativeDatasetConfig, sampler: str,
                                 path: str | Path) -> Path:
    records = generate_dissipative_records(cfg, sampler)
    extras = {"fixed_time": repr(cfg.fixed_time), "rk4_dt": repr(cfg.rk4_dt)}
    if sampler == "mcmc":
        extras |= {"mcmc_burn_in": "100", "mcmc_thinning": str(cfg.system.n_sites)}
    manifest = DatasetManifest(FORMAT_VERSION, "dissipative", cfg.system, sampler,
                               cfg.seed, len(cfg.points), cfg.n_batches,
                               cfg.n_samples, cfg.label_kinds, extras)
    return write_dataset(path, manifest, records)


def generate_point_dataset(system: qsim.SystemConfig, *, t: float,
                           rates: qsim.NoiseRates | None = None,
                           n_batches: int, n_samples: int, sampler: str,
                           seed: int, path: str | Path,
                           rk4_dt: float = 1e-3) -> Path:
    """One-record dataset for a single parameter point (unitary or noisy)."""
    if rates is None:
        cfg = UnitaryDatasetConfig(system, 1, (t, t + 1.0), n_batches, n_samples,
                                   seed=seed, label_kinds=("hce", "mi"))
        record = _unitary_record(cfg, 0, t, sampler)
        manifest = DatasetManifest(FORMAT_VERSION, "unitary", system, sampler,
                                   seed, 1, n_batches, n_samples, ("hce", "mi"),
                                   {"t_min": repr(t), "t_max": repr(t)})
    else:
        cfg = DissipativeDatasetConfig(system, ((rates.dephasing, rates.decay),),
                                       fixed_time=t, n_batches=n_batches,
                                       n_samples=n_samples, seed=seed,
                                       label_kinds=("hce", "mi"), rk4_dt=rk4_dt,
                                       max_rate=max(0.5, rates.dephasing, rates.decay))
        record = _dissipative_record(cfg, 0, (rates.dephasing, rates.decay),
                                     sampler, "")
        manifest = DatasetManifest(FORMAT_VERSION, "dissipative", system, sampler,
                                   seed, 1, n_batches, n_samples, ("hce", "mi"),
                                   {"fixed_time": repr(t), "rk4_dt": repr(rk4_dt)})
    return write_dataset(path, manifest, [record])


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def noise_grid(n_per_axis: int, lo: float = 0.0, hi: float = 0.5
               ) -> tuple[tuple[float, float], ...]:
    """Equidistant n x n grid over [lo, hi]^2, row-major."""
    axis = np.linspace(lo, hi, n_per_axis)
    return tuple((float(a), float(b)) for a in axis for b in axis)


def make_validation_splits(kind: str, count: int,
                           region: tuple[float, float] = (0.0, 0.5),
                           seed: int = 0) -> np.ndarray:
    """Noise-plane evaluation points: i.i.d. uniform or an equidistant segment.

    ``cross_section`` draws two endpoints uniformly on the boundary of the
    square region (re-drawing segments shorter than 1e-6) and returns `count`
    points spaced equally along the segment, endpoints included.
    """
    lo, hi = region
    rng = streams.stream(seed, streams.SPLITS)
    if kind == "random":
        return rng.uniform(lo, hi, size=(count, 2))
    if kind != "cross_section":
        raise ValueError(f"unknown split kind {kind!r}")

    def boundary_point():
        side = int(rng.integers(4))
        pos = float(rng.uniform(lo, hi))
        return {0: (pos, lo), 1: (pos, hi), 2: (lo, pos), 3: (hi, pos)}[side]

    for _ in range(1000):
        p0 = np.array(boundary_point())
        p1 = np.array(boundary_point())
        if np.linalg.norm(p1 - p0) >= 1e-6:
            frac = np.linspace(0.0, 1.0, count)[:, None]
            return p0[None, :] + frac * (p1 - p0)[None, :]
    raise RuntimeError("could not draw a non-degenerate cross section")


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def _format_mapping(d: dict[str, float]) -> str:
    return ";".join(f"{k}={repr(float(v))}" for k, v in d.items())

def _parse_mapping(s: str) -> dict[str, float]:
    if not s:
        return {}
    return {k: float(v) for k, v in (item.split("=", 1) for item in s.split(";"))}


def write_dataset(path: str | Path, manifest: DatasetManifest,
                  records: list[LabeledRecord]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n = manifest.system.n_sites
    rec_bytes = manifest.n_batches * manifest.n_samples * n

    sample_blobs = []
    label_values = []
    for rec in records:
        if rec.batches.shape != (manifest.n_batches, manifest.n_samples, n):
            raise ValueError(f"record batch shape {rec.batches.shape} inconsistent")
        sample_blobs.append(np.ascontiguousarray(rec.batches, dtype=np.uint8).tobytes())
        label_values.extend(rec.labels[k] for k in manifest.label_kinds)
    samples_payload = b"".join(sample_blobs)
    labels_payload = np.array(label_values, dtype="<f8").tobytes()

    lines = [
        f"format_version = {manifest.version}",
        f"kind = {manifest.kind}",
        f"n_sites = {n}",
        f"coupling = {repr(manifest.system.coupling)}",
        f"field = {repr(manifest.system.field)}",
        "boundary = periodic",
        f"sampler = {manifest.sampler}",
        f"seed = {manifest.seed}",
        f"label_kinds = {','.join(manifest.label_kinds)}",
        f"n_records = {manifest.n_records}",
        f"n_batches = {manifest.n_batches}",
        f"n_samples = {manifest.n_samples}",
        f"labels_file = {LABELS_NAME}",
        f"samples_file = {SAMPLES_NAME}",
        f"labels_crc32 = {zlib.crc32(labels_payload):08x}",
        f"samples_crc32 = {zlib.crc32(samples_payload):08x}",
    ]
    for key in sorted(manifest.extras):
        lines.append(f"{key} = {manifest.extras[key]}")
    for i, rec in enumerate(records):
        lines.append(f"record_{i}_params = {_format_mapping(rec.params)}")
        lines.append(f"record_{i}_labels = {_format_mapping(rec.labels)}")
        lines.append(f"record_{i}_offset = {i * rec_bytes}")
        if rec.tag:
            lines.append(f"record_{i}_tag = {rec.tag}")

    (path / SAMPLES_NAME).write_bytes(samples_payload)
    (path / LABELS_NAME).write_bytes(labels_payload)
    (path / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _parse_manifest(text: str) -> dict[str, str]:
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"malformed manifest line: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def read_dataset(path: str | Path) -> tuple[DatasetManifest, list[LabeledRecord]]:
    """Load a dataset directory, verifying version, offsets and checksums."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataFormatError(f"no {MANIFEST_NAME} under {path}")
    entries = _parse_manifest(manifest_path.read_text(encoding="utf-8"))

    try:
        version = int(entries["format_version"])
        if version != FORMAT_VERSION:
            raise DataFormatError(f"unsupported format version {version}")
        kind = entries["kind"]
        system = qsim.SystemConfig(int(entries["n_sites"]),
                                   float(entries["coupling"]),
                                   float(entries["field"]))
        label_kinds = tuple(entries["label_kinds"].split(","))
        n_records = int(entries["n_records"])
        n_batches = int(entries["n_batches"])
        n_samples = int(entries["n_samples"])
        sampler = entries["sampler"]
        seed = int(entries["seed"])
    except KeyError as exc:
        raise DataFormatError(f"manifest missing key {exc}") from exc

    core = {"format_version", "kind", "n_sites", "coupling", "field", "boundary",
            "sampler", "seed", "label_kinds", "n_records", "n_batches",
            "n_samples", "labels_file", "samples_file", "labels_crc32",
            "samples_crc32"}
    extras = {k: v for k, v in entries.items()
              if k not in core and not k.startswith("record_")}
    manifest = DatasetManifest(version, kind, system, sampler, seed, n_records,
                               n_batches, n_samples, label_kinds, extras)

    samples_payload = (path / entries.get("samples_file", SAMPLES_NAME)).read_bytes()
    labels_payload = (path / entries.get("labels_file", LABELS_NAME)).read_bytes()
    if f"{zlib.crc32(samples_payload):08x}" != entries["samples_crc32"]:
        raise DataFormatError("samples payload checksum mismatch")
    if f"{zlib.crc32(labels_payload):08x}" != entries["labels_crc32"]:
        raise DataFormatError("labels payload checksum mismatch")

    n = system.n_sites
    rec_bytes = n_batches * n_samples * n
    if len(samples_payload) != n_records * rec_bytes:
        raise DataFormatError(
            f"samples payload holds {len(samples_payload)} bytes, "
            f"expected {n_records * rec_bytes}")
    labels_flat = np.frombuffer(labels_payload, dtype="<f8")
    if labels_flat.size != n_records * len(label_kinds):
        raise DataFormatError("labels payload size inconsistent with manifest")

    records = []
    for i in range(n_records):
        try:
            params = _parse_mapping(entries[f"record_{i}_params"])
            labels = _parse_mapping(entries[f"record_{i}_labels"])
            offset = int(entries[f"record_{i}_offset"])
        except KeyError as exc:
            raise DataFormatError(f"manifest missing record entry {exc}") from exc
        if offset != i * rec_bytes:
            raise DataFormatError(f"record {i} offset {offset} inconsistent")
        stored = labels_flat[i * len(label_kinds):(i + 1) * len(label_kinds)]
        for k, v in zip(label_kinds, stored):
            if labels.get(k) != v:
                raise DataFormatError(f"record {i} label {k} disagrees with payload")
        batches = np.frombuffer(samples_payload, dtype=np.uint8,
                                count=rec_bytes, offset=offset)
        batches = batches.reshape(n_batches, n_samples, n).copy()
        records.append(LabeledRecord(params, labels, batches,
                                     tag=entries.get(f"record_{i}_tag", "")))
    return manifest, records

"""Command-line front end.

Subcommands: simulate, sample, make-dataset, train, evaluate, baseline,
metrics, report.  Every command echoes its resolved configuration to
``run_config.txt`` beside its outputs and is deterministic given its flags,
so re-running overwrites outputs byte-identically.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import dataio, metrics, plotting, presets, qsim, streams
from .errors import (CapacityError, DataFormatError, InvalidStateError,
                     NumericalError, SamplingError)
from .neural import (TrainingDiverged, examples_from_records,
                     load_checkpoint, predict_many, save_checkpoint, train,
                     write_history)

ENSEMBLE_MANIFEST = "ensemble.txt"
_EVAL_CHUNK = 256  # examples per forward chunk when evaluating datasets


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _echo_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    skip = {"func"}
    lines = [f"command = {command}"]
    for key in sorted(vars(args)):
        if key in skip:
            continue
        lines.append(f"{key} = {getattr(args, key)}")
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _system_from_args(args) -> qsim.SystemConfig:
    return qsim.SystemConfig(args.n_sites, args.coupling, args.field)


def _state_at(system: qsim.SystemConfig, t: float,
              rates: qsim.NoiseRates | None, dt: float):
    h = qsim.build_tfim_hamiltonian(system)
    psi0 = qsim.initial_plus_state(system)
    if rates is None or (rates.dephasing == 0.0 and rates.decay == 0.0):
        return qsim.evolve_unitary(psi0, h, t)
    return qsim.evolve_lindblad(qsim.DensityMatrix.from_pure(psi0), h, rates, t, dt)


def _format_id_region(kind: str, records) -> str:
    if kind == "unitary":
        ts = [r.params["t"] for r in records]
        return f"t:{repr(min(ts))}:{repr(max(ts))}"
    gz = [r.params["gamma_z"] for r in records]
    gm = [r.params["gamma_minus"] for r in records]
    return (f"gamma_z:{repr(min(gz))}:{repr(max(gz))};"
            f"gamma_minus:{repr(min(gm))}:{repr(max(gm))}")


def _point_region(params: dict[str, float], region: str) -> str:
    for part in region.split(";"):
        name, lo, hi = part.split(":")
        v = params[name]
        if v < float(lo) - 1e-12 or v > float(hi) + 1e-12:
            return "ood"
    return "id"


# ---------------------------------------------------------------------------
# simulate / sample
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = Path(args.out)
    system = _system_from_args(args)
    rates = None
    if args.gamma_z or args.gamma_minus:
        rates = qsim.NoiseRates(args.gamma_z, args.gamma_minus)
    if args.times is not None:
        lo, hi, count = args.times
        times = np.linspace(float(lo), float(hi), int(count))
    else:
        times = np.array([args.time])
    part_cols = ["t_over_h", "hce_nats", "mi_nats"]
    rows = []
    for t in times:
        state = _state_at(system, float(t), rates, args.dt)
        part = qsim.Bipartition.half_chain(system.n_sites)
        hce = qsim.renyi2_entropy(qsim.partial_trace(state, part))
        mi = qsim.mutual_information(state, part)
        rows.append([float(t), hce, mi])
    _echo_config(out, "simulate", args)
    metrics.write_points_csv(out / "state_metrics.csv", part_cols, rows)
    print(f"wrote {out / 'state_metrics.csv'} ({len(rows)} states)")
    return 0


def cmd_sample(args) -> int:
    out = Path(args.out)
    system = _system_from_args(args)
    rates = None
    if args.gamma_z or args.gamma_minus:
        rates = qsim.NoiseRates(args.gamma_z, args.gamma_minus)
    _echo_config(out, "sample", args)
    dataio.generate_point_dataset(system, t=args.time, rates=rates,
                                  n_batches=args.n_batches,
                                  n_samples=args.n_samples,
                                  sampler=args.sampler, seed=args.seed,
                                  path=out / "dataset", rk4_dt=args.dt)
    print(f"wrote {out / 'dataset'}")
    return 0


# ---------------------------------------------------------------------------
# make-dataset
# ---------------------------------------------------------------------------

def _override_unitary(cfg: dataio.UnitaryDatasetConfig, args):
    changes = {}
    if args.n_states:
        changes["n_states"] = args.n_states
    if args.n_batches:
        changes["n_batches"] = args.n_batches
    if args.n_samples:
        changes["n_samples"] = args.n_samples
    if args.n_sites:
        changes["system"] = dataclasses.replace(cfg.system, n_sites=args.n_sites)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _override_dissipative(cfg: dataio.DissipativeDatasetConfig, args):
    changes = {}
    if args.n_batches:
        changes["n_batches"] = args.n_batches
    if args.n_samples:
        changes["n_samples"] = args.n_samples
    if args.n_sites:
        changes["system"] = dataclasses.replace(cfg.system, n_sites=args.n_sites)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_make_dataset(args) -> int:
    out = Path(args.out)
    preset, sep, role = args.preset.partition("-")
    roles = {
        "fig1": ("train", "val"),
        "fig2": ("eval",),
        "fig3": ("train", "val", "test"),
    }.get(preset)
    if roles is None:
        raise ValueError(f"unknown preset {args.preset!r}")
    if sep and role not in roles:
        raise ValueError(f"preset {preset} has no role {role!r}")
    wanted = (role,) if sep else roles

    _echo_config(out, "make-dataset", args)
    if preset in ("fig1", "fig2"):
        exp = presets.unitary_experiment(args.scale, args.seed)
        configs = {"train": exp.train, "val": exp.val, "eval": exp.eval}
        for r in wanted:
            cfg = _override_unitary(configs[r], args)
            dataio.generate_unitary_dataset(cfg, args.sampler, out / r)
            print(f"wrote {out / r} ({cfg.n_states} records)")
    else:
        exp = presets.dissipative_experiment(args.scale, args.seed)
        configs = {"train": exp.train, "val": exp.val, "test": exp.test}
        for r in wanted:
            cfg = _override_dissipative(configs[r], args)
            dataio.generate_dissipative_dataset(cfg, args.sampler, out / r)
            print(f"wrote {out / r} ({len(cfg.points)} records)")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _write_ensemble_manifest(path: Path, *, label_kind: str, n_sites: int,
                             id_region: str, rows: list[dict]) -> None:
    lines = [
        "format_version = 1",
        f"label_kind = {label_kind}",
        f"n_sites = {n_sites}",
        f"id_region = {id_region}",
        f"n_members = {len(rows)}",
    ]
    for i, row in enumerate(rows):
        for key, value in row.items():
            lines.append(f"member_{i}_{key} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_ensemble_manifest(path: Path) -> dict[str, str]:
    if not path.exists():
        raise DataFormatError(f"no {path.name} under {path.parent}")
    entries = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip() and "=" in line:
            k, v = line.split("=", 1)
            entries[k.strip()] = v.strip()
    return entries


def cmd_train(args) -> int:
    out = Path(args.out)
    data = Path(args.data)
    train_manifest, train_records = dataio.read_dataset(data / "train")
    val_manifest, val_records = dataio.read_dataset(data / "val")
    if val_manifest.system.n_sites != train_manifest.system.n_sites:
        raise DataFormatError("train and val datasets disagree in n_sites")

    if args.preset in ("fig1", "fig2"):
        exp = presets.unitary_experiment(args.scale, args.seed,
                                         ensemble=8 if args.preset == "fig2" else 1)
        model_cfg, train_cfg, ensemble = exp.model, exp.training, exp.ensemble
    elif args.preset == "fig3":
        exp = presets.dissipative_experiment(args.scale, args.seed)
        model_cfg, train_cfg, ensemble = exp.model, exp.training, exp.ensemble
    else:
        raise ValueError(f"unknown preset {args.preset!r}")
    if args.ensemble:
        ensemble = args.ensemble
    if args.epochs:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    if args.minibatch:
        train_cfg = dataclasses.replace(train_cfg, minibatch_size=args.minibatch)

    label_kind = args.label_kind or train_manifest.label_kinds[0]
    train_set = examples_from_records(train_records, label_kind)
    val_set = examples_from_records(val_records, label_kind)
    _echo_config(out, "train", args)

    rows = []
    n_ok = 0
    for member in range(ensemble):
        member_dir = out / "members" / f"m{member:02d}"
        try:
            result = train(model_cfg, train_cfg, train_set, val_set, member)
        except TrainingDiverged as exc:
            member_dir.mkdir(parents=True, exist_ok=True)
            write_history(member_dir / "history.csv", exc.history)
            rows.append({"dir": member_dir.relative_to(out).as_posix(),
                         "status": "diverged", "val_loss": "nan",
                         "best_epoch": "-1"})
            print(f"member {member}: diverged ({exc})", file=sys.stderr)
            continue
        save_checkpoint(member_dir, result.params, model_cfg,
                        seed=train_cfg.seed, epoch=result.best_epoch,
                        val_loss=result.best_val_loss)
        write_history(member_dir / "history.csv", result.history)
        rows.append({"dir": member_dir.relative_to(out).as_posix(),
                     "status": "ok", "val_loss": repr(result.best_val_loss),
                     "best_epoch": str(result.best_epoch)})
        n_ok += 1
        print(f"member {member}: best val loss {result.best_val_loss:.4f} "
              f"at epoch {result.best_epoch}")

    _write_ensemble_manifest(out / ENSEMBLE_MANIFEST, label_kind=label_kind,
                             n_sites=train_manifest.system.n_sites,
                             id_region=_format_id_region(train_manifest.kind,
                                                         train_records),
                             rows=rows)
    if n_ok == 0:
        raise NumericalError("every ensemble member diverged")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _load_members(ckpt_dir: Path):
    entries = _read_ensemble_manifest(ckpt_dir / ENSEMBLE_MANIFEST)
    n_members = int(entries["n_members"])
    members = []
    for i in range(n_members):
        if entries.get(f"member_{i}_status") != "ok":
            continue
        params, cfg, _ = load_checkpoint(ckpt_dir / entries[f"member_{i}_dir"])
        members.append((params, cfg))
    if not members:
        raise DataFormatError(f"no usable members listed in {ckpt_dir}")
    return entries, members


def _ensemble_curves(members, outcomes: np.ndarray):
    """Per-example ensemble mean and total sigma over all member networks."""
    n_ex = outcomes.shape[0]
    means = np.empty((len(members), n_ex))
    sigmas = np.empty((len(members), n_ex))
    for m, (params, cfg) in enumerate(members):
        for start in range(0, n_ex, _EVAL_CHUNK):
            sl = slice(start, min(start + _EVAL_CHUNK, n_ex))
            mu, sg = predict_many(params, cfg, outcomes[sl])
            means[m, sl] = mu
            sigmas[m, sl] = sg
    ens_mean = means.mean(axis=0)
    total_var = np.mean(sigmas ** 2 + means ** 2, axis=0) - ens_mean ** 2
    return ens_mean, np.sqrt(np.maximum(total_var, 0.0))


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    entries, members = _load_members(Path(args.checkpoints))
    manifest, records = dataio.read_dataset(args.data)
    if manifest.system.n_sites != int(entries["n_sites"]):
        raise DataFormatError(
            f"dataset has N={manifest.system.n_sites} sites but the checkpoints "
            f"were trained at N={entries['n_sites']}")
    label_kind = args.label_kind or entries["label_kind"]
    if label_kind not in manifest.label_kinds:
        raise DataFormatError(f"dataset has no {label_kind!r} labels")
    region = entries["id_region"]
    param_names = ["t_over_h"] if manifest.kind == "unitary" else ["gamma_z",
                                                                   "gamma_minus"]

    outcomes = np.concatenate([r.batches for r in records], axis=0)
    ens_mean, ens_sigma = _ensemble_curves(members, outcomes)

    header = param_names + ["label_nats", "pred_mean_nats", "sigma_total_nats",
                            "region", "tag", "record_index", "batch_index"]
    rows = []
    labels_flat = []
    nb = manifest.n_batches
    for i, rec in enumerate(records):
        pvals = [rec.params[k] for k in ("t",)] if manifest.kind == "unitary" \
            else [rec.params["gamma_z"], rec.params["gamma_minus"]]
        reg = _point_region(rec.params, region)
        label = rec.labels[label_kind]
        if args.aggregate == "state":
            sl = slice(i * nb, (i + 1) * nb)
            mu = float(ens_mean[sl].mean())
            sg = float(np.sqrt(np.mean(ens_sigma[sl] ** 2) / nb))
            rows.append(pvals + [label, mu, sg, reg, rec.tag, i, nb])
            labels_flat.append(label)
        else:
            for b in range(nb):
                j = i * nb + b
                rows.append(pvals + [label, float(ens_mean[j]),
                                     float(ens_sigma[j]), reg, rec.tag, i, b])
                labels_flat.append(label)

    _echo_config(out, "evaluate", args)
    metrics.write_points_csv(out / "points.csv", header, rows)
    report = metrics.compute_metrics(
        labels_flat, [r[len(param_names) + 1] for r in rows],
        [r[len(param_names) + 2] for r in rows])
    metrics.write_metrics_csv(out / "metrics.csv", report)
    print(f"evaluated {report.n_points} points: RMSE {report.rmse:.4f} nats, "
          f"2-sigma coverage {report.coverage_2sigma:.2f}")
    return 0


# ---------------------------------------------------------------------------
# baseline
# ---------------------------------------------------------------------------

def cmd_baseline(args) -> int:
    out = Path(args.out)
    if args.data:
        manifest, records = dataio.read_dataset(args.data)
        if manifest.kind != "unitary":
            raise DataFormatError("baseline estimation expects a unitary dataset")
        system = manifest.system
        times = [r.params["t"] for r in records]
    elif args.times is not None:
        lo, hi, count = args.times
        system = _system_from_args(args)
        times = list(np.linspace(float(lo), float(hi), int(count)))
    else:
        raise ValueError("baseline needs --data or --times")

    cfg0 = presets.baseline_config(args.preset, system.n_sites, args.seed)
    n_u = args.n_unitaries or cfg0.n_unitaries
    n_m = args.n_meas or cfg0.n_measurements
    part = cfg0.subsystem
    n_a = len(part.subsystem_a)

    h = qsim.build_tfim_hamiltonian(system)
    psi0 = qsim.initial_plus_state(system)
    header = ["t_over_h", "label_hce_nats", "purity", "purity_stderr",
              "hce_estimate_nats", "hce_stderr_nats", "physical",
              "n_unitaries", "n_meas_per_unitary"]
    rows = []
    for i, t in enumerate(times):
        psi = qsim.evolve_unitary(psi0, h, t)
        truth = qsim.renyi2_entropy(qsim.partial_trace(psi, part))
        cfg = bl.BaselineConfig(n_u, n_m, part,
                                streams.child_seed(args.seed, streams.BASELINE, i))
        est = bl.baseline_estimate(psi, cfg)
        rows.append([float(t), truth, est.purity, est.purity_stderr,
                     est.hce.value, est.hce_stderr, str(est.hce.physical),
                     n_u, n_m])
    _echo_config(out, "baseline", args)
    name = f"baseline_{args.preset}.csv"
    metrics.write_points_csv(out / name, header, rows)
    n_phys = sum(r[6] == "True" for r in rows)
    print(f"wrote {out / name} ({n_phys}/{len(rows)} physical estimates, "
          f"{n_u * n_m} measurements per state)")
    return 0


# ---------------------------------------------------------------------------
# metrics / report
# ---------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    cols = metrics.read_csv_columns(args.points)
    if "label_nats" not in cols:
        raise DataFormatError(f"{args.points} is not a points CSV")
    report = metrics.compute_metrics(
        [float(v) for v in cols["label_nats"]],
        [float(v) for v in cols["pred_mean_nats"]],
        [float(v) for v in cols["sigma_total_nats"]],
        history_csv=args.history or "")
    metrics.write_metrics_csv(args.out, report)
    for key, value in report.rows():
        print(f"{key} = {value}")
    return 0


def cmd_report(args) -> int:
    written = plotting.render_report(args.run, args.out)
    if not written:
        raise DataFormatError(f"no renderable CSV outputs found under {args.run}")
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_system_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-sites", type=int, default=None, help="chain length N")
    p.add_argument("--coupling", type=float, default=1.0, help="Ising coupling J")
    p.add_argument("--field", type=float, default=1.0, help="transverse field h")


def build_parser() -> _Parser:
    parser = _Parser(prog="entrometer",
                     description="Entanglement-entropy estimation from "
                                 "generalized-measurement samples")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("simulate", help="evolve states and tabulate entropies")
    _add_system_flags(p)
    p.set_defaults(n_sites=6)
    p.add_argument("--time", type=float, default=0.0, help="evolution time (1/h)")
    p.add_argument("--times", nargs=3, metavar=("LO", "HI", "COUNT"),
                   default=None, help="time sweep")
    p.add_argument("--gamma-z", type=float, default=0.0, help="dephasing rate")
    p.add_argument("--gamma-minus", type=float, default=0.0, help="decay rate")
    p.add_argument("--dt", type=float, default=1e-3, help="RK4 step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="draw measurement samples from one state")
    _add_system_flags(p)
    p.set_defaults(n_sites=6)
    p.add_argument("--time", type=float, default=1.0)
    p.add_argument("--gamma-z", type=float, default=0.0)
    p.add_argument("--gamma-minus", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--n-batches", type=int, default=1)
    p.add_argument("--sampler", choices=("exact", "mcmc"), default="mcmc")
    p.add_argument("--seed", type=int, default=presets.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("make-dataset", help="generate a benchmark dataset")
    p.add_argument("--preset", required=True,
                   help="fig1[-train|-val] | fig2[-eval] | fig3[-train|-val|-test]")
    p.add_argument("--scale", choices=presets.SCALES, default="full")
    p.add_argument("--sampler", choices=("exact", "mcmc"), default="mcmc")
    p.add_argument("--seed", type=int, default=presets.DEFAULT_SEED)
    p.add_argument("--n-states", type=int, default=None, help="override N_S")
    p.add_argument("--n-batches", type=int, default=None, help="override N_B")
    p.add_argument("--n-samples", type=int, default=None, help="override N_M")
    p.add_argument("--n-sites", type=int, default=None, help="override N")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train the estimator (or an ensemble)")
    p.add_argument("--preset", required=True, help="fig1 | fig2 | fig3")
    p.add_argument("--scale", choices=presets.SCALES, default="full")
    p.add_argument("--seed", type=int, default=presets.DEFAULT_SEED)
    p.add_argument("--data", required=True,
                   help="directory holding train/ and val/ datasets")
    p.add_argument("--ensemble", type=int, default=None, help="member count")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--minibatch", type=int, default=None)
    p.add_argument("--label-kind", choices=("hce", "mi"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="ensemble predictions over a dataset")
    p.add_argument("--checkpoints", required=True, help="training output directory")
    p.add_argument("--data", required=True, help="evaluation dataset directory")
    p.add_argument("--aggregate", choices=("batch", "state"), default="batch")
    p.add_argument("--label-kind", choices=("hce", "mi"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="randomized-measurement estimates")
    _add_system_flags(p)
    p.add_argument("--preset", choices=("low", "high"), required=True,
                   help="low: 2x500 shots, high: 300x5000 shots")
    p.add_argument("--data", default=None, help="unitary dataset for eval times")
    p.add_argument("--times", nargs=3, metavar=("LO", "HI", "COUNT"), default=None)
    p.add_argument("--n-unitaries", type=int, default=None)
    p.add_argument("--n-meas", type=int, default=None)
    p.add_argument("--seed", type=int, default=presets.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("metrics", help="aggregate metrics from a points CSV")
    p.add_argument("--points", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="render figures from CSV outputs")
    p.add_argument("--run", required=True, help="directory with CSV outputs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, CapacityError) as exc:
        print(f"entrometer: error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"entrometer: data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, SamplingError, InvalidStateError) as exc:
        print(f"entrometer: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

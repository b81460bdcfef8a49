"""Figure rendering from the CSV outputs.

Every plot is built purely from files the commands already wrote (points,
history, baseline CSVs), never from live computation, so reports can be
regenerated or restyled without touching physics code.  PNGs are written
without timestamp metadata to keep re-runs byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import read_csv_columns

_SAVE_KW = {"dpi": 150, "metadata": {"Software": None}}


def _floats(cols: dict[str, list[str]], key: str) -> np.ndarray:
    return np.array([float(v) for v in cols[key]])


def plot_history(history_csv: str | Path, out_png: str | Path) -> Path:
    """Training and validation loss per epoch, linear-log."""
    cols = read_csv_columns(history_csv)
    epochs = _floats(cols, "epoch")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, _floats(cols, "train_loss"), label="training", lw=1.0)
    ax.plot(epochs, _floats(cols, "val_loss"), label="validation", lw=1.0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("Gaussian NLL loss")
    ax.set_yscale("symlog")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)
    return Path(out_png)


def plot_unitary_points(points_csv: str | Path, out_png: str | Path,
                        baseline_csvs: dict[str, str | Path] | None = None,
                        id_interval: tuple[float, float] | None = None) -> Path:
    """Entropy vs time: labels as a line, predictions with 1-sigma bars.

    Optional baseline CSVs are overlaid as scatter with their own error bars.
    """
    cols = read_csv_columns(points_csv)
    t = _floats(cols, "t_over_h")
    label = _floats(cols, "label_nats")
    mean = _floats(cols, "pred_mean_nats")
    sigma = _floats(cols, "sigma_total_nats")

    fig, ax = plt.subplots(figsize=(6, 3.6))
    order = np.argsort(t)
    ax.plot(t[order], label[order], color="crimson", lw=1.2, label="exact")
    ax.errorbar(t, mean, yerr=sigma, fmt="o", ms=2.5, lw=0.8, capsize=1.5,
                color="tab:blue", label="network", zorder=3)
    if baseline_csvs:
        markers = ["x", "+", "d"]
        for i, (name, path) in enumerate(baseline_csvs.items()):
            bcols = read_csv_columns(path)
            bt = _floats(bcols, "t_over_h")
            bh = _floats(bcols, "hce_estimate_nats")
            berr = _floats(bcols, "hce_stderr_nats")
            ok = np.array([v == "True" for v in bcols["physical"]])
            ax.errorbar(bt[ok], bh[ok], yerr=berr[ok], fmt=markers[i % 3], ms=4,
                        lw=0.7, alpha=0.8, label=name)
    if id_interval is not None:
        ax.axvline(id_interval[1], color="grey", ls="--", lw=0.8)
    ax.set_xlabel("time  (1/h)")
    ax.set_ylabel("half-chain entropy  (nats)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)
    return Path(out_png)


def plot_dissipative_points(points_csv: str | Path, out_png: str | Path) -> Path:
    """Three panels: noise-plane layout, random points, cross-section profile."""
    cols = read_csv_columns(points_csv)
    gz = _floats(cols, "gamma_z")
    gm = _floats(cols, "gamma_minus")
    label = _floats(cols, "label_nats")
    mean = _floats(cols, "pred_mean_nats")
    sigma = _floats(cols, "sigma_total_nats")
    tags = np.array(cols.get("tag", [""] * len(gz)))

    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    ax = axes[0]
    for tag, marker in (("random", "x"), ("cross_section", "o"), ("", "s")):
        sel = tags == tag
        if sel.any():
            ax.scatter(gz[sel], gm[sel], marker=marker, s=18,
                       label=tag or "points")
    ax.set_xlabel(r"dephasing rate $\gamma_z$")
    ax.set_ylabel(r"decay rate $\gamma_-$")
    ax.legend(frameon=False, fontsize=8)

    ax = axes[1]
    rand = tags != "cross_section"
    idx = np.argsort(label[rand])
    ax.errorbar(np.arange(rand.sum()), mean[rand][idx], yerr=sigma[rand][idx],
                fmt="o", ms=3, lw=0.8, label="network")
    ax.plot(np.arange(rand.sum()), label[rand][idx], "x", color="crimson",
            ms=4, label="exact")
    ax.set_xlabel("point (sorted by exact value)")
    ax.set_ylabel("mutual information  (nats)")
    ax.legend(frameon=False, fontsize=8)

    ax = axes[2]
    sec = tags == "cross_section"
    if sec.any():
        pos = np.hypot(gz[sec] - gz[sec][0], gm[sec] - gm[sec][0])
        order = np.argsort(pos)
        ax.plot(pos[order], label[sec][order], color="crimson", lw=1.0,
                label="exact")
        ax.errorbar(pos[order], mean[sec][order], yerr=sigma[sec][order],
                    fmt="o", ms=3, lw=0.8, label="network")
        ax.set_xlabel("position along section")
        ax.legend(frameon=False, fontsize=8)
    else:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(out_png, **_SAVE_KW)
    plt.close(fig)
    return Path(out_png)


def render_report(run_dir: str | Path, out_dir: str | Path | None = None
                  ) -> list[Path]:
    """Render every figure the CSVs in `run_dir` support; returns written paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    for history in sorted(run_dir.glob("**/history.csv")):
        stem = "_".join(history.relative_to(run_dir).parts[:-1]) or "run"
        written.append(plot_history(history, out_dir / f"loss_{stem}.png"))

    points = run_dir / "points.csv"
    if points.exists():
        cols = read_csv_columns(points)
        baselines = {p.stem.replace("baseline_", "baseline "): p
                     for p in sorted(run_dir.glob("baseline*.csv"))}
        if "t_over_h" in cols:
            written.append(plot_unitary_points(points, out_dir / "predictions.png",
                                               baselines or None))
        elif "gamma_z" in cols:
            written.append(plot_dissipative_points(points, out_dir / "predictions.png"))
    return written

"""Plot-ready CSV conversions and rendered figures for run artifacts.

Everything here is presentation: the flat records the workflows produce
(run logs, gap matrices, gains tables) come in, tidy long-format CSVs and
PNG figures come out.  Figures are rendered with the Agg backend so the
tooling works on headless hosts; when a seed is supplied it is embedded in
the CSV header comment and the PNG metadata so no artifact loses its
provenance.
"""
from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fractional import FoTransferFunction, freq_response, log_grid
from .gapmetric import GapMatrix
from .plant import N_CHANNELS
from .tuner import PiGains

__all__ = [
    "save_gap_matrix_csv",
    "load_gap_matrix_csv",
    "save_gap_surface_csv",
    "save_temps_long_csv",
    "save_drives_long_csv",
    "plot_temps",
    "plot_drives",
    "plot_gap_surface",
    "bode_table",
    "save_bode_csv",
    "plot_bode",
]


def _png_meta(seed):
    return None if seed is None else {"Description": f"seed={int(seed)}"}


def _comment(fh, seed):
    if seed is not None:
        fh.write(f"# seed={int(seed)}\n")


# ------------------------------------------------------------- gap matrix

def save_gap_matrix_csv(path, gm: GapMatrix, *, seed=None) -> None:
    """Square layout: header row of labels, one data row per member."""
    with open(path, "w", newline="") as fh:
        _comment(fh, seed)
        w = csv.writer(fh)
        w.writerow(["member", *gm.member_labels])
        for label, row in zip(gm.member_labels, gm.values):
            w.writerow([label] + [f"{v:.12g}" for v in row])


def load_gap_matrix_csv(path) -> tuple:
    """-> (labels, square ndarray)."""
    with open(path, newline="") as fh:
        r = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(r, None)
        if not header or header[0] != "member":
            raise ValueError("unrecognized gap matrix CSV header")
        labels = tuple(header[1:])
        rows = []
        for row in r:
            if not row:
                continue
            if row[0] != labels[len(rows)]:
                raise ValueError("gap matrix CSV rows out of order")
            rows.append([float(v) for v in row[1:]])
    values = np.asarray(rows)
    if values.shape != (len(labels), len(labels)):
        raise ValueError("gap matrix CSV is not square")
    return labels, values


def save_gap_surface_csv(path, gm: GapMatrix, *, seed=None) -> None:
    """Long form (i, j, delta) triplets, one pair per line."""
    with open(path, "w", newline="") as fh:
        _comment(fh, seed)
        w = csv.writer(fh)
        w.writerow(["i", "j", "delta"])
        for i in range(gm.size):
            for j in range(gm.size):
                w.writerow([i, j, f"{gm.values[i][j]:.12g}"])


def plot_gap_surface(path, labels, values, *, seed=None) -> None:
    values = np.asarray(values)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(values, cmap="viridis", vmin=0.0)
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            ax.text(j, i, f"{values[i, j]:.3f}", ha="center", va="center",
                    color="white" if values[i, j] > values.max() / 2 else "black",
                    fontsize=8)
    fig.colorbar(im, ax=ax, label="metric distance")
    ax.set_title("Pairwise model distances")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_png_meta(seed))
    plt.close(fig)


# ---------------------------------------------------------------- runlog

def _runlog_arrays(log) -> dict:
    """Accept a RunLog or the dict produced by load_runlog_csv."""
    if isinstance(log, dict):
        return {"t": log["t"], "sp": log["sp"], "y": log["y"], "u": log["u"]}
    return {
        "t": log.times,
        "sp": log.setpoints,
        "y": log.measured,
        "u": log.drives,
    }


def save_temps_long_csv(path, log, *, seed=None) -> None:
    d = _runlog_arrays(log)
    with open(path, "w", newline="") as fh:
        _comment(fh, seed)
        w = csv.writer(fh)
        w.writerow(["t", "channel", "setpoint", "measured"])
        for k, t in enumerate(d["t"]):
            for ch in range(N_CHANNELS):
                w.writerow([
                    f"{t:.10g}", ch,
                    f"{d['sp'][k][ch]:.10g}", f"{d['y'][k][ch]:.10g}",
                ])


def save_drives_long_csv(path, log, *, seed=None) -> None:
    d = _runlog_arrays(log)
    with open(path, "w", newline="") as fh:
        _comment(fh, seed)
        w = csv.writer(fh)
        w.writerow(["t", "channel", "counts"])
        for k, t in enumerate(d["t"]):
            for ch in range(N_CHANNELS):
                w.writerow([f"{t:.10g}", ch, f"{d['u'][k][ch]:.10g}"])


def plot_temps(path, log, *, seed=None) -> None:
    d = _runlog_arrays(log)
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    for ch in range(N_CHANNELS):
        ax.plot(d["t"], np.asarray(d["y"])[:, ch], lw=0.7, alpha=0.8)
    ax.plot(d["t"], np.asarray(d["sp"])[:, 0], "k--", lw=1.2, label="setpoint ch1")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("measured temperature [degC]")
    ax.set_title("Cell temperatures, all 16 channels")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_png_meta(seed))
    plt.close(fig)


def plot_drives(path, log, *, seed=None) -> None:
    d = _runlog_arrays(log)
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    for ch in range(N_CHANNELS):
        ax.plot(d["t"], np.asarray(d["u"])[:, ch], lw=0.7, alpha=0.8)
    ax.axhline(4000.0, color="r", ls=":", lw=1.0)
    ax.axhline(-4000.0, color="r", ls=":", lw=1.0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("drive [counts]")
    ax.set_title("Controller outputs, all 16 channels")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_png_meta(seed))
    plt.close(fig)


# ------------------------------------------------------------------ Bode

def bode_table(model: FoTransferFunction, gains: PiGains | None = None,
               w_lo: float = 1e-4, w_hi: float = 1e2) -> dict:
    """Frequency, magnitude and phase arrays for the plant and, when gains
    are given, the open loop with its PI controller."""
    w = log_grid(w_lo, w_hi, 30)
    g = freq_response(model, w).values
    out = {
        "w": w,
        "plant_mag_db": 20.0 * np.log10(np.abs(g)),
        "plant_phase_deg": np.degrees(np.unwrap(np.angle(g))),
    }
    if gains is not None:
        c = gains.prop_K + gains.integ_I / (1j * w)
        loop = c * g
        out["loop_mag_db"] = 20.0 * np.log10(np.abs(loop))
        out["loop_phase_deg"] = np.degrees(np.unwrap(np.angle(loop)))
    return out


def save_bode_csv(path, table: dict, *, seed=None) -> None:
    cols = [k for k in ("w", "plant_mag_db", "plant_phase_deg",
                        "loop_mag_db", "loop_phase_deg") if k in table]
    with open(path, "w", newline="") as fh:
        _comment(fh, seed)
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(len(table["w"])):
            w.writerow([f"{table[c][k]:.10g}" for c in cols])


def plot_bode(path, table: dict, *, seed=None) -> None:
    fig, (ax_m, ax_p) = plt.subplots(2, 1, figsize=(6.5, 6.0), sharex=True)
    ax_m.semilogx(table["w"], table["plant_mag_db"], label="plant")
    ax_p.semilogx(table["w"], table["plant_phase_deg"], label="plant")
    if "loop_mag_db" in table:
        ax_m.semilogx(table["w"], table["loop_mag_db"], label="open loop")
        ax_p.semilogx(table["w"], table["loop_phase_deg"], label="open loop")
        ax_m.axhline(0.0, color="k", lw=0.6, ls=":")
        ax_p.axhline(-180.0, color="k", lw=0.6, ls=":")
    ax_m.set_ylabel("magnitude [dB]")
    ax_p.set_ylabel("phase [deg]")
    ax_p.set_xlabel("frequency [rad/s]")
    ax_m.legend(fontsize=8)
    ax_m.set_title("Frequency response")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_png_meta(seed))
    plt.close(fig)

"""Matplotlib figure rendering for reports, sweeps, and spectrograms."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (7.5, 4.5)
DPI = 130


def save_spectrogram_png(grid_db: np.ndarray, duration_s: float, max_freq_hz: float,
                         path, title: str | None = None) -> None:
    """Render a (bins, frames) dB grid with time on x and frequency on y."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    im = ax.imshow(grid_db, origin="lower", aspect="auto", cmap="viridis",
                   extent=(0.0, duration_s, 0.0, max_freq_hz / 1000.0))
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (kHz)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="magnitude (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_report_figure(report, path) -> None:
    """Grouped bars of unprocessed vs separated SIR per speaker."""
    labels = [s.label for s in report.speakers]
    unp = [_clip_db(s.unprocessed_sir_db) for s in report.speakers]
    out = [_clip_db(s.output_sir_db) for s in report.speakers]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.bar(x - 0.18, unp, width=0.36, label="unprocessed", color="#b0b0b0")
    ax.bar(x + 0.18, out, width=0.36, label="separated", color="#2a6fdb")
    ax.set_xticks(x, labels)
    ax.set_ylabel("SIR (dB)")
    ax.axhline(0.0, color="black", linewidth=0.8)
    title = f"Q_A={report.q_a} Q_B={report.q_b}"
    if report.snr_db is not None:
        title += f", background SNR {report.snr_db:g} dB"
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], speaker_labels: list[str], path) -> None:
    """Output SIR per speaker across the sweep axis.

    Plots against the background SNR when it varies (one line style per Q_A),
    otherwise against Q_A.
    """
    snrs = sorted({r["snr_db"] for r in rows})
    qas = sorted({r["q_a"] for r in rows})
    x_is_snr = len(snrs) > 1 or len(qas) == 1
    fig, ax = plt.subplots(figsize=FIGSIZE)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    styles = ["-", "--", ":", "-."]
    group_vals = qas if x_is_snr else snrs
    for gi, gval in enumerate(group_vals):
        sub = [r for r in rows if (r["q_a"] if x_is_snr else r["snr_db"]) == gval]
        sub.sort(key=lambda r: r["snr_db"] if x_is_snr else r["q_a"])
        xs = [r["snr_db"] if x_is_snr else r["q_a"] for r in sub]
        for si, label in enumerate(speaker_labels):
            ys = [_clip_db(r["output_sir_db"][si]) for r in sub]
            name = label if len(group_vals) == 1 else f"{label} (Q_A={gval})" \
                if x_is_snr else f"{label} (SNR={gval:g})"
            ax.plot(xs, ys, styles[gi % len(styles)], color=colors[si % len(colors)],
                    marker="o", markersize=3, label=name)
    ax.set_xlabel("background SNR (dB)" if x_is_snr else "Q_A (microphones)")
    ax.set_ylabel("output SIR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def _clip_db(v: float, limit: float = 200.0) -> float:
    if v is None or math.isnan(v):
        return 0.0
    return max(-limit, min(limit, v))

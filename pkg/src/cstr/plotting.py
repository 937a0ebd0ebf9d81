"""Matplotlib figures mirroring the CSV series written by the CLI.

All figures go through :func:`save`, which strips the PNG metadata that
would otherwise make identical runs produce different bytes.
"""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "path.simplify": False,
    "svg.hashsalt": "cstr",
}


def new_figure(**kwargs):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(**kwargs)
    return fig, ax


def save(fig, path) -> Path:
    """Write ``fig`` atomically as PNG without timestamp/software metadata."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(tmp, format="png", metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)
    return path


def signal_image_example(trace: dict, path) -> Path:
    """Received magnitude for one CSTR shift with the Signal and Image peaks marked."""
    amp = np.asarray(trace["amplitude"])
    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        ax.plot(np.arange(amp.size), amp, color="0.3")
        s = trace["signal_index"]
        ax.plot([s], [amp[s]], "o", color="C0", label=f"Signal (tap {s})")
        if trace["image_index"] is not None:
            i = trace["image_index"]
            ax.plot([i], [amp[i]], "s", color="C3", label=f"Image (tap {i})")
        ax.set_xlabel("sample index")
        ax.set_ylabel("|received|")
        ax.set_title(f"CIR {trace['cir_id']}: {trace['percent']:g}% {trace['direction']} circular shift")
        ax.legend()
    return save(fig, path)


def peak_vs_shift(points: list[dict], aggregates: list[dict], quantity: str, path) -> Path:
    """Per-CIR traces plus the ensemble mean, right shifts on the positive axis and
    left shifts on the negative one. ``quantity`` is ``"signal"`` or ``"image"``."""
    column = f"norm_{quantity}_peak_power"

    def signed(row):
        return -row["percent"] if row["direction"] == "left" else row["percent"]

    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        by_cir: dict[str, list] = {}
        for r in points:
            by_cir.setdefault(r["cir_id"], []).append((signed(r), r[column]))
        for series in by_cir.values():
            series.sort()
            x, y = zip(*series)
            ax.plot(x, y, color="0.75", linewidth=0.6)
        avg = sorted((signed(a), a[f"{quantity}_mean"]) for a in aggregates)
        x, y = zip(*avg)
        ax.plot(x, y, color="C3", linewidth=2.0, label="ensemble mean")
        ax.set_xlabel("circular shift (%)  [left < 0 < right]")
        ax.set_ylabel(f"normalized {quantity.capitalize()} peak power")
        ax.legend()
    return save(fig, path)


def sir_cdfs(cdfs: dict[str, list], series: list[tuple[str, str]], title: str, path) -> Path:
    """Overlay several SIR CDFs. ``series`` lists ``(cdf key, legend label)``."""
    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        for k, (key, label) in enumerate(series):
            pts = cdfs.get(key) or []
            if not pts:
                continue
            x, p = zip(*pts)
            style = "--" if k == 0 else "-"
            ax.step(x, p, style, where="post", label=label)
        ax.set_xlabel("SIR (dB)")
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1)
        ax.set_title(title)
        ax.legend()
    return save(fig, path)


def median_sir_vs_shift(aggregates: list[dict], n_users: int, path) -> Path:
    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        for direction, style in (("right", "-o"), ("left", "--s")):
            for user in range(1, n_users + 1):
                rows = sorted(
                    (a["percent"], a["sir_median"]) for a in aggregates
                    if a["direction"] == direction and a["user"] == user and a["n_finite"] > 0
                )
                if rows:
                    x, y = zip(*rows)
                    ax.plot(x, y, style, color=f"C{user - 1}", markersize=3,
                            label=f"User{user} {direction}")
        ax.set_xlabel(f"User{n_users} circular shift (%)")
        ax.set_ylabel("median SIR (dB)")
        ax.legend(ncol=2)
    return save(fig, path)


def power_delay_profile(delays: np.ndarray, mean_power: np.ndarray, path) -> Path:
    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        power_db = 10 * np.log10(np.maximum(mean_power, np.finfo(float).tiny))
        ax.plot(delays * 1e9, power_db)
        ax.set_xlabel("delay (ns)")
        ax.set_ylabel("mean tap power (dB)")
    return save(fig, path)

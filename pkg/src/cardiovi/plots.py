"""Static SVG figures rendered from a run directory's CSV files.

Rendering depends only on the CSV contents: matplotlib's SVG id salt is
fixed and the date metadata dropped, so unchanged inputs give byte-identical
files.
"""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bayesopt import read_trace_csv  # noqa: E402
from .cardiosim import LEAD_NAMES, read_ecg_csv  # noqa: E402
from .errors import ConfigurationError  # noqa: E402
from .manifold import read_embedding_csv  # noqa: E402

TRACE_FILES = {
    "recover": ("trace_stage1.csv",),
    "compare-manifold": ("trace_manifold.csv", "trace_cartesian.csv"),
}
ECG_FILES = ("ecg_observed.csv", "ecg_baseline.csv", "ecg_fitted.csv")
_RC = {"svg.hashsalt": "cardiovi", "svg.fonttype": "path", "font.size": 8}


def _read(run_dir, name):
    p = Path(run_dir) / name
    if not p.is_file():
        raise ConfigurationError(f"missing input file: {p}")
    return p.read_text()


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cost_curve_svg(traces, path):
    """Best-so-far against iteration on a log axis, one line per trace."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, tr in traces.items():
        ax.plot(np.arange(len(tr.best_so_far)), tr.best_so_far, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("best objective so far")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def embedding_svg(emb, path):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    sc = ax.scatter(emb.latent[:, 0], emb.latent[:, 1], c=np.arange(len(emb.latent)), s=6, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="vertex order")
    ax.set_xlabel("z1")
    ax.set_ylabel("z2")
    ax.set_aspect("equal")
    fig.tight_layout()
    _save(fig, path)


def ecg_overlay_svg(traces, path):
    """Twelve panels, one per lead, overlaying the given traces."""
    fig, axes = plt.subplots(4, 3, figsize=(9, 8), sharex=True)
    for i, lead in enumerate(LEAD_NAMES):
        ax = axes[i % 4, i // 4]
        for label, tr in traces.items():
            ax.plot(tr.times, tr[lead], label=label, lw=1)
        ax.set_title(lead)
    axes[-1, 0].set_xlabel("t (ms)")
    axes[0, 0].legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def emit_plots(run_dir):
    """Write the SVG figures a run directory supports; return their paths."""
    run_dir = Path(run_dir)
    manifest = json.loads(_read(run_dir, "manifest.json"))
    verb = manifest.get("verb")
    written = []
    with plt.rc_context(_RC):
        if verb in TRACE_FILES:
            traces = {}
            for name in TRACE_FILES[verb]:
                try:
                    traces[name[len("trace_") : -len(".csv")]] = read_trace_csv(_read(run_dir, name))
                except ValueError as err:
                    raise ConfigurationError(f"{run_dir / name}: {err}") from None
            cost_curve_svg(traces, run_dir / "cost_curve.svg")
            written.append(run_dir / "cost_curve.svg")
        if verb in ("recover", "compare-manifold", "embed"):
            embedding_svg(read_embedding_csv(_read(run_dir, "embedding.csv")), run_dir / "embedding.svg")
            written.append(run_dir / "embedding.svg")
        if verb == "recover":
            ecgs = {n[len("ecg_") : -len(".csv")]: read_ecg_csv(_read(run_dir, n)) for n in ECG_FILES}
            ecg_overlay_svg(ecgs, run_dir / "ecg_overlay.svg")
            written.append(run_dir / "ecg_overlay.svg")
        if verb == "simulate":
            ecg_overlay_svg({"simulated": read_ecg_csv(_read(run_dir, "ecg.csv"))}, run_dir / "ecg.svg")
            written.append(run_dir / "ecg.svg")
    return written

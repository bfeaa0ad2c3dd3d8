"""Figures written as self-contained, reproducible SVG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "svg.hashsalt": "skillchain",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "axes.grid.axis": "y",
    "grid.alpha": 0.3,
    "legend.frameon": False,
}
_SUITE_LABELS = {"all": "Overall", "LiberoLongPP": "LIBERO-Long++", "UltraLong": "Ultra-Long"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def ablation_bars(summary: dict, path, order=None) -> Path:
    """Grouped SR and AP bars per configuration for each suite present."""
    configs = [c for c in (order or summary) if c in summary]
    groups = [g for g in ("LiberoLongPP", "UltraLong", "all") if all(g in summary[c] for c in configs)]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4), sharey=True)
        x = np.arange(len(groups))
        width = 0.8 / max(1, len(configs))
        for ax, metric in zip(axes, ("sr", "ap")):
            for k, cfg in enumerate(configs):
                vals = [100.0 * summary[cfg][g][metric] for g in groups]
                ax.bar(x + (k - (len(configs) - 1) / 2) * width, vals, width, label=cfg)
            ax.set_xticks(x, [_SUITE_LABELS.get(g, g) for g in groups])
            ax.set_title("Success rate (%)" if metric == "sr" else "Average progress (%)")
            ax.set_ylim(0, 105)
        handles, labels = axes[0].get_legend_handles_labels()
        fig.legend(handles, labels, loc="lower center", ncol=len(configs), fontsize=8)
        fig.tight_layout(rect=(0, 0.08, 1, 1))
        return _save(fig, path)


def perturbation_bars(result: dict, path) -> Path:
    """Clean vs noisy start-pose success for each training variant."""
    variants = sorted(result["variants"], key=lambda v: (v != "with perturb", v))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        x = np.arange(len(variants))
        for k, label in enumerate(("clean", "noisy")):
            vals = [result["variants"][v][label] for v in variants]
            bars = ax.bar(x + (k - 0.5) * 0.38, vals, 0.38, label="no deployment noise" if label == "clean" else "deployment noise")
            ax.bar_label(bars, fmt="%.3f", fontsize=7)
        ax.set_xticks(x, variants)
        ax.set_ylabel("Mean skill success")
        ax.set_ylim(0, 1.2)
        ax.set_yticks(np.linspace(0, 1, 6))
        ax.legend(loc="upper center", ncol=2, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)

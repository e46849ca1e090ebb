"""Static SVG figures with byte-stable output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["hist_svg", "line_svg", "bar_svg"]

_RC = {"svg.hashsalt": "infoprior", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def hist_svg(path, panels, target=None, title=""):
    """One histogram per ``(label, samples)`` panel on [0, 1]; optional Beta target density."""
    from scipy import stats

    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 2.6), squeeze=False)
        grid = np.linspace(0.001, 0.999, 200)
        for ax, (label, samples) in zip(axes[0], panels):
            ax.hist(samples, bins=20, range=(0, 1), density=True, color="#8aa", edgecolor="white")
            if target is not None:
                ax.plot(grid, stats.beta.pdf(grid, *target), color="#c33")
            ax.set_title(label)
            ax.set_xlabel("PVE")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def line_svg(path, series: dict, xlabel="step", ylabel=""):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for label, ys in series.items():
            ax.plot(np.arange(len(ys)), ys, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        _save(fig, path)


def bar_svg(path, entries, metric: str):
    """Means with 1.96 SEM error bars, grouped by dataset, one bar per prior."""
    entries = [e for e in entries if e["metric"] == metric]
    datasets = sorted({e["dataset"] for e in entries})
    priors = sorted({e["prior"] for e in entries})
    lookup = {(e["dataset"], e["prior"]): e for e in entries}
    width = 0.8 / max(len(priors), 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(datasets) + 2), 3))
        for k, prior in enumerate(priors):
            xs, means, errs = [], [], []
            for i, ds in enumerate(datasets):
                e = lookup.get((ds, prior))
                if e is not None:
                    xs.append(i + k * width)
                    means.append(e["mean"])
                    errs.append(e["sem196"])
            ax.bar(xs, means, width, yerr=errs, label=prior, capsize=2)
        ax.set_xticks(np.arange(len(datasets)) + 0.4 - width / 2)
        ax.set_xticklabels(datasets, rotation=30, ha="right")
        ax.set_ylabel(metric)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)

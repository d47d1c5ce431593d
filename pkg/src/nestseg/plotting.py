"""Figures written next to the benchmark CSVs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {
    "softmax-ce": "#4d4d4d",
    "sse": "#1b9e77",
    "mce": "#d95f02",
    "mce-unweighted": "#e7a96b",
    "nce": "#7570b3",
    "nce-weighted": "#a6a3d1",
}


def _color(method):
    return COLORS.get(method.split("@")[0], None)


def plot_convergence(report, path, level=0.8):
    """Mean validation Dice of the innermost class against iteration."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for method in sorted({c[1] for c in report.curves}):
        its, d = report.mean_curve(method)
        ax.plot(its, d, label=method, color=_color(method), lw=1.5)
    ax.axhline(level, color="k", ls=":", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"validation Dice (class {report.m})")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_test_dice(report, path):
    methods = report.methods()
    data = [report.test_dice(m) for m in methods]
    fig, ax = plt.subplots(figsize=(1.0 + 0.9 * len(methods), 3.6))
    ax.boxplot(data, showmeans=True)
    ax.set_xticks(np.arange(1, len(methods) + 1))
    ax.set_xticklabels(methods, rotation=35, ha="right", fontsize=8)
    ax.set_ylabel(f"test Dice (class {report.m})")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)

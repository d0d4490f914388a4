"""Figure rendering for run directories.

Everything draws through the Agg backend straight to files; no display
server is assumed. Image panels share the same display convention as the
8-bit exports: a linear window of four standard deviations either side of
the mean.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .imaging import DISPLAY_SIGMAS


def _window(pixels):
    mu = float(pixels.mean())
    sigma = float(pixels.std())
    if sigma == 0.0:
        return mu - 0.5, mu + 0.5
    return mu - DISPLAY_SIGMAS * sigma, mu + DISPLAY_SIGMAS * sigma


def _show_plane(ax, img, title):
    lo, hi = _window(img.pixels)
    ax.imshow(img.pixels, cmap="gray", vmin=lo, vmax=hi, interpolation="nearest")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def render_loss_curves(report, path):
    """Per-epoch loss components on a log scale."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    n = len(report.loss_series)
    if n == 0:
        ax.text(0.5, 0.5, "no training epochs", ha="center", va="center")
        ax.set_axis_off()
    else:
        epochs = np.arange(1, n + 1)
        ax.plot(epochs, [b.total for b in report.loss_series], label="total")
        ax.plot(epochs, [b.data_term for b in report.loss_series], label="data")
        ax.plot(
            epochs,
            [b.exclusion_term for b in report.loss_series],
            label="exclusion (raw)",
        )
        anchored = [b.alpha_anchor_term for b in report.loss_series]
        if any(v > 0 for v in anchored):
            ax.plot(epochs, anchored, label="anchor")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8)
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_separation_panel(report, path):
    """The four generated planes, annotated with the final blending weights."""
    fig, axes = plt.subplots(2, 2, figsize=(7.0, 7.0))
    _show_plane(axes[0, 0], report.i1_model, "synthesized observation 1")
    _show_plane(axes[0, 1], report.i2_model, "synthesized observation 2")
    _show_plane(
        axes[1, 0], report.y1, f"recovered slice 1   alpha1 = {report.alpha1:.3f}"
    )
    _show_plane(
        axes[1, 1], report.y2, f"recovered slice 2   alpha2 = {report.alpha2:.3f}"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_spectrum(spectrum, path, title="power spectrum"):
    """A centered power spectrum on a logarithmic brightness scale."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    floor = spectrum.values[spectrum.values > 0].min() if (spectrum.values > 0).any() else 1.0
    shown = np.log10(np.maximum(spectrum.values, floor))
    ax.imshow(shown, cmap="magma", interpolation="nearest")
    ax.set_title(title, fontsize=10)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_uncertainty(report, path):
    """Mean-spread trend over the exclusion weight, with the per-weight maps."""
    n = len(report.gammas)
    fig = plt.figure(figsize=(2.4 * max(n, 2), 5.0))
    grid = fig.add_gridspec(2, n, height_ratios=[1.2, 1.0])
    trend = fig.add_subplot(grid[0, :])
    trend.plot(report.gammas, report.mean_std_series, marker="o")
    trend.set_xlabel("exclusion weight")
    trend.set_ylabel("mean std over runs")
    trend.grid(True, alpha=0.3)
    for i, img in enumerate(report.std_maps):
        ax = fig.add_subplot(grid[1, i])
        ax.imshow(img.pixels, cmap="viridis", interpolation="nearest")
        ax.set_title(f"gamma = {report.gammas[i]:g}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path

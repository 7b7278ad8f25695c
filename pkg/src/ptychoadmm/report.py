"""Matplotlib figures written next to the run's tabular output.

All functions render with the non-interactive Agg backend and return the
path written.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def convergence_figure(history, path, drops=()):
    """Objective, SSIM and KKT residual curves against epoch.

    Parameters
    ----------
    history : MetricsHistory
    path : path-like
        PNG destination.
    drops : sequence of int
        Epochs at which the step schedule drops; drawn as vertical guides.
    """
    epochs = np.array(history.column("epoch"))
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))

    ax = axes[0]
    ax.semilogy(epochs, history.column("fidelity"), label="fidelity")
    lag = np.array(history.column("lagrangian"))
    if np.all(lag > 0):
        ax.semilogy(epochs, lag, label="Lagrangian", alpha=0.8)
    ax.set_title("objective")

    ax = axes[1]
    mag, ph = np.array(history.column("mag_ssim")), np.array(history.column("phase_ssim"))
    if np.isfinite(mag).any():
        ax.plot(epochs, mag, label="magnitude")
        ax.plot(epochs, ph, label="phase")
        ax.set_ylim(min(0.0, np.nanmin(ph), np.nanmin(mag)), 1.0)
    ax.set_title("SSIM")

    ax = axes[2]
    for col in ("kkt_u", "kkt_v", "kkt_omega", "kkt_z"):
        vals = np.array(history.column(col))
        keep = np.isfinite(vals) & (vals > 0)
        if keep.any():
            ax.semilogy(epochs[keep], vals[keep], marker=".", label=col[4:])
    ax.set_title("KKT residuals")

    for ax in axes:
        for e in drops:
            ax.axvline(e, color="0.7", lw=0.8, ls="--")
        ax.set_xlabel("epoch")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=8)
    return _save(fig, path)


def field_figure(fields, titles, path):
    """Magnitude (top row) and phase (bottom row) panels for each complex field."""
    k = len(fields)
    fig, axes = plt.subplots(2, k, figsize=(3.2 * k, 6.2), squeeze=False)
    for j, (z, title) in enumerate(zip(fields, titles)):
        im = axes[0, j].imshow(np.abs(z), cmap="gray")
        fig.colorbar(im, ax=axes[0, j], fraction=0.046)
        axes[0, j].set_title(f"{title} |z|")
        im = axes[1, j].imshow(np.angle(z), cmap="twilight", vmin=-np.pi, vmax=np.pi)
        fig.colorbar(im, ax=axes[1, j], fraction=0.046)
        axes[1, j].set_title(f"{title} arg z")
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)

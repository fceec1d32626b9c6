"""Matplotlib renderings written next to the delimited report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .geometry import ShrinkageRow, SpectrumHistogram


def save_history_figure(history, path):
    epochs = [row[0] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [row[1] for row in history], label="train loss")
    ax1.plot(epochs, [row[3] for row in history], label="test loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [row[2] for row in history], label="train error")
    ax2.plot(epochs, [row[4] for row in history], label="test error")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("top-1 error")
    ax2.set_ylim(0, 1)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_shrinkage_figure(rows: list[ShrinkageRow], path):
    lam = np.array([r.lam for r in rows])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(lam, [r.f_sqrt for r in rows], label=r"$\lambda^{1/2}$")
    ax1.plot(lam, [r.f_log for r in rows], label=r"$\log\lambda$")
    ax1.plot(lam, lam, "k--", lw=0.8, label="identity")
    ax1.set_xscale("log")
    ax1.set_xlabel(r"$\lambda$")
    ax1.set_title("normalization functions")
    ax1.legend()
    ax2.plot(lam, [r.d_sqrt for r in rows], label=r"$\frac{1}{2}\lambda^{-1/2}$")
    ax2.plot(lam, [r.d_log for r in rows], label=r"$1/\lambda$")
    ax2.set_xscale("log")
    ax2.set_yscale("log")
    ax2.set_xlabel(r"$\lambda$")
    ax2.set_title("derivatives")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_spectrum_figure(hist: SpectrumHistogram, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    centers = np.sqrt(hist.bin_edges[:-1] * hist.bin_edges[1:])
    widths = np.diff(hist.bin_edges)
    ax.bar(centers, hist.counts, width=widths, align="center", edgecolor="none")
    ax.set_xscale("log")
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("count")
    ax.set_title(
        f"covariance spectrum ({hist.n_matrices} matrices, "
        f"{hist.zero_count} zero eigenvalues excluded)"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_figure(alphas, pow_e, log_e, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(alphas, pow_e, "o-", label="power-Euclidean")
    ax.axhline(log_e, color="k", ls="--", lw=0.8, label="log-Euclidean limit")
    ax.set_xscale("log")
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel("distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(alphas, mean_errors, path, baseline=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(alphas, mean_errors, "o-", label="covariance pooling")
    if baseline is not None:
        ax.axhline(baseline, color="k", ls="--", lw=0.8, label="first-order baseline")
    ax.set_xlabel(r"power exponent $\alpha$")
    ax.set_ylabel("mean test error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

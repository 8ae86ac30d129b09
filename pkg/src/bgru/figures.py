"""Matplotlib figures rendered next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(reports, path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = np.arange(1, len(reports) + 1)
    ax.plot(epochs, [r.loss for r in reports], lw=1.2, label="training loss")
    ax.set_xlabel("epoch (cumulative)")
    ax.set_ylabel("bipolar MSE")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sdr_vs_pi(stage_points, path, round1_sdr: float | None = None) -> None:
    """SDR trajectory over the binarization schedule."""
    fig, ax = plt.subplots(figsize=(6, 4))
    pis = [p for p, _ in stage_points]
    sdrs = [s for _, s in stage_points]
    ax.plot(pis, sdrs, "o-", label="BGRU at stage pi")
    if round1_sdr is not None:
        ax.axhline(round1_sdr, color="gray", ls="--", lw=1,
                   label="round-1 network")
    ax.set_xlabel("binarization fraction pi")
    ax.set_ylabel("mean SDR (dB)")
    ax.set_title("Denoising quality vs. amount of binarization")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figure(rows, path) -> None:
    """Per-utterance SDR of the mixture vs. the estimate."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r.sdr_mix for r in rows], width=0.4, label="mixture")
    ax.bar(x + 0.2, [r.sdr_est for r in rows], width=0.4, label="estimate")
    ax.set_xticks(x)
    ax.set_xticklabels([r.utterance for r in rows], rotation=60, fontsize=6,
                       ha="right")
    ax.set_ylabel("SDR (dB)")
    ax.set_title("Per-utterance SDR")
    ax.grid(alpha=0.3, axis="y")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_codebook_figure(samples, cb, path) -> None:
    """Histogram of quantizer training values with the fitted levels."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(samples, bins=120, color="steelblue", alpha=0.7, density=True)
    for lv in cb.levels:
        ax.axvline(lv, color="crimson", lw=0.8)
    ax.set_xlabel("log(1 + magnitude)")
    ax.set_ylabel("density")
    ax.set_title("Quantizer levels over the training distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

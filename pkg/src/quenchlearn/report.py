"""Matplotlib figure rendering for CLI artifacts.

Figures are rendered headlessly (Agg backend) next to the delimited output
files; nothing here affects the numerical pipeline.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .stats import LearningCurve


def plot_learning_curves(curves: list[LearningCurve], path, title: str = "") -> None:
    """Log-log learning curves with error bars and asymptote markers."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for curve, color in zip(curves, plt.cm.tab10.colors):
        runs = [p.n_runs for p in curve.points]
        ratios = [p.ratio for p in curve.points]
        errs = [p.ratio_err if p.ratio_err is not None else 0.0
                for p in curve.points]
        ax.errorbar(runs, ratios, yerr=errs, marker="o", ms=4, lw=1.2,
                    color=color, label=curve.label or None, capsize=2)
        if curve.asymptote is not None and curve.asymptote > 0:
            ax.plot([runs[-1] * 1.6], [curve.asymptote], marker="v", ms=8,
                    color=color, ls="none")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$N_\mathrm{runs}$")
    ax.set_ylabel(r"$\lambda_1/\lambda_2$")
    if title:
        ax.set_title(title)
    if any(c.label for c in curves):
        ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_beta_sweep(betas: np.ndarray, spectra: np.ndarray,
                    lambda_c: np.ndarray, path, title: str = "") -> None:
    """Singular spectrum vs regularization strength, plus the tracking value."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    spectra = np.asarray(spectra)
    for j in range(spectra.shape[1]):
        ax.plot(betas, spectra[:, j], color="0.55", lw=0.9)
    ax.plot(betas, lambda_c, color="C3", lw=1.8, label=r"$\lambda(c^\mathrm{rec})$")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$\beta$")
    ax.set_ylabel("singular values")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bootstrap_table(names: list[str], values: np.ndarray, std: np.ndarray,
                         truth: np.ndarray | None, path, title: str = "") -> None:
    """Coefficient estimates with 2-sigma bars (and truth markers if known)."""
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(names)), 4.0))
    xs = np.arange(len(names))
    ax.errorbar(xs, values, yerr=2 * np.asarray(std), fmt="o", ms=4,
                capsize=3, label="reconstructed (2 sigma)")
    if truth is not None:
        ax.plot(xs, truth, marker="x", ls="none", color="C3", label="truth")
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("coefficient")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

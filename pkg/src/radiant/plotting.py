"""Report figures written next to the CSV outputs (headless backend)."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import write_bytes_atomic  # noqa: E402

_STYLE = {"figure.figsize": (5.0, 3.6), "figure.dpi": 120, "axes.grid": True,
          "grid.alpha": 0.3, "font.size": 9}


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    fig.tight_layout()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return write_bytes_atomic(path, buf.getvalue())


def plot_rates(path, labels, rates, predicted=None, chi=None) -> Path:
    """Collective rates against mode label, optionally with closed-form values."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(labels, rates, "o", ms=4, label="eigenmodes")
        if predicted is not None:
            pl, pr = predicted
            order = np.argsort(pl)
            ax.step(np.asarray(pl)[order], np.asarray(pr)[order], where="mid", color="C1",
                    label="plane-wave prediction")
        if chi is not None:
            ax.axhline(chi, ls=":", color="0.5", lw=0.8)
        ax.axhline(1.0, ls="--", color="0.5", lw=0.8)
        ax.set_xlabel("mode label n")
        ax.set_ylabel(r"$\Gamma_n/\bar\Gamma$")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_angular(path, theta, intensity, reference=None) -> Path:
    """Polar-angle profile ``I(theta)`` (averaged over azimuth when needed)."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(theta, np.maximum(intensity, 1e-16), lw=1.2, label="exact")
        if reference is not None:
            rt, ri = reference
            ax.semilogy(rt, np.maximum(ri, 1e-16), lw=0.8, ls="--", label="plane wave")
            ax.legend(frameon=False)
        ax.set_xlabel(r"$\theta$ (rad)")
        ax.set_ylabel(r"$I(\theta)$ (sr$^{-1}$)")
        return _save(fig, path)


def plot_bragg(path, orders, probabilities, exists) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(orders))
        colors = ["C0" if e else "0.6" for e in exists]
        ax.bar(x, probabilities, color=colors)
        ax.set_xticks(x, [",".join(str(v) for v in m) for m in orders], rotation=90, fontsize=6)
        ax.set_ylabel(r"$p^{[m]}$")
        return _save(fig, path)


def plot_ensemble(path, theta, coherent, incoherent) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(theta, np.maximum(coherent, 1e-16), label="coherent")
        ax.semilogy(theta, np.full_like(theta, incoherent), label="incoherent")
        ax.set_xlabel(r"$\theta$ (rad)")
        ax.set_ylabel(r"$I$ (sr$^{-1}$)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_sweep(path, x, columns: dict, xlabel: str) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name, y in columns.items():
            ax.plot(x, y, "o-", ms=3, label=name)
        ax.set_xlabel(xlabel)
        ax.legend(frameon=False)
        return _save(fig, path)

"""Static figures written next to the CSV/JSON outputs of a run."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_GOLDEN = (math.sqrt(5) - 1.0) / 2.0
_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


def _figure(width=5.0, ncols=1):
    fig, axes = plt.subplots(1, ncols, figsize=(width * ncols, width * _GOLDEN))
    return fig, axes


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_training(steps: list, path, title: str = "training"):
    """Per-step loss (log scale) and learning rate side by side."""
    with plt.rc_context(_STYLE):
        fig, (ax_loss, ax_lr) = _figure(ncols=2)
        x = [s["step"] for s in steps]
        ax_loss.plot(x, [s["loss"] for s in steps], lw=0.8)
        ax_loss.set_xlabel("step")
        ax_loss.set_ylabel("loss")
        if steps and min(s["loss"] for s in steps) > 0:
            ax_loss.set_yscale("log")
        ax_loss.set_title(title)
        ax_lr.plot(x, [s["lr"] for s in steps], lw=0.8, color="tab:orange")
        ax_lr.set_xlabel("step")
        ax_lr.set_ylabel("learning rate")
        _save(fig, path)


def plot_loss_comparison(curves: dict, path):
    """Several per-step loss curves on one axis, keyed by label."""
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        for label, losses in curves.items():
            ax.plot(range(len(losses)), losses, lw=0.8, label=label)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_roc(points, path, fpr_target: float | None = None):
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    with plt.rc_context(_STYLE):
        fig, ax = _figure(width=4.0)
        ax.step(fpr, tpr, where="post", lw=1.0)
        ax.plot([0, 1], [0, 1], ls=":", color="grey", lw=0.8)
        if fpr_target is not None:
            ax.axvline(fpr_target, ls="--", color="tab:red", lw=0.8)
        ax.set_xlabel("false positive rate (APCER)")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        _save(fig, path)


def plot_slope(taus, errors, path, slope: float, label: str = "discrepancy"):
    """Log-log error against tau with the fitted slope in the legend."""
    with plt.rc_context(_STYLE):
        fig, ax = _figure(width=4.0)
        ax.loglog(taus, errors, "o-", ms=3, lw=0.8, label=f"{label} (slope {slope:.3f})")
        ref = [errors[-1] * (t / taus[-1]) ** 2 for t in taus]
        ax.loglog(taus, ref, ls=":", color="grey", lw=0.8, label="tau^2 reference")
        ax.set_xlabel("tau")
        ax.set_ylabel(label)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_sweep(rows: list, path, metric: str = "acer"):
    """Metric against training-data ratio, one line per (d_fused, n_qubits) cell."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((int(r["d_fused"]), int(r["nq"])), []).append(
            (float(r["ratio"]), float(r[metric])))
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        for (d, nq), pts in sorted(groups.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", ms=3, lw=0.8,
                    label=f"D={d}, Nq={nq}")
        ax.set_xlabel("training data ratio")
        ax.set_ylabel(metric)
        ax.legend(frameon=False, fontsize=7)
        _save(fig, path)

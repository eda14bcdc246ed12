"""Report figures rendered next to the delimited outputs.

All figures are written as PNG with fixed metadata so identical runs produce
identical bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "fairprice"}}
_GROUP_COLORS = {0: "#d62728", 1: "#1f77b4"}


def prediction_distribution(pred, s_binary, path, title="Prediction distribution by group"):
    """Overlaid per-group histograms of the model scores."""
    pred = np.asarray(pred, dtype=float)
    s_binary = np.asarray(s_binary)
    fig, ax = plt.subplots(figsize=(6, 4))
    edges = np.histogram_bin_edges(pred, bins=40)
    for group in (0, 1):
        ax.hist(
            pred[s_binary == group],
            bins=edges,
            alpha=0.55,
            density=True,
            color=_GROUP_COLORS[group],
            label=f"S={group}",
        )
    ax.set_xlabel("prediction")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def training_trace(rows, path):
    """Task loss and penalty value per epoch."""
    epochs = [r["epoch"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r["task_loss"] for r in rows], color="#1f77b4")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("task loss")
    ax2.plot(epochs, [r["penalty"] for r in rows], color="#d62728")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("penalty")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def _grouped(rows, keys):
    out = {}
    for row in rows:
        out.setdefault(tuple(row[k] for k in keys), []).append(row)
    return out


def sweep_tradeoff(rows, path, task="binary"):
    """Four panels: performance against fairness, then the dependence of the
    components and predictions on lambda, one curve per architecture."""
    rows = [r for r in rows if r.get("status", "ok") == "ok"]
    perf_key, fair_key = ("acc", "p_rule") if task == "binary" else ("mse", "fair_quant")
    panels = [
        (fair_key, perf_key),
        ("lambda", "hgr_c_s"),
        ("lambda", "hgr_yhat_c"),
        ("lambda", "hgr_yhat_g"),
    ]
    fig, axes = plt.subplots(1, 4, figsize=(16, 3.6))
    colors = {"autoencoder": "#1f77b4", "two-stage": "#d62728"}
    for ax, (xk, yk) in zip(axes, panels):
        for arch, arch_rows in sorted(_grouped(rows, ["arch"]).items()):
            pts = [
                (r[xk], r[yk])
                for r in arch_rows
                if r.get(xk) is not None and r.get(yk) is not None
            ]
            if not pts:
                continue
            pts.sort()
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            ax.scatter(xs, ys, s=14, alpha=0.7, color=colors.get(arch[0], None), label=arch[0])
            # median curve over repeated x values
            med = {}
            for x, yv in pts:
                med.setdefault(x, []).append(yv)
            mx = sorted(med)
            ax.plot(mx, [float(np.median(med[x])) for x in mx],
                    color=colors.get(arch[0], None), linewidth=1.2)
        ax.set_xlabel(xk)
        ax.set_ylabel(yk)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)

"""Report figures written next to the tabular CLI output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def cost_figure(report, path, top=20):
    """Per-layer FLOPs (bars) and params (line) for the heaviest layers."""
    rows = sorted((r for r in report.layers if r.flops or r.params), key=lambda r: -r.flops)[:top]
    fig, ax = plt.subplots(figsize=(10, 4.5))
    ids = [r.id for r in rows]
    ax.bar(ids, [r.flops / 1e6 for r in rows], color="tab:blue")
    ax.set_ylabel("MFLOPs (MAC)")
    ax.tick_params(axis="x", rotation=70, labelsize=7)
    ax2 = ax.twinx()
    ax2.plot(ids, [r.params / 1e3 for r in rows], "o-", color="tab:orange")
    ax2.set_ylabel("K params")
    ax.set_title(f"{report.model}: {report.params / 1e6:.3f}M params, {report.flops / 1e9:.3f}G FLOPs")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def training_figure(history, path):
    epochs = [e["epoch"] for e in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [e["train_loss"] for e in history], label="train loss", color="tab:red")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [e["train_accuracy"] for e in history], "--", label="train acc")
    if "val_accuracy" in history[0]:
        ax2.plot(epochs, [e["val_accuracy"] for e in history], label="val acc")
    ax2.set_ylim(0, 1.02)
    ax2.set_ylabel("accuracy")
    ax2.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def pr_figure(curves, path, class_names=None, max_classes=12):
    """Precision/recall curves of the classes with the most ground truth."""
    shown = sorted((c for c in curves.items() if c[1].num_gt), key=lambda kv: -kv[1].num_gt)[:max_classes]
    fig, ax = plt.subplots(figsize=(6, 5))
    for cid, c in shown:
        name = class_names[cid] if class_names else str(cid)
        ax.step(c.recall, c.precision, where="post", label=f"{name} AP={c.ap:.3f}")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)

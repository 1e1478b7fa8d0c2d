"""Figure rendering for the CLI report paths.

Everything draws through the Agg backend and writes straight to a file, so
reports work on headless machines.  Figures are a visual companion to the
CSVs the commands emit; nothing here feeds back into the numerics.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def save_reduction_curves(table, batches, path) -> None:
    """FLOP-reduction fraction vs batch size, one line per backbone.

    ``table`` is a list of ReductionRow; batches below a row's threshold
    plot as gaps (the rewrite costs more there, nothing is saved).
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for row in table:
        ys = [
            None if row.reductions[b] is None else 100.0 * row.reductions[b]
            for b in batches
        ]
        ax.plot(batches, ys, marker="o", label=f"{row.name} (d={row.d})")
        ax.axvline(row.threshold, linestyle=":", linewidth=0.8, color="grey")
    ax.set_xscale("log", base=2)
    ax.set_xticks(list(batches))
    ax.set_xticklabels([str(b) for b in batches])
    ax.set_xlabel("batch size b")
    ax.set_ylabel("regularizer FLOPs saved (%)")
    ax.set_title("Sample-agnostic rewrite: cost reduction vs batch")
    ax.grid(True, linewidth=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_history_curves(history, path) -> None:
    """Training loss / val accuracy / penalty value across epochs."""
    epochs = [row.epoch for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax1.plot(epochs, [row.train_loss for row in history], label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1b = ax1.twinx()
    ax1b.plot(epochs, [row.val_acc for row in history], color="tab:green", label="val acc")
    ax1b.set_ylabel("val accuracy")
    ax1b.set_ylim(0.0, 1.05)
    ax1.set_title("optimization")
    ax2.plot(epochs, [row.rsr_sum for row in history], color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("sum of pairwise penalty terms")
    ax2.set_title("expert diversity penalty")
    ax2.grid(True, linewidth=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_bars(rows, path) -> None:
    """Mean validation accuracy per ablation variant."""
    names = [row.variant for row in rows]
    accs = [100.0 * row.mean_val_acc for row in rows]
    fig, ax = plt.subplots(figsize=(7.0, 3.8))
    bars = ax.bar(range(len(names)), accs, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("mean val accuracy (%)")
    ax.set_ylim(0.0, 105.0)
    ax.bar_label(bars, fmt="%.1f", padding=2, fontsize=8)
    ax.set_title("variant ablation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

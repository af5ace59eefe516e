"""Report rendering: delimited tables plus matplotlib figures on disk.

Everything here is presentation; the numbers come from the training and
evaluation routines.  Figures are written with the Agg backend so reports
render identically on headless machines.
"""

from __future__ import annotations

import csv
import os
import time

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .data import synth_shapes  # noqa: E402
from .network import NetworkConfig, expected_param_count  # noqa: E402
from .training import RunConfig, train_classifier  # noqa: E402

__all__ = ["save_loss_curve", "run_ablation", "ABLATION_COLUMNS"]

ABLATION_COLUMNS = (
    "max_order",
    "channels",
    "epochs",
    "train_loss",
    "train_acc",
    "test_acc",
    "param_count",
    "wall_s",
)


def save_loss_curve(records: list[dict], path: str) -> None:
    """Plot per-epoch training loss (and accuracy when present) to a file."""
    train = [r for r in records if r["split"] == "train"]
    if not train:
        return
    epochs = [r["epoch"] for r in train]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r["loss"] for r in train], marker="o", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["metric"] for r in train], color="tab:orange", marker="s", label="metric")
    ax2.set_ylabel("metric")
    ax.set_title("training curve")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def run_ablation(
    out_dir: str,
    orders: tuple[int, ...] = (2, 4),
    channels: int = 8,
    train_per_class: int = 16,
    test_per_class: int = 16,
    points: int = 32,
    epochs: int = 5,
    lr: float = 0.01,
    seed: int = 0,
    threads: int = 1,
    k_nn: int = 0,
) -> list[dict]:
    """Train one classifier per representation order on the synthetic shapes
    under the so3/so3 protocol and emit a comparison table + figure.

    Purely mechanical: no accuracy ordering is asserted anywhere.
    """
    os.makedirs(out_dir, exist_ok=True)
    train_ds = synth_shapes(seed, train_per_class, points, split="train")
    test_ds = synth_shapes(seed + 1, test_per_class, points, split="test")
    rows = []
    for order in orders:
        cfg = NetworkConfig(
            max_order=order,
            channels=channels,
            k_nn=k_nn,
            use_relu=True,
            use_t2mix=True,
            head_widths=(32, 4),
            seed=seed,
        )
        run = RunConfig(
            network=cfg,
            epochs=epochs,
            batch_size=32,
            lr=lr,
            optimizer="adam",
            aug_train="so3",
            aug_test="so3",
            seed=seed,
            threads=threads,
        )
        t0 = time.perf_counter()
        _, records, test_acc = train_classifier(train_ds, run, test_ds=test_ds)
        last_train = [r for r in records if r["split"] == "train"][-1]
        rows.append(
            {
                "max_order": order,
                "channels": channels,
                "epochs": epochs,
                "train_loss": round(last_train["loss"], 6),
                "train_acc": round(last_train["metric"], 4),
                "test_acc": round(test_acc, 4),
                "param_count": expected_param_count(cfg),
                "wall_s": round(time.perf_counter() - t0, 2),
            }
        )
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(ABLATION_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    labels = [f"K={r['max_order']}" for r in rows]
    ax1.bar(labels, [r["test_acc"] for r in rows], color="tab:blue")
    ax1.set_ylim(0.0, 1.0)
    ax1.set_ylabel("test accuracy (so3/so3)")
    ax1.set_title("representation order comparison")
    ax2.bar(labels, [r["param_count"] for r in rows], color="tab:gray")
    ax2.set_ylabel("parameter count")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "ablation.png"), dpi=120)
    plt.close(fig)
    return rows

"""PNG figures for training runs and benchmark reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def training_curves(records: list[dict], path) -> Path:
    """Task/ranking loss and AP per epoch, train vs validation."""
    path = Path(path)
    fig, (ax_loss, ax_ap) = plt.subplots(1, 2, figsize=(9, 3.5))
    for split, style in (("train", "-"), ("val", "--")):
        rows = [r for r in records if r.get("split") == split]
        if not rows:
            continue
        ep = [r["epoch"] for r in rows]
        ax_loss.plot(ep, [r["loss_task"] for r in rows], style, label=f"{split} task")
        if split == "train" and any(r["loss_rank"] for r in rows):
            ax_loss.plot(ep, [r["loss_rank"] for r in rows], ":", label="train ranking")
        ax_ap.plot(ep, [r["ap"] for r in rows], style, marker="o", ms=3, label=split)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss per pair")
    ax_loss.legend(fontsize=8)
    ax_ap.set_xlabel("epoch")
    ax_ap.set_ylabel("AP")
    ax_ap.set_ylim(0, 1.02)
    ax_ap.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def throughput_bars(report, path) -> Path:
    """Edges/sec relative to truncation, one bar per strategy."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = [r["strategy"] for r in report.rows]
    pct = [r["rel_pct"] for r in report.rows]
    bars = ax.bar(names, pct, color="#4c72b0")
    ax.bar_label(bars, [f"{p:.0f}%" for p in pct], fontsize=8)
    ax.axhline(100, color="grey", lw=0.8, ls="--")
    ax.set_ylabel("throughput vs truncation (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sampling_scaling(report, path) -> Path:
    """Sampling-only cost per call against history length (log-log)."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for s in dict.fromkeys(m["strategy"] for m in report.micro):
        pts = sorted((m["H"], m["us_per_call"]) for m in report.micro if m["strategy"] == s)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=s)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("|H| (history length)")
    ax.set_ylabel("us per sampling call")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

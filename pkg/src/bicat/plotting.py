"""PNG figures rendered next to the CSV outputs.

Figures use the non-interactive Agg backend and carry no timestamp
metadata, so reruns produce the same bytes on the same matplotlib build.
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io_utils import atomic_write_bytes  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_loss_trace(trace, path, title="training loss"):
    """One line per ``loss_*`` column of a per-epoch trace."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if trace:
        epochs = [row["epoch"] for row in trace]
        for key in sorted(k for k in trace[0] if k.startswith("loss_")):
            ax.plot(epochs, [row[key] for row in trace], marker="o", label=key[5:])
        ax.legend()
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_length_histogram(histogram, path):
    """Bar chart of sequence-length counts (``{length: users}``)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    lengths = sorted(histogram)
    ax.bar(lengths, [histogram[L] for L in lengths], width=0.9)
    ax.set_xlabel("sequence length")
    ax.set_ylabel("users")
    fig.tight_layout()
    _save(fig, path)


def plot_bucket_metrics(report, path, metrics=("recall@5", "ndcg@5", "mrr")):
    """Grouped bars of selected metrics per length bucket."""
    fig, ax = plt.subplots(figsize=(7, 4))
    buckets = list(report.buckets)
    metrics = [m for m in metrics if m in report.overall]
    width = 0.8 / max(len(metrics), 1)
    for j, m in enumerate(metrics):
        vals = [report.buckets[b].get(m) or 0.0 for b in buckets]
        ax.bar([i + j * width for i in range(len(buckets))], vals, width=width, label=m)
    ax.set_xticks([i + width * (len(metrics) - 1) / 2 for i in range(len(buckets))])
    ax.set_xticklabels([f"{b}\n(n={report.counts[b]})" for b in buckets])
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)

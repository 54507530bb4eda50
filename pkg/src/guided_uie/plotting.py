"""Figures written next to the CSV reports."""

from __future__ import annotations

import functools
import threading

import numpy as np
from matplotlib.figure import Figure

# Figure objects avoid pyplot's global state, but text layout (mathtext) is still
# not thread-safe, so rendering is serialized.
_LOCK = threading.Lock()


def _serialized(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with _LOCK:
            return fn(*args, **kwargs)

    return wrapper

_SAVE_KW = dict(dpi=110, metadata={"Software": None})


@_serialized
def plot_trace(trace, path, title: str = "") -> None:
    """Loss and guidance-gradient norm against sampler step."""
    if not len(trace):
        return
    steps = [r.step for r in trace.records]
    fig = Figure(figsize=(6, 5))
    ax1, ax2 = fig.subplots(2, 1, sharex=True)
    ax1.plot(steps, [r.loss for r in trace.records], lw=1.2, color="tab:blue")
    ax1.set_ylabel("guidance loss")
    ax2.semilogy(steps, [max(r.grad_norm, 1e-300) for r in trace.records], lw=1.2, color="tab:red")
    ax2.set_ylabel("|g|")
    ax2.set_xlabel("step")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)


@_serialized
def plot_metrics(report, path) -> None:
    """Per-image UCIQE/UIQM of input vs output."""
    rows = [r for r in report.rows if r.status == "ok"]
    if not rows:
        return
    names = [r.image for r in rows]
    idx = np.arange(len(rows))
    fig = Figure(figsize=(max(6, 0.6 * len(rows) + 4), 3.5))
    axes = fig.subplots(1, 2)
    for ax, key in zip(axes, ("uciqe", "uiqm")):
        ax.bar(idx - 0.2, [getattr(r, f"input_{key}") or 0.0 for r in rows], 0.4, label="input", color="0.6")
        ax.bar(idx + 0.2, [getattr(r, key) for r in rows], 0.4, label="output", color="tab:blue")
        ax.set_title(key.upper())
        ax.set_xticks(idx)
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)


@_serialized
def plot_ablation(labels, aggregates, path, title: str = "") -> None:
    """One panel per aggregate metric across ablation configurations."""
    keys = [k for k in ("psnr", "ssim", "uciqe", "uiqm") if any(a.get(k) is not None for a in aggregates)]
    if not keys:
        return
    fig = Figure(figsize=(3.2 * len(keys), 3.2))
    axes = fig.subplots(1, len(keys), squeeze=False)
    for ax, key in zip(axes[0], keys):
        vals = [a.get(key) if a.get(key) is not None else np.nan for a in aggregates]
        ax.bar(range(len(labels)), vals, color="tab:green")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_title(key.upper())
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)

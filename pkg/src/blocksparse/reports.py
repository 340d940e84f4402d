"""Figure rendering for benchmark sweeps, schedules, and training logs.

Figures are written next to the delimited output files; uses the Agg
backend so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import BenchRecord
from .pruner import PruneReport, SparsitySchedule, target_sparsity
from .trainer import TrainLog


def save_bench_figure(records: list[BenchRecord], path) -> None:
    """Speedup vs sparsity, one line per (size, block) shape."""
    fig, ax = plt.subplots(figsize=(6, 4))
    shapes = sorted({(r.M, r.N, r.K, r.b) for r in records})
    for shape in shapes:
        pts = sorted(
            (r.sparsity, r.speedup) for r in records
            if (r.M, r.N, r.K, r.b) == shape
        )
        label = f"{shape[0]}x{shape[1]}x{shape[2]}, b={shape[3]}"
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("block sparsity")
    ax.set_ylabel("speedup vs full-grid baseline")
    ax.set_title("Block-sparse kernel speedup")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_schedule_figure(
    sched: SparsitySchedule, path, reports: list[PruneReport] | None = None
) -> None:
    """Target-sparsity curve, with regrown ratios when a simulation ran."""
    iters = list(range(0, sched.total_iters + 1, max(1, sched.total_iters // 400)))
    if iters[-1] != sched.total_iters:
        iters.append(sched.total_iters)
    targets = [target_sparsity(i, sched) for i in iters]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iters, targets, label="target sparsity")
    ax.set_xlabel("iteration")
    ax.set_ylabel("sparsity")
    ax.set_ylim(-0.02, 1.02)
    if reports:
        ax2 = ax.twinx()
        ax2.plot([r.iteration for r in reports], [r.regrown_ratio for r in reports],
                 color="tab:red", marker=".", lw=0.8, label="regrown ratio")
        ax2.set_ylabel("regrown block ratio", color="tab:red")
        ax2.tick_params(axis="y", labelcolor="tab:red")
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title("Sparsity schedule")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_training_figure(log: TrainLog, path) -> None:
    """Loss, per-layer sparsity, per-iteration time, and FLOPs in one sheet."""
    recs = log.records
    iters = [r.iteration for r in recs]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))

    ax = axes[0][0]
    ax.plot(iters, [r.loss for r in recs], lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")

    ax = axes[0][1]
    n_layers = len(recs[0].layer_sparsity) if recs else 0
    for li in range(n_layers):
        ax.plot(iters, [r.layer_sparsity[li] for r in recs], label=f"layer {li}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("achieved block sparsity")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)

    ax = axes[1][0]
    ax.plot(iters, [r.wall_ms for r in recs], lw=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("wall time per iteration (ms)")

    ax = axes[1][1]
    per_iter = [recs[0].flops_cum] + [
        b.flops_cum - a.flops_cum for a, b in zip(recs, recs[1:])]
    ax.plot(iters, per_iter, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("FLOPs per iteration")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

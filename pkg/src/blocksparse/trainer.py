"""Toy-scale training loop with scheduled prune-and-grow sparsification.

The model is a stack of gated MLP blocks. Each iteration runs forward,
loss, backward, and a plain SGD step on the dense masters; masks are
regenerated every ``step_size`` iterations from the current weights and
gradients, and (re-)applied every iteration so inactive blocks stay zero.
A configurable number of blocks at one end of the stack is exempt from
sparsification.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import bcsc, pruner
from .kernels import flops, silu
from .mlp import MlpActivations, SparseMlp, mlp_backward, mlp_forward
from .pruner import PruneReport, SparsitySchedule, generate_masks, target_sparsity

LOG_CSV_FIELDS = ("iter", "loss", "flops", "wall_ms", "refresh")


class DivergenceError(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass
class TrainConfig:
    layers: int = 2
    embed_dim: int = 32
    hidden_dim: int = 32
    block_size: int = 8
    schedule: SparsitySchedule = field(default_factory=SparsitySchedule)
    dense_layers: int = 0
    dense_side: str = "right"
    lr: float = 0.1
    batch_size: int = 32
    alpha: float = 1.0
    beta: float = 0.0
    seed: int = 0
    task: str = "regression"
    teacher_hidden: int = 8
    teacher_in_dims: int | None = None
    teacher_out_dims: int | None = None
    distractor_scale: float = 1.0
    noise_std: float = 0.05
    clip_norm: float = 1.0
    lr_final_frac: float = 1.0
    sparsify: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0 <= self.dense_layers <= self.layers:
            raise ValueError("dense_layers must be in [0, layers]")
        if self.dense_side not in ("right", "left"):
            raise ValueError(f"dense_side must be 'right' or 'left', got {self.dense_side!r}")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("loss weights must be nonnegative with alpha + beta > 0")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (or null to disable)")
        if not 0.0 <= self.lr_final_frac <= 1.0:
            raise ValueError("lr_final_frac must be in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        data = dict(raw)
        sched_raw = data.pop("schedule", {})
        if not isinstance(sched_raw, dict):
            raise ValueError("field 'schedule' must be a table/object")
        try:
            sched = SparsitySchedule(**sched_raw)
        except TypeError as exc:
            raise ValueError(f"bad schedule field: {exc}") from exc
        try:
            return cls(schedule=sched, **data)
        except TypeError as exc:
            raise ValueError(f"bad config field: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    layer_sparsity: tuple[float, ...]
    flops_cum: int
    wall_ms: float
    refresh: bool


@dataclass
class TrainLog:
    records: list[IterationRecord] = field(default_factory=list)
    prune_reports: list[PruneReport] = field(default_factory=list)
    config: TrainConfig | None = None

    def csv_header(self) -> str:
        n = len(self.records[0].layer_sparsity) if self.records else 0
        cols = ["iter", "loss"] + [f"sparsity_l{i}" for i in range(n)] + [
            "flops", "wall_ms", "refresh"]
        return ",".join(cols)

    def write_csv(self, path, metadata: dict | None = None) -> None:
        with open(path, "w") as fh:
            for key, val in (metadata or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write(self.csv_header() + "\n")
            for r in self.records:
                spars = ",".join(f"{s:.6g}" for s in r.layer_sparsity)
                fh.write(
                    f"{r.iteration},{r.loss:.10g},{spars},{r.flops_cum},"
                    f"{r.wall_ms:.4f},{int(r.refresh)}\n"
                )

    def write_prune_csv(self, path, metadata: dict | None = None) -> None:
        with open(path, "w") as fh:
            for key, val in (metadata or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write(pruner.REPORT_CSV_HEADER + "\n")
            for rep in self.prune_reports:
                fh.write(rep.csv_row() + "\n")

    def summary(self) -> dict:
        out = {
            "iterations": len(self.records),
            "final_loss": self.records[-1].loss if self.records else None,
            "final_sparsity": list(self.records[-1].layer_sparsity) if self.records else [],
            "total_flops": self.records[-1].flops_cum if self.records else 0,
            "total_wall_ms": sum(r.wall_ms for r in self.records),
            "refresh_count": sum(1 for r in self.records if r.refresh),
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


class RegressionTask:
    """Targets y = A silu(B x) from a fixed random teacher, plus noise.

    The teacher reads the first ``in_dims`` input features and writes the
    first ``out_dims`` target features; the remaining inputs are distractor
    features, optionally drawn at a smaller scale. Gaussian observation
    noise covers every target dimension.
    """

    _OUT_GAIN = 1.5  # teacher output scale relative to He magnitude

    def __init__(self, embed_dim: int, teacher_hidden: int, noise_std: float,
                 seed: int, in_dims: int | None = None,
                 out_dims: int | None = None, distractor_scale: float = 1.0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
        self.embed_dim = embed_dim
        self.in_dims = embed_dim if in_dims is None else in_dims
        self.out_dims = embed_dim if out_dims is None else out_dims
        if not 1 <= self.in_dims <= embed_dim or not 1 <= self.out_dims <= embed_dim:
            raise ValueError("teacher support dims must be in [1, embed_dim]")
        self.w_in = (rng.standard_normal((self.in_dims, teacher_hidden))
                     * np.sqrt(1.0 / self.in_dims)).astype(np.float32)
        self.w_out = (rng.standard_normal((teacher_hidden, self.out_dims))
                      * self._OUT_GAIN * np.sqrt(2.0 / teacher_hidden)).astype(np.float32)
        self.noise_std = np.float32(noise_std)
        self.scales = np.full(embed_dim, distractor_scale, dtype=np.float32)
        self.scales[:self.in_dims] = 1.0
        # observation noise follows the same attenuation as distractor inputs
        self.noise_scales = self.noise_std * np.full(
            embed_dim, distractor_scale, dtype=np.float32)
        self.noise_scales[:self.out_dims] = self.noise_std
        self._rng = rng

    def next_batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        x = self._rng.standard_normal((n, self.embed_dim)).astype(np.float32)
        x *= self.scales
        y = np.zeros((n, self.embed_dim), dtype=np.float32)
        y[:, :self.out_dims] = silu(x[:, :self.in_dims] @ self.w_in) @ self.w_out
        if self.noise_std > 0:
            y += self.noise_scales * self._rng.standard_normal(y.shape).astype(np.float32)
        return x, y


class ClassificationTask:
    """Labels are the argmax of a fixed random teacher's logits."""

    def __init__(self, embed_dim: int, teacher_hidden: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A55]))
        self.w_in = (rng.standard_normal((embed_dim, teacher_hidden))
                     * np.sqrt(1.0 / embed_dim)).astype(np.float32)
        self.w_out = (rng.standard_normal((teacher_hidden, embed_dim))
                      * np.sqrt(2.0 / teacher_hidden)).astype(np.float32)
        self._rng = rng

    def next_batch(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self._rng.standard_normal((n, self.w_in.shape[0])).astype(np.float32)
        logits = silu(x @ self.w_in) @ self.w_out
        return x, np.argmax(logits, axis=1), logits


def make_task(config: TrainConfig):
    if config.task == "regression":
        return RegressionTask(
            config.embed_dim, config.teacher_hidden, config.noise_std,
            config.seed, in_dims=config.teacher_in_dims,
            out_dims=config.teacher_out_dims,
            distractor_scale=config.distractor_scale,
        )
    return ClassificationTask(config.embed_dim, config.teacher_hidden, config.seed)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def distill_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    beta: float,
) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy plus KL(teacher || student); returns gradient
    with respect to the student logits (teacher logits carry no gradient).
    """
    if student_logits.shape != teacher_logits.shape:
        raise ValueError("student and teacher logits must have matching shapes")
    z = student_logits.astype(np.float64)
    n = z.shape[0]
    ls = _log_softmax(z)
    q = np.exp(ls)
    onehot = np.zeros_like(q)
    onehot[np.arange(n), targets] = 1.0

    lt = _log_softmax(teacher_logits.astype(np.float64))
    p = np.exp(lt)

    ce = -float(ls[np.arange(n), targets].mean())
    kl = float((p * (lt - ls)).sum(axis=1).mean())
    grad = (alpha * (q - onehot) + beta * (q - p)) / n
    return alpha * ce + beta * kl, grad.astype(np.float32)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    loss = 0.5 * float(np.mean(diff.astype(np.float64) ** 2))
    return loss, diff / np.float32(diff.size)


def sgd_step(weights: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """In-place w <- w - lr * g on a dense master."""
    weights -= np.float32(lr) * grad


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale the whole gradient list so its global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = np.float32(max_norm / norm)
    return [g * scale for g in grads]


class MlpStack:
    """Sequentially composed gated MLP blocks with per-block sparsify flags."""

    def __init__(self, config: TrainConfig, rng: np.random.Generator):
        self.config = config
        self.blocks = [
            SparseMlp.create(config.embed_dim, config.hidden_dim,
                             config.block_size, rng)
            for _ in range(config.layers)
        ]
        self.sparsifiable = _sparsifiable_flags(
            config.layers, config.dense_layers, config.dense_side)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[MlpActivations]]:
        acts = []
        for blk in self.blocks:
            x, a = mlp_forward(x, blk)
            acts.append(a)
        return x, acts

    def backward(self, dy: np.ndarray, acts: list[MlpActivations]):
        grads = [None] * len(self.blocks)
        for i in range(len(self.blocks) - 1, -1, -1):
            dy, dg, du, dd = mlp_backward(dy, acts[i], self.blocks[i])
            grads[i] = (dg, du, dd)
        return grads, dy


def _sparsifiable_flags(layers: int, dense_layers: int, side: str) -> list[bool]:
    flags = [True] * layers
    if dense_layers:
        exempt = range(layers - dense_layers, layers) if side == "right" \
            else range(dense_layers)
        for i in exempt:
            flags[i] = False
    return flags


def train(config: TrainConfig, task=None) -> tuple[TrainLog, MlpStack]:
    """Run the full loop; returns the log and the trained model.

    Per iteration: forward, loss, backward, SGD step; on refresh iterations
    (i % step_size == 0, sparsify mode only) new masks are generated at the
    scheduled target sparsity and applied with regrown blocks zeroed; on all
    other iterations the existing masks are re-applied, zeroing only
    inactive blocks. Non-sparsifiable blocks always run with a full grid.
    """
    ss = np.random.SeedSequence(config.seed)
    init_rng, _ = [np.random.default_rng(s) for s in ss.spawn(2)]
    stack = MlpStack(config, init_rng)
    if task is None:
        task = make_task(config)
    sched = config.schedule
    log = TrainLog(config=config)
    flops_total = 0
    e, h, b = config.embed_dim, config.hidden_dim, config.block_size
    m_dim = config.batch_size

    for i in range(sched.total_iters):
        t0 = time.perf_counter()

        # FLOPs are accounted from the caches the kernels actually use
        iter_flops = 0
        for blk in stack.blocks:
            for mat, (rows, cols) in zip(blk.matrices(), ((e, h), (e, h), (h, e))):
                nnzb = mat.cache.nnzb
                # forward product + mirrored backward product through W^T
                iter_flops += 2 * flops(m_dim, cols, rows, nnzb, b)[1]
                # dense weight gradient
                iter_flops += 2 * m_dim * rows * cols
        flops_total += iter_flops

        if config.task == "regression":
            x, y_t = task.next_batch(config.batch_size)
            out, acts = stack.forward(x)
            loss, dout = mse_loss(out, y_t)
        else:
            x, labels, t_logits = task.next_batch(config.batch_size)
            out, acts = stack.forward(x)
            loss, dout = distill_loss(out, t_logits, labels, config.alpha, config.beta)

        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged to {loss} at iteration {i}")

        grads, _ = stack.backward(dout, acts)
        flat = [g for g3 in grads for g in g3]
        if config.clip_norm is not None:
            flat = clip_gradients(flat, config.clip_norm)
            grads = [tuple(flat[i * 3:(i + 1) * 3]) for i in range(len(grads))]
        # linear decay from lr to lr * lr_final_frac over the run
        lr_i = config.lr * (1.0 - (1.0 - config.lr_final_frac) * i / sched.total_iters)
        for blk, g3 in zip(stack.blocks, grads):
            for mat, g in zip(blk.matrices(), g3):
                sgd_step(mat.dense, g, lr_i)

        refresh = False
        if config.sparsify:
            refresh = i % sched.step_size == 0
            if refresh:
                s_i = target_sparsity(i, sched)
                for blk, g3, ok in zip(stack.blocks, grads, stack.sparsifiable):
                    if not ok:
                        continue
                    for mat, g in zip(blk.matrices(), g3):
                        mask, report = generate_masks(mat.dense, g, b, s_i, iteration=i)
                        mat.mask = mask
                        log.prune_reports.append(report)
            for blk, ok in zip(stack.blocks, stack.sparsifiable):
                for mat in blk.matrices():
                    if ok:
                        mat.dense, mat.cache = pruner.apply_mask(
                            mat.dense, mat.mask, b, zero_regrown=refresh)
                    else:
                        mat.rebuild_cache()
        else:
            for blk in stack.blocks:
                for mat in blk.matrices():
                    mat.rebuild_cache()

        wall_ms = (time.perf_counter() - t0) * 1e3
        spars = tuple(
            blk.achieved_sparsity() if (config.sparsify and ok) else 0.0
            for blk, ok in zip(stack.blocks, stack.sparsifiable)
        )
        log.records.append(IterationRecord(
            iteration=i, loss=loss, layer_sparsity=spars,
            flops_cum=flops_total, wall_ms=wall_ms, refresh=refresh,
        ))
    return log, stack


def save_model(stack: MlpStack, outdir) -> list[str]:
    """Write each projection's BCSC cache; returns the file names."""
    import os
    names = []
    for li, blk in enumerate(stack.blocks):
        for tag, mat in zip(("gate", "up", "down"), blk.matrices()):
            name = f"layer{li}_{tag}.bcsc"
            bcsc.save(mat.cache, os.path.join(outdir, name))
            names.append(name)
    return names

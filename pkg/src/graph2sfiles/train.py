"""Teacher-forced training with cross-entropy, Adam and best-validation checkpointing."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .dataset import Batch, Example, make_batches
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import Graph2Sfiles, ModelConfig
from .numerics import Tensor

# Grid-search winners per encoder architecture.
FULL_DEFAULTS = {
    "gatv2": {"batch_size": 128, "learning_rate": 2e-3, "layers": 4},
    "graphconv": {"batch_size": 64, "learning_rate": 1e-3, "layers": 6},
    "graph_transformer": {"batch_size": 64, "learning_rate": 1e-3, "layers": 6},
    "combined": {"batch_size": 64, "learning_rate": 1e-3, "layers": 6},
}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    keep_best: bool = True
    bucket: int = 4

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.bucket < 0:
            raise ValueError("bucket must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def full_config(arch: str = "combined") -> tuple[ModelConfig, TrainConfig]:
    """Full-size settings (width 128, 8 heads) with per-architecture depth, batch size and rate."""
    d = FULL_DEFAULTS[arch]
    enc = EncoderConfig(arch=arch, layers=d["layers"], d_enc=128, heads=8, dropout=0.1)
    dec = DecoderConfig(layers=d["layers"], d_dec=128, heads=8, ffn_dim=2048, dropout=0.1)
    return ModelConfig(enc, dec), TrainConfig(batch_size=d["batch_size"], learning_rate=d["learning_rate"], epochs=100)


def desk_config(arch: str = "combined", layers: int = 2, d: int = 64, heads: int = 4,
                ffn_dim: int = 256, dropout: float = 0.1) -> ModelConfig:
    """Small model used for CPU-scale experiments."""
    return ModelConfig(EncoderConfig(arch=arch, layers=layers, d_enc=d, heads=heads, dropout=dropout),
                       DecoderConfig(layers=layers, d_dec=d, heads=heads, ffn_dim=ffn_dim, dropout=dropout))


# ---------------------------------------------------------------- loss

def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean of -log softmax(logits)[target] over positions where ``mask`` is True.

    For a batch (B x T x V) each sequence is averaged over its own real
    positions first, so the batch loss is the mean of per-sample losses.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ValueError(f"mask {mask.shape} does not match targets {targets.shape}")
    if targets.ndim == 2:
        counts = mask.sum(axis=1)
        if np.any(counts == 0):
            raise ValueError("cross_entropy needs at least one unpadded position per sequence")
        weights = mask / counts[:, None] / len(counts)
    else:
        count = int(mask.sum())
        if count == 0:
            raise ValueError("cross_entropy needs at least one unpadded position")
        weights = mask / count
    picked = nm.take_last(nm.log_softmax(logits, axis=-1), targets)
    return nm.sum(picked * weights.astype(np.float64)) * -1.0


def token_stats(logits: np.ndarray, batch: Batch) -> tuple[int, int]:
    """(correct arg-max predictions, real label positions) for a teacher-forced batch."""
    m = batch.label_mask
    return int(((logits.argmax(-1) == batch.labels) & m).sum()), int(m.sum())


def teacher_forced_loss(model: Graph2Sfiles, batch: Batch, train: bool = False, rng=None) -> Tensor:
    """Decoder reads the ground-truth prefix and is scored on every next token."""
    logits = model.logits(batch.graphs, batch.inputs, train, rng)
    return cross_entropy(logits, batch.labels, batch.label_mask)


def teacher_forced_step(model: Graph2Sfiles, batch: Batch, train: bool = True, rng=None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and gradient of every parameter for one batch."""
    for p in model.parameters():
        p.grad = None
    loss = teacher_forced_loss(model, batch, train, rng)
    nm.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in model.params.items()}
    return loss.item(), grads


# ---------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip: float | None = 1.0):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the pre-clip global norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if not math.isfinite(norm):
            raise TrainingError("gradient norm is not finite")
        scale = self.clip / norm if self.clip is not None and norm > self.clip else 1.0
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


# ---------------------------------------------------------------- loop

@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.train_loss)

    def records(self, with_time: bool = True) -> list[dict]:
        out = []
        for i in range(len(self)):
            r = {"epoch": i + 1, "train_loss": self.train_loss[i], "val_loss": self.val_loss[i]}
            if with_time:
                r["seconds"] = self.seconds[i]
            out.append(r)
        return out

    def to_jsonl(self, with_time: bool = True) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records(with_time))


def evaluate_loss(model: Graph2Sfiles, examples: Sequence[Example], batch_size: int) -> float:
    """Mean per-sample cross-entropy in eval mode."""
    total, count = 0.0, 0
    with nm.no_grad():
        for b in make_batches(examples, batch_size, bucket=8):
            n = len(b.examples)
            total += teacher_forced_loss(model, b).item() * n
            count += n
    return total / count if count else float("nan")


def fit(model: Graph2Sfiles, train_set: Sequence[Example], val_set: Sequence[Example], cfg: TrainConfig,
        log: Callable[[dict], None] | None = None) -> TrainHistory:
    """Train ``model`` in place. With ``keep_best`` the parameters of the epoch
    with the lowest validation loss are restored at the end."""
    cfg.validate()
    if not train_set:
        raise TrainingError("training set is empty")
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.grad_clip)
    drop_rng = np.random.default_rng([cfg.seed, 2])
    hist = TrainHistory()
    best = (math.inf, None)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for batch in make_batches(train_set, cfg.batch_size, cfg.seed, epoch, cfg.bucket):
            loss, _ = teacher_forced_step(model, batch, True, drop_rng)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became {loss} in epoch {epoch + 1}")
            opt.step()
            n = len(batch.examples)
            total += loss * n
            count += n
        train_loss = total / count
        val_loss = evaluate_loss(model, val_set, cfg.batch_size) if val_set else train_loss
        if not math.isfinite(val_loss):
            raise TrainingError(f"validation loss became {val_loss} in epoch {epoch + 1}")
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.seconds.append(time.perf_counter() - t0)
        if val_loss < best[0]:
            best = (val_loss, model.copy_params())
            hist.best_epoch = epoch + 1
        if log is not None:
            log({"epoch": epoch + 1, "train_loss": train_loss, "val_loss": val_loss, "seconds": hist.seconds[-1]})
    if cfg.keep_best and best[1] is not None:
        model.set_params(best[1])
    return hist

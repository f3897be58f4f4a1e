"""Label assignment, weighted logistic losses, AdamW and the training loop."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import GroundTruthInstance, ObservationWindow
from .head import HeadOutput
from .model import BCGNN, ModelConfig
from .postprocess import tiou
from .tensor import NumericError, ParamStore, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BCGC"
CHECKPOINT_VERSION = 1
PROB_EPS = 1e-6


@dataclass
class LabelSet:
    b_s: np.ndarray  # [l_w]
    b_e: np.ndarray  # [l_w]
    b_c: np.ndarray  # [E]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.005
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


# ---------------------------------------------------------------- labels


def boundary_regions(instances: list[GroundTruthInstance]) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    starts, ends = [], []
    for g in instances:
        r = (g.t_end - g.t_start) / 10.0
        starts.append((g.t_start - r, g.t_start + r))
        ends.append((g.t_end - r, g.t_end + r))
    return starts, ends


def _in_regions(locs: np.ndarray, regions) -> np.ndarray:
    hit = np.zeros(len(locs), dtype=bool)
    for lo, hi in regions:
        hit |= (locs >= lo) & (locs <= hi)
    return hit


def assign_labels(instances: list[GroundTruthInstance], l_w: int, edges: np.ndarray) -> LabelSet:
    locs = np.arange(l_w, dtype=np.float64)
    start_r, end_r = boundary_regions(instances)
    b_s = _in_regions(locs, start_r)
    b_e = _in_regions(locs, end_r)
    b_c = np.zeros(len(edges), dtype=bool)
    if instances:
        ii, jj = edges[:, 0], edges[:, 1]
        candidates = b_s[ii] & b_e[jj]
        for k in np.flatnonzero(candidates):
            seg = (float(ii[k]), float(jj[k]))
            b_c[k] = any(tiou(seg, (g.t_start, g.t_end)) > 0.5 for g in instances)
    return LabelSet(b_s.astype(np.float32), b_e.astype(np.float32), b_c.astype(np.float32))


# ---------------------------------------------------------------- losses


def class_weights(b: np.ndarray) -> tuple[float, float]:
    n = len(b)
    pos = float(np.sum(b))
    neg = n - pos
    if pos == 0:
        return 0.0, 1.0
    if neg == 0:
        return 1.0, 0.0
    return n / pos, n / neg


def weighted_bl_loss(p: Tensor, b) -> Tensor:
    """-(1/N) sum[a+ b log p + a- (1-b) log(1-p)], a+ = N/sum(b), a- = N/sum(1-b).

    A class absent from ``b`` contributes nothing and the other weight is 1.
    Probabilities that float32 sigmoid rounded to exactly 0 or 1 are clamped to
    ``[PROB_EPS, 1 - PROB_EPS]`` before the log.
    """
    b = np.asarray(b, dtype=p.data.dtype).reshape(-1)
    if p.shape != b.shape or b.size == 0:
        raise ValueError(f"weighted_bl_loss: {p.shape} probabilities vs {b.shape} labels")
    if not np.all((p.data >= 0) & (p.data <= 1)):
        raise ValueError("weighted_bl_loss: probabilities must lie inside (0, 1)")
    p = T.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    a_pos, a_neg = class_weights(b)
    w_pos = (a_pos * b).astype(p.data.dtype)
    w_neg = (a_neg * (1 - b)).astype(p.data.dtype)
    terms = T.mul(T.log(p), w_pos) + T.mul(T.log(T.sub(1.0, p)), w_neg)
    return T.mul(T.sum(terms), -1.0 / b.size)


def boundary_sets(pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique start and end locations among the proposals."""
    return np.unique(pairs[:, 0]), np.unique(pairs[:, 1])


def total_loss(out: HeadOutput, labels: LabelSet) -> Tensor:
    s_idx, e_idx = boundary_sets(out.pairs)
    l_s = weighted_bl_loss(T.take(out.start_prob, s_idx), labels.b_s[s_idx])
    l_e = weighted_bl_loss(T.take(out.end_prob, e_idx), labels.b_e[e_idx])
    l_c = weighted_bl_loss(out.content_prob, labels.b_c)
    return l_s + l_e + l_c


# ---------------------------------------------------------------- optimizer


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: ParamStore, lr: float, weight_decay: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data * (1 - self.lr * self.wd) - self.lr * update).astype(np.float32)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, params: ParamStore, config: dict) -> None:
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            enc = name.encode()
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = 4
    version, clen = struct.unpack_from("<II", raw, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = json.loads(raw[off : off + clen])
    off += clen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    return config, state


# ---------------------------------------------------------------- loop


@dataclass
class TrainingWindow:
    window: ObservationWindow
    labels: LabelSet


@dataclass
class TrainResult:
    params: ParamStore
    history: list[dict] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    stopped_epoch: int = 0
    early_stopped: bool = False


def label_windows(windows: list[ObservationWindow], edges: np.ndarray, l_w: int) -> list[TrainingWindow]:
    return [TrainingWindow(w, assign_labels(w.instances, l_w, edges)) for w in windows]


def _first_nonfinite(model: BCGNN, out: HeadOutput | None) -> str | None:
    for name, t in model.params.items():
        if not np.all(np.isfinite(t.data)):
            return f"parameter {name}"
    if out is not None:
        for name in ("start_prob", "end_prob", "content_prob"):
            if not np.all(np.isfinite(getattr(out, name).data)):
                return f"head output {name}"
    return None


def window_loss(model: BCGNN, tw: TrainingWindow) -> tuple[Tensor, HeadOutput]:
    out = model(tw.window.features)
    bad = _first_nonfinite(model, out)
    if bad is not None:
        raise NumericError(f"window {tw.window.video_id}@{tw.window.window_start}: first non-finite tensor is {bad}")
    return total_loss(out, tw.labels), out


def evaluate_loss(model: BCGNN, windows: list[TrainingWindow]) -> float:
    if not windows:
        return float("nan")
    return float(np.mean([float(window_loss(model, tw)[0].data) for tw in windows]))


def train(
    model: BCGNN,
    train_windows: list[TrainingWindow],
    val_windows: list[TrainingWindow],
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
    on_init: Callable[[dict], None] | None = None,
) -> TrainResult:
    """One AdamW step per window; early stopping on validation loss.

    Falls back to the training loss for early stopping when there are no
    validation windows. ``model.params`` ends holding the best weights.
    """
    cfg.validate()
    params = model.params
    opt = AdamW(params, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps)
    result = TrainResult(params)
    result.initial_train_loss = evaluate_loss(model, train_windows)
    result.initial_val_loss = evaluate_loss(model, val_windows)
    if on_init is not None:
        on_init({"train_loss": result.initial_train_loss, "val_loss": result.initial_val_loss})
    best = result.initial_val_loss if val_windows else result.initial_train_loss
    best_state = params.state_dict()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_windows))
        losses = []
        for idx in order:
            params.zero_grad()
            loss, _ = window_loss(model, train_windows[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, window {train_windows[idx].window.video_id}"
                    f"@{train_windows[idx].window.window_start}"
                )
            T.backward(loss)
            opt.step()
            losses.append(value)
        val = evaluate_loss(model, val_windows)
        monitor = val if val_windows else float(np.mean(losses))
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val}
        improved = monitor < best
        if improved:
            best, stale = monitor, 0
            best_state = params.state_dict()
            result.best_epoch = epoch
        else:
            stale += 1
        record["best"] = improved
        result.history.append(record)
        result.stopped_epoch = epoch
        log.info("epoch %d train %.4f val %.4f", epoch, record["train_loss"], val)
        if on_epoch is not None:
            on_epoch(record)
        if stale >= cfg.patience:
            result.early_stopped = True
            break
    params.load_state_dict(best_state)
    return result

"""Reverse-mode differentiation for the fixed model graph, an MSE objective,
Adam, and a deterministic training loop with best-validation tracking.

The analytic gradients are verifiable against ``finite_difference_grad``;
the test suite pins their agreement on tiny double-precision configs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import blocks, metrics
from .blocks import ModelConfig, ModelParams
from .data import NoisyPair, Signal
from .errors import NumericalError, TrainingDivergedError, ValidationError

Gradients = dict[str, np.ndarray]


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    segment_len: int | None = None  # train on random crops of this many samples
    loss: str = "mse"
    checkpoint_every: int = 0  # epochs between snapshots; 0 disables
    patience: int = 0  # early stop after this many non-improving epochs; 0 disables
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be non-negative")
        if self.loss != "mse":
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.segment_len is not None and self.segment_len < 1:
            raise ValidationError("segment_len must be positive")


@dataclass
class AdamState:
    m: Gradients
    v: Gradients
    step: int
    learning_rate: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def init(cls, params: ModelParams, learning_rate: float = 1e-3,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = {name: np.zeros_like(arr) for name, arr in blocks.param_items(params)}
        return cls(m=zeros, v={k: v.copy() for k, v in zeros.items()}, step=0,
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def backward(x: np.ndarray, target: np.ndarray, params: ModelParams,
             loss_scale: float = 1.0) -> tuple[float, Gradients]:
    """Loss and exact gradients of loss_scale * mse(model(x), target).

    Parameters are left untouched; gradients mirror ``param_items`` names
    and shapes.  Non-finite intermediates abort with the offending block
    named in the error.
    """
    dtype = blocks._DTYPES[params.config.dtype]
    xin = np.asarray(x, dtype=dtype)[None, :]
    tgt = np.asarray(target, dtype=dtype)
    if xin.shape[1] != tgt.shape[0]:
        raise ValidationError("input and target must share length")
    h1, c1 = blocks._hnf_fwd(xin, params.hnf_in)
    if not np.all(np.isfinite(h1)):
        raise NumericalError("non-finite output from hnf_in")
    h2, c2 = blocks._mamba_fwd(h1, params.mamba)
    if not np.all(np.isfinite(h2)):
        raise NumericalError("non-finite output from mamba_block")
    yhat, c3 = blocks._hnf_fwd(h2, params.hnf_out)
    if not np.all(np.isfinite(yhat)):
        raise NumericalError("non-finite output from hnf_out")
    caches = (c1, c2, c3)
    n = tgt.shape[0]
    diff = yhat[0] - tgt
    loss = float(np.mean(np.asarray(diff, dtype=np.float64) ** 2))
    gy = (np.asarray(loss_scale, dtype=dtype) * 2.0 / n) * diff
    grads = blocks._model_bwd(caches, gy[None, :])
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    return loss_scale * loss, grads


def finite_difference_grad(x: np.ndarray, target: np.ndarray, params: ModelParams,
                           eps: float = 1e-4) -> Gradients:
    """Central-difference gradients per scalar parameter, double precision."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    shadow = blocks.cast_model(params, "f8")
    arrays = {name: arr for name, arr in blocks.param_items(shadow)}

    def loss_at() -> float:
        p = blocks.model_from_arrays(shadow.config, arrays)
        return mse_loss(blocks.msemg_forward(x, p), target)

    grads: Gradients = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_at()
            flat[i] = orig - eps
            lo = loss_at()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def global_grad_norm(grads: Gradients) -> float:
    return math.sqrt(sum(float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
                         for g in grads.values()))


def clip_gradients(grads: Gradients, max_norm: float) -> tuple[Gradients, bool]:
    norm = global_grad_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return grads, False
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, True


def adam_step(params: ModelParams, grads: Gradients,
              state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; functional (inputs untouched)."""
    names = [name for name, _ in blocks.param_items(params)]
    if set(grads) != set(names):
        raise ValidationError("gradient keys do not match parameters")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    new_m: Gradients = {}
    new_v: Gradients = {}
    updated: dict[str, np.ndarray] = {}
    for name, arr in blocks.param_items(params):
        g = grads[name]
        if g.shape != arr.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_m[name] = m
        new_v[name] = v
        update = (state.learning_rate * (m / bc1)
                  / (np.sqrt(v / bc2) + state.eps))
        updated[name] = (arr - update).astype(arr.dtype, copy=False)
    new_params = blocks.model_from_arrays(params.config, updated)
    new_state = replace(state, m=new_m, v=new_v, step=step)
    return new_params, new_state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None
    val_snr_imp_db: float
    clipped_steps: int = 0
    is_best: bool = False

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_snr_imp_db": self.val_snr_imp_db,
                "clipped_steps": self.clipped_steps, "is_best": self.is_best}


@dataclass
class TrainResult:
    best_params: ModelParams
    final_params: ModelParams
    log: list[EpochRecord]
    best_val_snr_imp_db: float

    def log_jsonl(self) -> str:
        return "\n".join(json.dumps(r.as_dict(), sort_keys=True) for r in self.log) + "\n"


def _validation_snr_imp(params: ModelParams, val_pairs: Sequence[NoisyPair]) -> float:
    values = []
    for pair in val_pairs:
        out = np.asarray(blocks.msemg_forward(pair.mixed.samples, params),
                         dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise TrainingDivergedError("non-finite model output during validation")
        denoised = Signal(samples=out, fs=pair.mixed.fs)
        values.append(metrics.snr_improvement(pair.clean, pair.mixed, denoised))
    return float(np.mean(values))


def train(train_pairs: Sequence[NoisyPair], val_pairs: Sequence[NoisyPair],
          model_config: ModelConfig, cfg: TrainConfig,
          init_params: ModelParams | None = None,
          snapshot: Callable[[int, ModelParams, EpochRecord], None] | None = None,
          ) -> TrainResult:
    """Seeded, deterministic loop: shuffle, batch, backward, Adam.

    Per-epoch validation scores mean SNR improvement; the best-validation
    checkpoint is retained.  Epoch 0 records the untrained model so later
    epochs can be read as improvement over initialization.  A non-finite
    loss aborts.
    """
    if not train_pairs:
        raise ValidationError("training needs at least one pair")
    if not val_pairs:
        raise ValidationError("training needs at least one validation pair")
    lengths = {len(p.mixed) for p in list(train_pairs) + list(val_pairs)}
    if len(lengths) != 1:
        raise ValidationError("all segments must share length")
    seg_total = lengths.pop()
    crop = cfg.segment_len if cfg.segment_len is not None else seg_total
    if crop > seg_total:
        raise ValidationError("segment_len exceeds the segment length")

    params = init_params if init_params is not None else blocks.init_model(model_config)
    state = AdamState.init(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)

    log: list[EpochRecord] = []
    val0 = _validation_snr_imp(params, val_pairs)
    best_val = val0
    best_params = params
    record = EpochRecord(epoch=0, train_loss=None, val_snr_imp_db=val0, is_best=True)
    log.append(record)
    if snapshot is not None:
        snapshot(0, params, record)

    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        clipped = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            batch_grads: Gradients | None = None
            batch_loss = 0.0
            for idx in batch:
                pair = train_pairs[int(idx)]
                offset = int(rng.integers(0, seg_total - crop + 1))
                x = pair.mixed.samples[offset:offset + crop]
                y = pair.clean.samples[offset:offset + crop]
                try:
                    loss, grads = backward(x, y, params, loss_scale=1.0 / len(batch))
                except NumericalError as exc:
                    raise TrainingDivergedError(
                        f"epoch {epoch}: {exc}") from exc
                batch_loss += loss
                if batch_grads is None:
                    batch_grads = grads
                else:
                    for k in batch_grads:
                        batch_grads[k] += grads[k]
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}; aborting")
            epoch_loss += batch_loss * len(batch)
            assert batch_grads is not None
            batch_grads, was_clipped = clip_gradients(batch_grads, cfg.clip_norm)
            clipped += int(was_clipped)
            params, state = adam_step(params, batch_grads, state)
        train_loss = epoch_loss / len(order)
        val = _validation_snr_imp(params, val_pairs)
        is_best = val > best_val
        if is_best:
            best_val = val
            best_params = params
            stale = 0
        else:
            stale += 1
        record = EpochRecord(epoch=epoch, train_loss=train_loss, val_snr_imp_db=val,
                             clipped_steps=clipped, is_best=is_best)
        log.append(record)
        if snapshot is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            snapshot(epoch, params, record)
        if cfg.patience and stale >= cfg.patience:
            break
    return TrainResult(best_params=best_params, final_params=params, log=log,
                       best_val_snr_imp_db=best_val)

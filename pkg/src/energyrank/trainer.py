"""Optimization harness: initialization, Adam, batch norm, LR decay and the fit loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, ValidationError

log = logging.getLogger(__name__)


def he_init(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype=np.float32,
            gain: float = 1.0) -> ad.Tensor:
    """Normal(0, 2/fan_in) weights, optionally multiplied by ``gain``."""
    if fan_in < 1:
        raise ValidationError(f"fan_in must be >= 1, got {fan_in}")
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape) * gain
    return ad.Tensor(w.astype(dtype), requires_grad=True)


def zeros_param(shape: tuple[int, ...], dtype=np.float32) -> ad.Tensor:
    return ad.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def lr_schedule(epoch: int, base_lr: float, decay: float) -> float:
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    return base_lr * decay ** epoch


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, ad.Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
        p.data -= update


class BatchNorm:
    """Batch normalization for a dense layer's output (never inside a recurrence)."""

    def __init__(self, dim: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.gamma = ad.Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = ad.Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def __call__(self, x: ad.Tensor, mode: str = "train") -> ad.Tensor:
        if mode == "train":
            if x.shape[0] < 2:
                raise ValidationError("train-mode batch norm needs a batch of at least 2")
            out, mu, var = ad.batch_norm(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mu).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(self.running_var.dtype)
            return out
        if mode != "infer":
            raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
        out, _, _ = ad.batch_norm(x, self.gamma, self.beta, self.eps,
                                  stats=(self.running_mean, self.running_var))
        return out


def batch_norm(x: ad.Tensor, layer: BatchNorm, mode: str = "train") -> ad.Tensor:
    return layer(x, mode)


# --------------------------------------------------------------------------
# fit loop
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 150
    base_lr: float = 1e-3
    lr_decay: float = 0.95
    seed: int = 7
    loss: str = "pairwise"
    phi: str = "logistic"
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    patience: int = 15

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValidationError("lr_decay must be in (0, 1]")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.loss not in ("pairwise", "listwise"):
            raise ValidationError(f"unknown loss paradigm {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class RankingModel(Protocol):
    """What :func:`fit` needs from a model bundle."""

    def trainable(self) -> dict[str, ad.Tensor]: ...

    def batch_loss(self, batch, cfg: TrainConfig, rng: np.random.Generator) -> ad.Tensor: ...

    def predict_top(self, requests) -> np.ndarray: ...

    def snapshot(self) -> dict[str, np.ndarray]: ...

    def restore(self, snap: dict[str, np.ndarray]) -> None: ...


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_error: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "lr": self.lr, "train_loss": self.train_loss, "val_error": self.val_error}


@dataclass
class FitResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_error: float
    initial_train_loss: float


def _val_error(model: RankingModel, val) -> float:
    from .evaluator import error_rate
    with ad.no_record():
        preds = model.predict_top(val.requests)
    return error_rate(preds, val.gold)


def fit(train, val, model: RankingModel, cfg: TrainConfig,
        on_epoch: Callable[[EpochRecord], None] | None = None) -> FitResult:
    """Train ``model`` in place, restoring the best-validation parameters at the end.

    ``train``/``val`` are prepared datasets exposing ``requests`` (a sequence
    the model understands), ``gold`` (best-intent index per request) and
    ``batch(indices)``.
    """
    if len(train.requests) == 0 or len(val.requests) == 0:
        raise ValidationError("fit needs non-empty training and validation sets")
    rng = np.random.default_rng(cfg.seed)
    params = model.trainable()
    state = OptimizerState()
    history: list[EpochRecord] = []
    best_err, best_epoch, best_snap = np.inf, -1, None
    stale = 0
    n = len(train.requests)

    with ad.no_record():
        probe = [float(model.batch_loss(train.batch(np.arange(i, min(i + cfg.batch_size, n))), cfg,
                                        np.random.default_rng(cfg.seed)).data)
                 for i in range(0, n, cfg.batch_size)]
    initial_loss = float(np.mean(probe))

    for epoch in range(cfg.max_epochs):
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_decay)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = train.batch(idx)
            with ad.GradientTape() as tape:
                loss = model.batch_loss(batch, cfg, rng)
            grads = tape.backward(loss)
            adam_step(params, {k: grads[p] for k, p in params.items() if p in grads}, state, lr)
            losses.append(float(loss.data))
        rec = EpochRecord(epoch, float(lr), float(np.mean(losses)), _val_error(model, val))
        history.append(rec)
        log.info("epoch %d lr=%.3g loss=%.4f val_err=%.4f", epoch, lr, rec.train_loss, rec.val_error)
        if on_epoch is not None:
            on_epoch(rec)
        if rec.val_error < best_err:
            best_err, best_epoch, best_snap = rec.val_error, epoch, model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_snap is not None:
        model.restore(best_snap)
    return FitResult(history, best_epoch, float(best_err), initial_loss)

"""Multisource denoising autoencoder.

Each source (scores ``s``, text ``t``, labels ``c``) is corrupted, encoded by
its own two-layer network, and the three codes are fused into a 500-d
representation.  Training reconstructs both the per-source codes and the
clean inputs from the fused vector.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, ValidationError
from .featurizer import (BLOCK_DIM, MAX_TOKENS, N_BINS, N_SCORES, SOURCE_DIMS, MultiHotTriple,
                         split_sources)
from .trainer import OptimizerState, adam_step, he_init, lr_schedule, zeros_param

log = logging.getLogger(__name__)

SOURCES = ("s", "t", "c")
HIDDEN1 = 256
HIDDEN2 = 128
FUSED_DIM = 500
BLOCKS = {"s": (N_SCORES, N_BINS), "t": (MAX_TOKENS, BLOCK_DIM), "c": (MAX_TOKENS, BLOCK_DIM)}


@dataclass
class CorruptionConfig:
    scale_low: float = 0.9
    scale_high: float = 1.1
    shift_high: float = 0.05
    mask_prob: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if not (0 < self.scale_low <= self.scale_high):
            raise ValidationError("need 0 < scale_low <= scale_high")
        if self.shift_high < 0:
            raise ValidationError("shift_high must be >= 0")
        if not (0 <= self.mask_prob <= 1):
            raise ValidationError("mask_prob must be in [0, 1]")

    @classmethod
    def disabled(cls) -> "CorruptionConfig":
        return cls(1.0, 1.0, 0.0, 0.0, enabled=False)

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(rng: np.random.Generator, dtype=np.float32) -> dict[str, ad.Tensor]:
    p: dict[str, ad.Tensor] = {}

    def dense(name, n_in, n_out):
        p[f"{name}.W"] = he_init((n_in, n_out), n_in, rng, dtype)
        p[f"{name}.b"] = zeros_param((n_out,), dtype)

    for w in SOURCES:
        dense(f"dae.enc.{w}.l1", SOURCE_DIMS[w], HIDDEN1)
        dense(f"dae.enc.{w}.l2", HIDDEN1, HIDDEN2)
    dense("dae.fuse", 3 * HIDDEN2, FUSED_DIM)
    for w in SOURCES:
        dense(f"dae.hdec.{w}", FUSED_DIM, HIDDEN2)
    for w in SOURCES:
        dense(f"dae.vdec.{w}.l1", HIDDEN2, HIDDEN1)
        dense(f"dae.vdec.{w}.l2", HIDDEN1, SOURCE_DIMS[w])
    for k, t in p.items():
        t.name = k
    return p


def _dense(x: ad.Tensor, params, name: str) -> ad.Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


def _as_batch(v, dim: int, what: str) -> tuple[ad.Tensor, bool]:
    t = ad.as_tensor(v)
    single = t.ndim == 1
    if single:
        t = ad.reshape(t, (1, -1))
    if t.ndim != 2 or t.shape[1] != dim:
        raise ShapeError(f"{what}: expected length {dim}, got shape {tuple(ad.as_tensor(v).shape)}")
    return t, single


def corrupt(triple: MultiHotTriple, cfg: CorruptionConfig, rng: np.random.Generator):
    """Affine distortion then zero-masking; returns new arrays (v_s, v_t, v_c)."""
    x = corrupt_batch(triple.stacked()[None, :], cfg, rng)[0]
    src = split_sources(x)
    return src["s"], src["t"], src["c"]


def corrupt_batch(x: np.ndarray, cfg: CorruptionConfig, rng: np.random.Generator) -> np.ndarray:
    if not cfg.enabled:
        return x.copy()
    a = rng.uniform(cfg.scale_low, cfg.scale_high, size=x.shape)
    b = rng.uniform(0.0, cfg.shift_high, size=x.shape)
    keep = rng.random(x.shape) >= cfg.mask_prob
    return ((a * x + b) * keep).astype(x.dtype)


def encode_source(v_d, which: str, params) -> ad.Tensor:
    x, single = _as_batch(v_d, SOURCE_DIMS[which], f"encode_source[{which}]")
    h = ad.relu(_dense(x, params, f"dae.enc.{which}.l1"))
    h = ad.relu(_dense(h, params, f"dae.enc.{which}.l2"))
    return ad.reshape(h, (HIDDEN2,)) if single else h


def fuse(h_s, h_t, h_c, params) -> ad.Tensor:
    parts = []
    single = False
    for h, w in zip((h_s, h_t, h_c), SOURCES):
        t, single = _as_batch(h, HIDDEN2, f"fuse[{w}]")
        parts.append(t)
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"fuse: batch sizes differ {[p.shape for p in parts]}")
    h = ad.relu(_dense(ad.concat(parts, axis=1), params, "dae.fuse"))
    return ad.reshape(h, (FUSED_DIM,)) if single else h


def decode_hidden(h, params) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    x, single = _as_batch(h, FUSED_DIM, "decode_hidden")
    outs = [ad.relu(_dense(x, params, f"dae.hdec.{w}")) for w in SOURCES]
    if single:
        outs = [ad.reshape(o, (HIDDEN2,)) for o in outs]
    return tuple(outs)


def decode_source(h_prime, which: str, params) -> ad.Tensor:
    """Reconstruction logits for one source (softmax is applied per block in the loss)."""
    x, single = _as_batch(h_prime, HIDDEN2, f"decode_source[{which}]")
    y = ad.relu(_dense(x, params, f"dae.vdec.{which}.l1"))
    y = _dense(y, params, f"dae.vdec.{which}.l2")
    return ad.reshape(y, (SOURCE_DIMS[which],)) if single else y


def encode(x_sources: dict[str, np.ndarray | ad.Tensor], params) -> tuple[ad.Tensor, dict[str, ad.Tensor]]:
    hs = {w: encode_source(x_sources[w], w, params) for w in SOURCES}
    return fuse(hs["s"], hs["t"], hs["c"], params), hs


def fused_representation(stacked: np.ndarray, params, batch_size: int = 512) -> np.ndarray:
    """Clean (uncorrupted) fused vectors for an (n, 2121) matrix of encoded intents."""
    outs = []
    dtype = params["dae.fuse.W"].dtype
    with ad.no_record():
        for i in range(0, len(stacked), batch_size):
            src = split_sources(stacked[i:i + batch_size].astype(dtype))
            h, _ = encode(src, params)
            outs.append(h.data)
    if not outs:
        return np.zeros((0, FUSED_DIM), dtype=dtype)
    return np.concatenate(outs)


def block_targets(clean: np.ndarray, which: str) -> np.ndarray:
    """Each block normalized to sum 1; all-zero padding blocks stay zero."""
    n_blocks, width = BLOCKS[which]
    blocks = clean.reshape(clean.shape[0], n_blocks, width)
    sums = blocks.sum(axis=2, keepdims=True)
    return np.divide(blocks, sums, out=np.zeros_like(blocks), where=sums > 0)


def batch_loss_terms(clean: np.ndarray, corrupted: np.ndarray, params) -> tuple[ad.Tensor, ad.Tensor]:
    """Summed (over the batch) hidden and input reconstruction losses."""
    dtype = params["dae.fuse.W"].dtype
    clean_src = split_sources(clean.astype(dtype))
    noisy_src = split_sources(corrupted.astype(dtype))
    h, hs = encode(noisy_src, params)
    h_rec = dict(zip(SOURCES, decode_hidden(h, params)))
    l_h = None
    l_v = None
    for w in SOURCES:
        term = ad.cross_entropy_with_logits(ad.softmax(hs[w], axis=1), h_rec[w], axis=1)
        l_h = term if l_h is None else ad.add(l_h, term)
        n_blocks, width = BLOCKS[w]
        logits = ad.reshape(decode_source(h_rec[w], w, params), (-1, n_blocks, width))
        target = ad.Tensor(block_targets(clean_src[w], w).astype(dtype))
        term = ad.cross_entropy_with_logits(target, logits, axis=2)
        l_v = term if l_v is None else ad.add(l_v, term)
    return l_h, l_v


def dae_loss(triple: MultiHotTriple | np.ndarray, params, cfg: CorruptionConfig,
             rng: np.random.Generator) -> ad.Tensor:
    """L^h + L^V for one triple, or the batch mean for an (n, 2121) matrix."""
    clean = triple.stacked()[None, :] if isinstance(triple, MultiHotTriple) else np.atleast_2d(triple)
    noisy = corrupt_batch(clean, cfg, rng)
    l_h, l_v = batch_loss_terms(clean, noisy, params)
    return ad.mul(ad.add(l_h, l_v), 1.0 / clean.shape[0])


def uniform_baseline(clean: np.ndarray) -> float:
    """Loss of a model predicting uniform distributions everywhere, per sample."""
    src = split_sources(np.atleast_2d(clean))
    total = 3 * np.log(HIDDEN2) * src["s"].shape[0]
    for w in SOURCES:
        n_blocks, width = BLOCKS[w]
        nonempty = (src[w].reshape(-1, n_blocks, width).sum(axis=2) > 0).sum()
        total += nonempty * np.log(width)
    return float(total / src["s"].shape[0])


def target_entropy(clean: np.ndarray) -> float:
    """Per-sample entropy of the normalized input blocks (floor of L^V)."""
    src = split_sources(np.atleast_2d(clean))
    total = 0.0
    for w in SOURCES:
        t = block_targets(src[w], w)
        total += float(-(t * np.log(np.where(t > 0, t, 1.0))).sum())
    return total / src["s"].shape[0]


@dataclass
class PretrainResult:
    params: dict[str, ad.Tensor]
    loss_curve: list[float]


def pretrain(data: np.ndarray, params, cfg: CorruptionConfig, *, epochs: int = 20, batch_size: int = 32,
             base_lr: float = 1e-3, lr_decay: float = 0.95, seed: int = 7) -> PretrainResult:
    """Minimize the mean of L^h + L^V over minibatches; returns the per-epoch mean loss."""
    data = np.asarray(data)
    if data.ndim != 2 or len(data) == 0:
        raise ValidationError("pretrain needs a non-empty (n, 2121) matrix of encoded intents")
    rng = np.random.default_rng(seed)
    state = OptimizerState()
    curve = []
    n = len(data)
    for epoch in range(epochs):
        lr = lr_schedule(epoch, base_lr, lr_decay)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = data[order[start:start + batch_size]]
            with ad.GradientTape() as tape:
                loss = dae_loss(batch, params, cfg, rng)
            grads = tape.backward(loss)
            adam_step(params, {k: grads[p] for k, p in params.items()}, state, lr)
            losses.append(float(loss.data))
        curve.append(float(np.mean(losses)))
        log.info("dae epoch %d loss=%.4f", epoch, curve[-1])
    return PretrainResult(params, curve)

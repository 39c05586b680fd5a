"""Siamese energy model.

A single bidirectional-GRU tower maps both the fused intent vector and the
embedded information-state into a 64-d metric space.  The energy of an
(intent, state) pair is the L1 distance between the two points and the
ranking score is ``sigmoid(-energy)``: low energy ranks high.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, ValidationError
from .featurizer import N_ATTRIBUTES
from .trainer import BatchNorm, he_init, zeros_param

INPUT_DIM = 500
N_FRAMES = 10
FRAME_DIM = 50
GRU_HIDDEN = 64
METRIC_DIM = 64
EMBED_DIM = 16
# He-sampled metric projection is scaled down so initial energies are O(1)
# rather than O(50); otherwise sigmoid(-E) starts saturated.
PROJ_INIT_GAIN = 0.05
# Embedding rows start near zero: with ~100 uninformative attributes, unit-scale
# random rows give every request a unique code the tower can memorize.
EMBED_INIT_STD = 0.01


def init_gru(prefix: str, rng: np.random.Generator, dtype=np.float32,
             input_dim: int = FRAME_DIM, hidden: int = GRU_HIDDEN) -> dict[str, ad.Tensor]:
    p = {}
    for gate in ("z", "r", "h"):
        p[f"{prefix}.W{gate}"] = he_init((input_dim, hidden), input_dim, rng, dtype)
        p[f"{prefix}.U{gate}"] = he_init((hidden, hidden), hidden, rng, dtype)
        p[f"{prefix}.b{gate}"] = zeros_param((hidden,), dtype)
    return p


def gru_step(x, h, params: dict[str, ad.Tensor], prefix: str = "gru") -> ad.Tensor:
    """One GRU update, h' = (1 - z) * h + z * tanh(x Wh + (r * h) Uh + bh)."""
    x, h = ad.as_tensor(x), ad.as_tensor(h)
    single = x.ndim == 1
    if single:
        x, h = ad.reshape(x, (1, -1)), ad.reshape(h, (1, -1))
    wz = params[f"{prefix}.Wz"]
    if x.shape[1] != wz.shape[0] or h.shape[1] != wz.shape[1] or x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_step: x {x.shape} / h {h.shape} do not match Wz {wz.shape}")
    xz = ad.add(ad.matmul(x, wz), params[f"{prefix}.bz"])
    xr = ad.add(ad.matmul(x, params[f"{prefix}.Wr"]), params[f"{prefix}.br"])
    xh = ad.add(ad.matmul(x, params[f"{prefix}.Wh"]), params[f"{prefix}.bh"])
    out = _gru_update(xz, xr, xh, h, params, prefix)
    return ad.reshape(out, (out.shape[1],)) if single else out


def _gru_update(xz, xr, xh, h, params, prefix):
    z = ad.sigmoid(ad.add(xz, ad.matmul(h, params[f"{prefix}.Uz"])))
    r = ad.sigmoid(ad.add(xr, ad.matmul(h, params[f"{prefix}.Ur"])))
    cand = ad.tanh(ad.add(xh, ad.matmul(ad.mul(r, h), params[f"{prefix}.Uh"])))
    return ad.add(h, ad.mul(z, ad.sub(cand, h)))


def gru_sequence(frames: ad.Tensor, params, prefix: str, reverse: bool = False) -> ad.Tensor:
    """Final hidden state after running over (batch, T, d) frames."""
    b, n_t, d = frames.shape
    flat = ad.reshape(frames, (b * n_t, d))
    proj = {}
    for gate in ("z", "r", "h"):
        y = ad.add(ad.matmul(flat, params[f"{prefix}.W{gate}"]), params[f"{prefix}.b{gate}"])
        proj[gate] = ad.reshape(y, (b, n_t, -1))
    hidden = params[f"{prefix}.Uz"].shape[0]
    h = ad.Tensor(np.zeros((b, hidden), dtype=frames.dtype))
    steps = range(n_t - 1, -1, -1) if reverse else range(n_t)
    for t in steps:
        h = _gru_update(ad.index(proj["z"], (slice(None), t)), ad.index(proj["r"], (slice(None), t)),
                        ad.index(proj["h"], (slice(None), t)), h, params, prefix)
    return h


def init_tower(rng: np.random.Generator, dtype=np.float32) -> dict[str, ad.Tensor]:
    p = {}
    p.update(init_gru("tower.fwd", rng, dtype))
    p.update(init_gru("tower.bwd", rng, dtype))
    p["tower.proj.W"] = he_init((2 * GRU_HIDDEN, METRIC_DIM), 2 * GRU_HIDDEN, rng, dtype, gain=PROJ_INIT_GAIN)
    p["tower.proj.b"] = zeros_param((METRIC_DIM,), dtype)
    return p


def tower_states(v, params) -> tuple[ad.Tensor, ad.Tensor]:
    """Final forward and backward GRU states for a batch of 500-d vectors."""
    x = ad.as_tensor(v)
    if x.ndim == 1:
        x = ad.reshape(x, (1, -1))
    if x.ndim != 2 or x.shape[1] != INPUT_DIM:
        raise ShapeError(f"tower input must have length {INPUT_DIM}, got shape {x.shape}")
    frames = ad.reshape(x, (x.shape[0], N_FRAMES, FRAME_DIM))
    return gru_sequence(frames, params, "tower.fwd"), gru_sequence(frames, params, "tower.bwd", reverse=True)


def tower_forward(v, params) -> ad.Tensor:
    """Metric-space point F_W(v); (64,) for one vector, (n, 64) for a batch."""
    single = ad.as_tensor(v).ndim == 1
    hf, hb = tower_states(v, params)
    out = ad.add(ad.matmul(ad.concat([hf, hb], axis=1), params["tower.proj.W"]), params["tower.proj.b"])
    return ad.reshape(out, (METRIC_DIM,)) if single else out


class InfoStateEmbedder:
    """Per-attribute embedding tables, concatenated and projected to 500-d.

    The projection is followed by batch norm and ReLU so the output lives
    on the same non-negative scale as the fused intent vectors.
    """

    def __init__(self, table_sizes: Sequence[int], rng: np.random.Generator, dtype=np.float32,
                 bn_momentum: float = 0.9, bn_eps: float = 1e-5):
        if len(table_sizes) != N_ATTRIBUTES:
            raise ValidationError(f"need {N_ATTRIBUTES} embedding tables, got {len(table_sizes)}")
        self.params: dict[str, ad.Tensor] = {}
        for a, n in enumerate(table_sizes):
            if n < 1:
                raise ValidationError("embedding tables need at least the reserved row 0")
            self.params[f"embed.attr{a}"] = ad.Tensor(
                rng.normal(0.0, EMBED_INIT_STD, size=(n, EMBED_DIM)).astype(dtype), requires_grad=True)
        fan_in = N_ATTRIBUTES * EMBED_DIM
        self.params["embed.proj.W"] = he_init((fan_in, INPUT_DIM), fan_in, rng, dtype)
        self.params["embed.proj.b"] = zeros_param((INPUT_DIM,), dtype)
        self.bn = BatchNorm(INPUT_DIM, bn_momentum, bn_eps, dtype)
        self.params["embed.bn.gamma"] = self.bn.gamma
        self.params["embed.bn.beta"] = self.bn.beta

    @property
    def tables(self) -> list[ad.Tensor]:
        return [self.params[f"embed.attr{a}"] for a in range(N_ATTRIBUTES)]

    def __call__(self, indices: np.ndarray, mode: str = "infer") -> ad.Tensor:
        return embed_info_state(indices, self, mode)


def embed_info_state(indices: np.ndarray, embedder: InfoStateEmbedder, mode: str = "infer") -> ad.Tensor:
    idx = np.asarray(indices)
    single = idx.ndim == 1
    idx = np.atleast_2d(idx)
    if idx.shape[1] != N_ATTRIBUTES:
        raise ValidationError(f"expected {N_ATTRIBUTES} attribute indices, got {idx.shape[1]}")
    e = ad.embed_concat(embedder.tables, idx)
    y = ad.add(ad.matmul(e, embedder.params["embed.proj.W"]), embedder.params["embed.proj.b"])
    y = ad.relu(embedder.bn(y, mode))
    return ad.reshape(y, (INPUT_DIM,)) if single else y


@dataclass(frozen=True)
class EnergyScore:
    energy: float
    score: float


def energy_tensor(p_int: ad.Tensor, p_st: ad.Tensor) -> ad.Tensor:
    """Rowwise L1 distance between metric points."""
    return ad.l1_distance(p_int, p_st)


def score_tensor(energy: ad.Tensor) -> ad.Tensor:
    return ad.sigmoid(ad.mul(energy, -1.0))


def energy(x_int, x_st, params) -> EnergyScore:
    x_int, x_st = ad.as_tensor(x_int), ad.as_tensor(x_st)
    if x_int.shape != (INPUT_DIM,) or x_st.shape != (INPUT_DIM,):
        raise ShapeError(f"energy expects two length-{INPUT_DIM} vectors, got {x_int.shape} and {x_st.shape}")
    with ad.no_record():
        both = tower_forward(ad.Tensor(np.stack([x_int.data, x_st.data])), params)
        e = float(np.abs(both.data[0].astype(np.float64) - both.data[1]).sum())
    s = 1.0 / (1.0 + np.exp(e))
    return EnergyScore(e, float(s))


def stable_rank(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; ties keep candidate order."""
    return np.argsort(-np.asarray(scores), kind="stable")


def rank_request(intents, x_st, params) -> list[tuple[int, float]]:
    """Rank the fused intent vectors of one request against its embedded state."""
    if len(intents) == 0:
        raise ValidationError("cannot rank an empty intent list")
    x = ad.as_tensor(np.asarray([ad.as_tensor(v).data for v in intents]))
    st = ad.as_tensor(x_st)
    with ad.no_record():
        p_int = tower_forward(x, params)
        p_st = tower_forward(ad.reshape(st, (1, INPUT_DIM)), params)
        e = np.abs(p_int.data.astype(np.float64) - p_st.data).sum(axis=1)
    scores = 1.0 / (1.0 + np.exp(e))
    order = stable_rank(scores)
    return [(int(i), float(scores[i])) for i in order]

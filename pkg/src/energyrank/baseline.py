"""Pairwise logistic-regression ranker over flattened intent and state features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .errors import ShapeError
from .featurizer import (BLOCK_DIM, MAX_TOKENS, SCORE_DIM, FeaturizerConfig, encode_intents,
                         hash_info_state, split_sources)
from .ranker import stable_rank
from .trainer import TrainConfig

STATE_HASH_DIM = 128
FEATURE_DIM = SCORE_DIM + 2 * BLOCK_DIM + STATE_HASH_DIM  # 349


def request_features(rec, cfg: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    """(n_intents, 349): v_s | max-pooled v_t | max-pooled v_c | hashed info-state."""
    src = split_sources(encode_intents(rec.intents, cfg))
    n = len(rec.intents)
    pooled_t = src["t"].reshape(n, MAX_TOKENS, BLOCK_DIM).max(axis=1)
    pooled_c = src["c"].reshape(n, MAX_TOKENS, BLOCK_DIM).max(axis=1)
    state = np.broadcast_to(hash_info_state(rec.info_state, STATE_HASH_DIM), (n, STATE_HASH_DIM))
    return np.concatenate([src["s"], pooled_t, pooled_c, state], axis=1).astype(np.float32)


@dataclass
class LinearRankerParams:
    w: ad.Tensor
    b: ad.Tensor

    @classmethod
    def zeros(cls, dim: int = FEATURE_DIM, dtype=np.float32) -> "LinearRankerParams":
        return cls(ad.Tensor(np.zeros(dim, dtype=dtype), requires_grad=True, name="linear.w"),
                   ad.Tensor(np.zeros(1, dtype=dtype), requires_grad=True, name="linear.b"))


def baseline_score(features, params: LinearRankerParams) -> ad.Tensor:
    x = ad.as_tensor(features)
    if x.ndim != 2 or x.shape[1] != params.w.shape[0]:
        raise ShapeError(f"features of shape {x.shape} do not match weight length {params.w.shape[0]}")
    logits = ad.matmul(x, ad.reshape(params.w, (-1, 1)))
    logits = ad.add(ad.reshape(logits, (x.shape[0],)), ad.take_rows(params.b, np.zeros(x.shape[0], dtype=np.intp)))
    return ad.sigmoid(logits)


class LogRegBatch:
    def __init__(self, x: np.ndarray, relevance: list[np.ndarray]):
        self.x = x
        self.relevance = relevance


class LogRegSet:
    """Prepared features for a list of request records."""

    def __init__(self, records, cfg: FeaturizerConfig = FeaturizerConfig()):
        self.requests = [request_features(r, cfg) for r in records]
        self.relevance = [np.array([it.relevance for it in r.intents]) for r in records]
        self.gold = np.array([r.gold for r in records], dtype=np.int64)

    def batch(self, idx) -> LogRegBatch:
        return LogRegBatch(np.concatenate([self.requests[i] for i in idx]), [self.relevance[i] for i in idx])


class LogRegModel:
    kind = "logreg"

    def __init__(self, featurizer: FeaturizerConfig = FeaturizerConfig()):
        self.featurizer = featurizer
        self.params = LinearRankerParams.zeros()

    def trainable(self) -> dict[str, ad.Tensor]:
        return {"linear.w": self.params.w, "linear.b": self.params.b}

    def prepare(self, records) -> LogRegSet:
        return LogRegSet(records, self.featurizer)

    def batch_loss(self, batch: LogRegBatch, cfg: TrainConfig, rng) -> ad.Tensor:
        scores = baseline_score(batch.x, self.params)
        if cfg.loss == "listwise":
            perms, offset = [], 0
            for rel in batch.relevance:
                perms.append(offset + losses.relevance_permutation(rel, rng))
                offset += len(rel)
            return losses.listmle(scores, perms)
        return losses.pairwise_batch_loss(scores, losses.pair_index(batch.relevance), cfg.phi)

    def request_scores(self, feats: list[np.ndarray]) -> list[np.ndarray]:
        with ad.no_record():
            return [baseline_score(f, self.params).data for f in feats]

    def predict_top(self, requests) -> np.ndarray:
        return np.array([stable_rank(s)[0] for s in self.request_scores(requests)], dtype=np.int64)

    def score_records(self, records) -> list[np.ndarray]:
        return self.request_scores([request_features(r, self.featurizer) for r in records])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.trainable().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.trainable().items():
            p.data[...] = snap[k]

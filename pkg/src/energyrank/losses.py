"""Ranking losses over per-intent scores.

``pairwise`` applies a penalty phi(p_i - p_j) to every pair where intent i
is more relevant than intent j; ``listwise`` is the Plackett-Luce negative
log-likelihood of a relevance-consistent permutation (ListMLE).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ValidationError


class PhiKind(str, enum.Enum):
    LOGISTIC = "logistic"
    HINGE = "hinge"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, value: "str | PhiKind") -> "PhiKind":
        if isinstance(value, PhiKind):
            return value
        aliases = {"lf": cls.LOGISTIC, "hf": cls.HINGE, "ef": cls.EXPONENTIAL}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown phi {value!r}; use lf|hf|ef or logistic|hinge|exponential") from None

    @property
    def short(self) -> str:
        return {"logistic": "lf", "hinge": "hf", "exponential": "ef"}[self.value]


@dataclass
class LabeledScoredList:
    scores: list[float]
    relevance: list[int]

    def __post_init__(self):
        if len(self.scores) != len(self.relevance):
            raise ValidationError(f"{len(self.scores)} scores vs {len(self.relevance)} relevance labels")
        if len(self.scores) < 1:
            raise ValidationError("a scored list needs at least one intent")


def phi(kind: "str | PhiKind", z):
    """Pairwise penalty; accepts a float/array or a Tensor (returns the same kind)."""
    kind = PhiKind.parse(kind)
    if isinstance(z, ad.Tensor):
        if kind is PhiKind.LOGISTIC:
            return ad.softplus(ad.mul(z, -1.0))
        if kind is PhiKind.HINGE:
            return ad.relu(ad.sub(1.0, z))
        return ad.exp(ad.mul(z, -1.0))
    z = np.asarray(z, dtype=np.float64)
    if kind is PhiKind.LOGISTIC:
        out = np.logaddexp(0.0, -z)
    elif kind is PhiKind.HINGE:
        out = np.maximum(0.0, 1.0 - z)
    else:
        out = np.exp(-z)
    return float(out) if out.ndim == 0 else out


@dataclass
class PairIndex:
    """Relevance-ordered pairs of a batch of lists laid out back to back."""

    better: np.ndarray
    worse: np.ndarray
    weight: np.ndarray  # 1 / (#pairs in the list) / (#lists)


def pair_index(relevance_lists: Sequence[Sequence[int]]) -> PairIndex:
    better, worse, weight = [], [], []
    offset = 0
    n_lists = max(len(relevance_lists), 1)
    for rel in relevance_lists:
        rel = np.asarray(rel)
        i, j = np.nonzero(rel[:, None] > rel[None, :])
        if len(i):
            better.append(i + offset)
            worse.append(j + offset)
            weight.append(np.full(len(i), 1.0 / (len(i) * n_lists)))
        offset += len(rel)
    if not better:
        empty = np.zeros(0, dtype=np.intp)
        return PairIndex(empty, empty, np.zeros(0))
    return PairIndex(np.concatenate(better), np.concatenate(worse), np.concatenate(weight))


def pairwise_batch_loss(scores: ad.Tensor, pairs: PairIndex, kind: "str | PhiKind") -> ad.Tensor:
    """Mean over lists of the mean phi over each list's relevance-ordered pairs."""
    if len(pairs.better) == 0:
        return ad.mul(ad.sum_(scores), 0.0)
    z = ad.sub(ad.take_rows(scores, pairs.better), ad.take_rows(scores, pairs.worse))
    w = ad.Tensor(pairs.weight.astype(scores.dtype))
    return ad.sum_(ad.mul(phi(kind, z), w))


def pairwise_loss(lst: LabeledScoredList, kind: "str | PhiKind") -> float:
    s = ad.Tensor(np.asarray(lst.scores, dtype=np.float64))
    return float(pairwise_batch_loss(s, pair_index([lst.relevance]), kind).data)


def relevance_permutation(relevance: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Descending relevance order with ties shuffled uniformly."""
    rel = np.asarray(relevance)
    jitter = rng.permutation(len(rel))
    return np.lexsort((jitter, -rel))


def listmle(scores: ad.Tensor, perms: Sequence[np.ndarray]) -> ad.Tensor:
    """Mean over lists of sum_i [-s_{y(i)} + logsumexp_{j>=i} s_{y(j)}].

    ``perms`` hold flat indices into ``scores``, one array per list, already
    in permutation order.
    """
    scores = ad.as_tensor(scores)
    if not perms:
        return ad.mul(ad.sum_(scores), 0.0)
    sd = scores.data.astype(np.float64)
    n_lists = len(perms)
    width = max(len(p) for p in perms)
    idx = np.zeros((n_lists, width), dtype=np.intp)
    mask = np.zeros((n_lists, width), dtype=bool)
    for r, p in enumerate(perms):
        idx[r, :len(p)] = p
        mask[r, :len(p)] = True
    s = np.where(mask, sd[idx], -np.inf)
    # suffix log-sum-exp: lse[r, i] = log sum_{j >= i} exp(s[r, j])
    lse = np.logaddexp.accumulate(s[:, ::-1], axis=1)[:, ::-1]
    terms = np.where(mask, lse - np.where(mask, s, 0.0), 0.0)
    value = terms.sum() / n_lists

    def bwd(g):
        # d/ds_k = -1 + sum_{i <= k} exp(s_k - lse_i)
        with np.errstate(invalid="ignore"):
            ratio = np.exp(s[:, None, :] - np.where(mask, lse, 0.0)[:, :, None])
        tri = np.triu(np.ones((width, width), dtype=bool))[None] & mask[:, :, None] & mask[:, None, :]
        dk = np.where(tri, ratio, 0.0).sum(axis=1) - 1.0
        full = np.zeros_like(sd)
        np.add.at(full, idx[mask], (dk * g / n_lists)[mask])
        return (full.astype(scores.dtype),)

    return ad.custom_op("listmle", np.asarray(value, dtype=scores.dtype), (scores,), bwd)


def listwise_loss(lst: LabeledScoredList, rng: np.random.Generator) -> float:
    perm = relevance_permutation(lst.relevance, rng)
    return float(listmle(ad.Tensor(np.asarray(lst.scores, dtype=np.float64)), [perm]).data)

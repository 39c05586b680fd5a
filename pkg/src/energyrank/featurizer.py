"""Intent and information-state encoding.

An intent becomes three bit-vectors: binned model scores (11 one-hot blocks
of 11 bins), hashed words (20 blocks of 50) and hashed sequence labels
(20 blocks of 50, different salt).  Information-states become one integer
per attribute, with 0 reserved for values never seen when the vocabulary
was built.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

N_SCORES = 11
N_BINS = 11
MAX_TOKENS = 20
BLOCK_DIM = 50
HASH_K = 3
N_ATTRIBUTES = 114

SCORE_DIM = N_SCORES * N_BINS  # 121
TEXT_DIM = MAX_TOKENS * BLOCK_DIM  # 1000
LABEL_DIM = MAX_TOKENS * BLOCK_DIM  # 1000
SOURCE_DIMS = {"s": SCORE_DIM, "t": TEXT_DIM, "c": LABEL_DIM}

DEFAULT_TEXT_SALT = 1009
DEFAULT_LABEL_SALT = 2027


@dataclass
class IntentCandidate:
    scores: list[float]
    tokens: list[str]
    slot_labels: list[str]
    relevance: int = 0

    def __post_init__(self):
        if len(self.scores) != N_SCORES:
            raise ValidationError(f"intent needs exactly {N_SCORES} scores, got {len(self.scores)}")
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValidationError(f"score {s!r} outside [0, 1]")
        if len(self.slot_labels) != len(self.tokens):
            raise ValidationError(
                f"{len(self.slot_labels)} slot labels for {len(self.tokens)} tokens")
        if self.relevance < 0:
            raise ValidationError("relevance must be non-negative")

    def to_dict(self) -> dict:
        return {"scores": list(self.scores), "tokens": list(self.tokens),
                "slot_labels": list(self.slot_labels), "relevance": int(self.relevance)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IntentCandidate":
        return cls([float(s) for s in d["scores"]], list(d["tokens"]), list(d["slot_labels"]),
                   int(d.get("relevance", 0)))


@dataclass
class InformationState:
    attributes: list[tuple[str, str]]

    def __post_init__(self):
        if len(self.attributes) != N_ATTRIBUTES:
            raise ValidationError(
                f"information-state needs {N_ATTRIBUTES} attributes, got {len(self.attributes)}")

    @property
    def names(self) -> list[str]:
        return [k for k, _ in self.attributes]

    @property
    def values(self) -> list[str]:
        return [v for _, v in self.attributes]

    def to_dict(self) -> dict[str, str]:
        return dict(self.attributes)

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "InformationState":
        return cls([(str(k), str(v)) for k, v in d.items()])


@dataclass(frozen=True)
class MultiHotTriple:
    v_s: np.ndarray
    v_t: np.ndarray
    v_c: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v_s, self.v_t, self.v_c])

    def __eq__(self, other):
        if not isinstance(other, MultiHotTriple):
            return NotImplemented
        return (np.array_equal(self.v_s, other.v_s) and np.array_equal(self.v_t, other.v_t)
                and np.array_equal(self.v_c, other.v_c))

    __hash__ = None


@dataclass(frozen=True)
class FeaturizerConfig:
    text_salt: int = DEFAULT_TEXT_SALT
    label_salt: int = DEFAULT_LABEL_SALT
    n_bins: int = N_BINS
    block_dim: int = BLOCK_DIM
    hash_k: int = HASH_K

    def fingerprint(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def bin_score(s: float, n_bins: int = N_BINS) -> np.ndarray:
    if n_bins <= 0:
        raise ValidationError(f"n_bins must be positive, got {n_bins}")
    if not (0.0 <= s <= 1.0):
        raise ValidationError(f"score {s!r} outside [0, 1]")
    out = np.zeros(n_bins, dtype=np.float32)
    out[min(int(np.floor(s * n_bins)), n_bins - 1)] = 1.0
    return out


@lru_cache(maxsize=200_000)
def _hash_positions(token: str, block_dim: int, k: int, salt: int) -> tuple[int, ...]:
    pos = []
    for i in range(k):
        digest = hashlib.blake2b(f"{salt}:{i}:{token}".encode(), digest_size=8).digest()
        pos.append(int.from_bytes(digest, "little") % block_dim)
    return tuple(pos)


def hash_token(token: str, block_dim: int = BLOCK_DIM, k: int = HASH_K, salt: int = DEFAULT_TEXT_SALT) -> np.ndarray:
    """Multi-hot vector with up to ``k`` set bits (fewer on collision).

    Empty or whitespace-only tokens encode as padding (all zeros).
    """
    out = np.zeros(block_dim, dtype=np.float32)
    norm = token.strip().lower()
    if norm:
        out[list(_hash_positions(norm, block_dim, k, salt))] = 1.0
    return out


def _hashed_blocks(words: Sequence[str], salt: int, cfg: FeaturizerConfig) -> np.ndarray:
    out = np.zeros((MAX_TOKENS, cfg.block_dim), dtype=np.float32)
    for i, w in enumerate(words[:MAX_TOKENS]):
        norm = w.strip().lower()
        if norm:
            out[i, list(_hash_positions(norm, cfg.block_dim, cfg.hash_k, salt))] = 1.0
    return out.reshape(-1)


def encode_intent(intent: IntentCandidate, cfg: FeaturizerConfig = FeaturizerConfig()) -> MultiHotTriple:
    v_s = np.concatenate([bin_score(s, cfg.n_bins) for s in intent.scores])
    v_t = _hashed_blocks(intent.tokens, cfg.text_salt, cfg)
    v_c = _hashed_blocks(intent.slot_labels, cfg.label_salt, cfg)
    return MultiHotTriple(v_s, v_t, v_c)


def encode_intents(intents: Iterable[IntentCandidate], cfg: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    """Stack encoded intents into an (n, 2121) float32 matrix (v_s | v_t | v_c)."""
    rows = [encode_intent(it, cfg).stacked() for it in intents]
    if not rows:
        return np.zeros((0, SCORE_DIM + TEXT_DIM + LABEL_DIM), dtype=np.float32)
    return np.stack(rows)


def split_sources(stacked: np.ndarray) -> dict[str, np.ndarray]:
    a, b = SCORE_DIM, SCORE_DIM + TEXT_DIM
    return {"s": stacked[..., :a], "t": stacked[..., a:b], "c": stacked[..., b:]}


@dataclass
class InfoStateVocab:
    """Per-attribute category tables; index 0 is reserved for unseen values."""

    names: list[str]
    tables: list[dict[str, int]] = field(default_factory=list)

    @classmethod
    def build(cls, states: Iterable[InformationState]) -> "InfoStateVocab":
        states = list(states)
        if not states:
            raise ValidationError("cannot build a vocabulary from zero states")
        names = states[0].names
        seen: list[set[str]] = [set() for _ in names]
        for st in states:
            if st.names != names:
                raise ValidationError("attribute order differs between states")
            for a, v in enumerate(st.values):
                seen[a].add(v)
        tables = [{v: i + 1 for i, v in enumerate(sorted(vals))} for vals in seen]
        return cls(names, tables)

    def table_sizes(self) -> list[int]:
        return [len(t) + 1 for t in self.tables]

    def to_dict(self) -> dict:
        return {"names": self.names, "tables": [sorted(t, key=t.get) for t in self.tables]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "InfoStateVocab":
        return cls(list(d["names"]), [{v: i + 1 for i, v in enumerate(vals)} for vals in d["tables"]])


def encode_info_state(state: InformationState, vocab: InfoStateVocab) -> np.ndarray:
    if len(state.attributes) != len(vocab.tables):
        raise ValidationError(
            f"information-state has {len(state.attributes)} attributes, vocabulary expects {len(vocab.tables)}")
    return np.array([tbl.get(v, 0) for tbl, v in zip(vocab.tables, state.values)], dtype=np.int64)


def hash_info_state(state: InformationState, dim: int = 128, salt: int = 3061) -> np.ndarray:
    """Bag of hashed ``name=value`` pairs (used by the linear baseline)."""
    out = np.zeros(dim, dtype=np.float32)
    for name, value in state.attributes:
        out[_hash_positions(f"{name}={value}", dim, 1, salt)[0]] = 1.0
    return out

"""Synthetic voice-assistant intent-ranking data.

Each request has a gold intent (one of 28 intent types over 7 domains) and
a list of upstream hypotheses sorted by upstream confidence.  The gold
intent is first in the list with a calibrated probability so that picking
the first hypothesis is wrong ~41% of the time.  Every information-state
attribute is tied to the gold intent with probability ``rho``: a few copy
its type, domain or entity exactly, the rest through a lossy per-attribute
map of the type.  Otherwise the value comes from the user's profile.

Every request is generated from its own RNG seeded by
``(seed, stream, index)`` so shards can be produced independently and the
output does not depend on generation order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from functools import cached_property
import hashlib
import json

import numpy as np
from scipy.optimize import brentq

from .errors import ValidationError
from .featurizer import N_ATTRIBUTES, N_SCORES, InformationState, IntentCandidate

MAX_INTENTS = 43

STREAM_LABELED = 0
STREAM_P = 1
STREAM_Q = 2

SPLIT_RATIOS = (("train", 12_000), ("val", 4_000), ("test", 8_000))
FULL_LABELED = 24_000
FULL_UNLABELED = 80_000

# (domain, intent) -> template; "{slot}" expands to 1-2 entity words
TEMPLATES: dict[tuple[str, str], list[str]] = {
    ("music", "play_song"): ["play", "{song}"],
    ("music", "play_artist"): ["play", "songs", "by", "{artist}"],
    ("music", "play_album"): ["play", "the", "album", "{album}"],
    ("music", "play_playlist"): ["shuffle", "my", "{playlist}", "playlist"],
    ("movies", "find_movie"): ["find", "the", "movie", "{movie}"],
    ("movies", "showtimes"): ["when", "is", "{movie}", "showing"],
    ("movies", "buy_tickets"): ["buy", "tickets", "for", "{movie}"],
    ("movies", "movie_info"): ["who", "stars", "in", "{movie}"],
    ("app_launch", "open_app"): ["open", "{app}"],
    ("app_launch", "install_app"): ["install", "{app}"],
    ("app_launch", "close_app"): ["close", "{app}"],
    ("app_launch", "app_settings"): ["show", "{app}", "settings"],
    ("phone_call", "call_contact"): ["call", "{contact}"],
    ("phone_call", "call_number"): ["dial", "{number}"],
    ("phone_call", "redial"): ["call", "{contact}", "again"],
    ("phone_call", "voicemail"): ["play", "voicemail", "from", "{contact}"],
    ("knowledge_general", "define_word"): ["define", "{word}"],
    ("knowledge_general", "fact_lookup"): ["what", "is", "{topic}"],
    ("knowledge_general", "convert_units"): ["convert", "{number}", "{unit}"],
    ("knowledge_general", "spell_word"): ["spell", "{word}"],
    ("knowledge_sports", "team_score"): ["what", "was", "the", "{team}", "score"],
    ("knowledge_sports", "schedule"): ["when", "do", "the", "{team}", "play"],
    ("knowledge_sports", "player_stats"): ["stats", "for", "{player}"],
    ("knowledge_sports", "standings"): ["show", "{league}", "standings"],
    ("knowledge_weather", "forecast"): ["weather", "in", "{city}"],
    ("knowledge_weather", "temperature"): ["how", "hot", "is", "{city}"],
    ("knowledge_weather", "rain_check"): ["will", "it", "rain", "in", "{city}"],
    ("knowledge_weather", "sunrise"): ["when", "is", "sunrise", "in", "{city}"],
}
INTENT_TYPES = list(TEMPLATES)
DOMAINS = sorted({d for d, _ in INTENT_TYPES})
SLOTS = sorted({w[1:-1] for t in TEMPLATES.values() for w in t if w.startswith("{")})

# carrier-word drift used by the shifted distribution Q
SYNONYMS = {
    "play": "put", "find": "search", "open": "launch", "call": "ring", "dial": "phone",
    "show": "display", "what": "whats", "when": "whenever", "install": "download",
    "close": "quit", "define": "meaning", "weather": "forecast", "buy": "purchase",
    "stats": "numbers", "how": "hows", "spell": "letters", "convert": "change",
}

N_USERS = 100
PROFILE_VOLATILITY = 0.1  # chance a profile attribute is re-drawn for one request

_CONTEXT_NAMES = [
    "device_type", "is_driving", "time_of_day", "day_of_week", "locale", "headphones_connected",
    "screen_locked", "network_type", "battery_level", "music_subscription", "video_subscription",
    "home_location_known", "calendar_busy", "media_playing", "car_play_connected", "region",
]


@dataclass(frozen=True)
class GenConfig:
    n_requests: int = FULL_LABELED
    domains: int = 7
    mean_intents: float = 9.0
    rho: float = 0.8
    top1_error: float = 0.41
    tau: float = 1.0
    delta: float = 0.0
    token_drift: float = 0.0
    seed: int = 7
    same_type_prob: float = 0.1
    reinterpret_prob: float = 0.45

    def __post_init__(self):
        if self.domains != len(DOMAINS):
            raise ValidationError(f"the generator ships {len(DOMAINS)} domain templates")
        if not (1.0 <= self.mean_intents < MAX_INTENTS):
            raise ValidationError("mean_intents must be in [1, 43)")
        if not (0.0 <= self.rho <= 1.0):
            raise ValidationError("rho must be in [0, 1]")
        if not (0.0 <= self.top1_error < 1.0):
            raise ValidationError("top1_error must be in [0, 1)")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")

    def shifted(self, tau: float = 1.3, delta: float = 0.25, token_drift: float = 0.2) -> "GenConfig":
        return replace(self, tau=tau, delta=delta, token_drift=token_drift)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    @cached_property
    def _geometric_q(self) -> float:
        ks = np.arange(1, MAX_INTENTS + 1)

        def mean_minus_target(q):
            w = (1 - q) ** (ks - 1)
            return float((ks * w).sum() / w.sum()) - self.mean_intents

        if self.mean_intents <= 1.0:
            return 1.0
        return brentq(mean_minus_target, 1e-9, 1 - 1e-12)

    @cached_property
    def intent_count_pmf(self) -> np.ndarray:
        ks = np.arange(1, MAX_INTENTS + 1)
        w = (1 - self._geometric_q) ** (ks - 1)
        return w / w.sum()

    @cached_property
    def gold_top_prob(self) -> float:
        """P(gold listed first | >= 2 intents) giving the configured overall top-1 error."""
        multi = 1.0 - self.intent_count_pmf[0]
        return float(np.clip(1.0 - self.top1_error / multi, 0.0, 1.0))


@dataclass
class RequestRecord:
    request_id: str
    intents: list[IntentCandidate]
    info_state: InformationState

    @property
    def gold(self) -> int:
        rel = [it.relevance for it in self.intents]
        return int(np.argmax(rel))

    def validate_labels(self) -> None:
        rel = [it.relevance for it in self.intents]
        if rel.count(max(rel)) != 1:
            raise ValidationError(f"{self.request_id}: gold intent is not unique")

    def to_dict(self) -> dict:
        return {"request_id": self.request_id, "intents": [it.to_dict() for it in self.intents],
                "info_state": self.info_state.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "RequestRecord":
        return cls(str(d["request_id"]), [IntentCandidate.from_dict(x) for x in d["intents"]],
                   InformationState.from_dict(d["info_state"]))


# --------------------------------------------------------------------------
# static world: entity vocabularies and info-state schema
# --------------------------------------------------------------------------

_SYLLABLES = ["ka", "lo", "mi", "ra", "te", "su", "vo", "ne", "zi", "pa", "do", "re", "fa", "ti", "bu",
              "ge", "ho", "ja", "ku", "ly"]


@dataclass(frozen=True)
class _Attribute:
    name: str
    n_values: int
    source: str  # "type", "domain", "entity" or "context"
    perm: tuple[int, ...] = ()


class World:
    """Entity vocabularies and the information-state schema (fixed per world seed)."""

    def __init__(self, world_seed: int = 0):
        rng = np.random.default_rng([world_seed, 99])
        self.entities = {}
        for slot in SLOTS:
            n = 40 if slot not in ("number", "unit") else 25
            words = set()
            while len(words) < n:
                words.add("".join(rng.choice(_SYLLABLES, size=rng.integers(2, 4))))
            self.entities[slot] = sorted(words)
        attrs: list[_Attribute] = []
        for i in range(4):
            attrs.append(_Attribute(f"ctx_intent_{i}", len(INTENT_TYPES), "type",
                                    tuple(rng.permutation(len(INTENT_TYPES)).tolist())))
        for i in range(6):
            attrs.append(_Attribute(f"ctx_domain_{i}", len(DOMAINS), "domain",
                                    tuple(rng.permutation(len(DOMAINS)).tolist())))
        for i in range(2):
            attrs.append(_Attribute(f"known_entity_{i}", 20, "entity"))
        for name in _CONTEXT_NAMES:
            n = int(rng.integers(2, 8))
            attrs.append(_Attribute(name, n, "context", tuple(rng.integers(n, size=len(INTENT_TYPES)).tolist())))
        while len(attrs) < N_ATTRIBUTES:
            n = int(rng.integers(2, 13))
            attrs.append(_Attribute(f"attr_{len(attrs):03d}", n, "context",
                                    tuple(rng.integers(n, size=len(INTENT_TYPES)).tolist())))
        self.attributes = attrs
        # personal info and device state belong to a user and persist across requests
        context = [a for a in attrs if a.source == "context"]
        self.profiles = [{a.name: int(rng.integers(a.n_values)) for a in context} for _ in range(N_USERS)]

    @property
    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]


_WORLD = World()


def _entity_bucket(word: str, salt: int) -> int:
    return int.from_bytes(hashlib.blake2b(f"{salt}:{word}".encode(), digest_size=4).digest(), "little") % 20


def _fill(template: list[str], entities: dict[str, list[str]]) -> tuple[list[str], list[str]]:
    tokens, labels = [], []
    for w in template:
        if w.startswith("{"):
            slot = w[1:-1]
            for e in entities[slot]:
                tokens.append(e)
                labels.append(f"{slot}Name")
        else:
            tokens.append(w)
            labels.append("O")
    if tokens:
        labels[0] = "verb" if labels[0] == "O" else labels[0]
    return tokens, labels


def _sample_entities(template: list[str], rng, world: World) -> dict[str, list[str]]:
    out = {}
    for w in template:
        if w.startswith("{"):
            slot = w[1:-1]
            k = 1 if slot in ("number", "unit", "city", "app") else int(rng.integers(1, 3))
            out[slot] = [str(e) for e in rng.choice(world.entities[slot], size=k)]
    return out


def _reuse_entities(template: list[str], source: dict[str, list[str]], rng, world: World) -> dict[str, list[str]]:
    """Entities for a reinterpretation: the gold entity words under the new slot(s)."""
    words = [w for ws in source.values() for w in ws]
    out = {}
    for w in template:
        if w.startswith("{"):
            slot = w[1:-1]
            if words and not out:
                out[slot] = words
            else:
                out[slot] = [str(rng.choice(world.entities[slot]))]
    return out


def _shift_score(s: np.ndarray, tau: float, delta: float) -> np.ndarray:
    if tau == 1.0 and delta == 0.0:
        return s
    eps = 1e-6
    c = np.clip(s, eps, 1 - eps)
    logit = np.log(c) - np.log1p(-c)
    return 1.0 / (1.0 + np.exp(-(logit / tau + delta)))


def gen_request(cfg: GenConfig, rng: np.random.Generator, request_id: str = "r0",
                world: World = _WORLD) -> RequestRecord:
    k = int(rng.choice(np.arange(1, MAX_INTENTS + 1), p=cfg.intent_count_pmf))
    gold_type = int(rng.integers(len(INTENT_TYPES)))
    g_dom, _ = INTENT_TYPES[gold_type]
    g_tmpl = TEMPLATES[INTENT_TYPES[gold_type]]
    g_ent = _sample_entities(g_tmpl, rng, world)

    cands: list[tuple[int, dict[str, list[str]]]] = [(gold_type, g_ent)]
    for _ in range(k - 1):
        u = rng.random()
        if u < cfg.same_type_prob:
            t = gold_type
            ent = _sample_entities(g_tmpl, rng, world)
        elif u < cfg.same_type_prob + cfg.reinterpret_prob:
            t = int(rng.integers(len(INTENT_TYPES) - 1))
            t += t >= gold_type
            ent = _reuse_entities(TEMPLATES[INTENT_TYPES[t]], g_ent, rng, world)
        else:
            t = int(rng.integers(len(INTENT_TYPES) - 1))
            t += t >= gold_type
            ent = _sample_entities(TEMPLATES[INTENT_TYPES[t]], rng, world)
        cands.append((t, ent))

    # upstream confidence, sorted descending = list order
    conf = np.sort(rng.beta(2.0, 2.0, size=k))[::-1]
    if k == 1 or rng.random() < cfg.gold_top_prob:
        gold_pos = 0
    else:
        gold_pos = 1 + min(int(rng.geometric(0.45)) - 1, k - 2)
    order = [i for i in range(1, k)]
    rng.shuffle(order)
    order.insert(gold_pos, 0)

    intents = []
    for pos, ci in enumerate(order):
        t, ent = cands[ci]
        tokens, labels = _fill(TEMPLATES[INTENT_TYPES[t]], ent)
        if cfg.token_drift > 0:
            tokens = [SYNONYMS.get(w, w) if rng.random() < cfg.token_drift else w for w in tokens]
        scores = np.clip(conf[pos] + rng.normal(0.0, 0.08, size=N_SCORES), 0.0, 1.0)
        scores = _shift_score(scores, cfg.tau, cfg.delta)
        if ci == 0:
            rel = 2
        elif INTENT_TYPES[t][0] == g_dom:
            rel = 1
        else:
            rel = 0
        intents.append(IntentCandidate([round(float(s), 6) for s in scores], tokens, labels, rel))

    gold_entity = next(iter(g_ent.values()))[0]
    profile = world.profiles[int(rng.integers(len(world.profiles)))]
    values = []
    for a in world.attributes:
        if rng.random() >= cfg.rho:
            if a.source == "context" and rng.random() >= PROFILE_VOLATILITY:
                v = profile[a.name]
            else:
                v = int(rng.integers(a.n_values))
        elif a.source in ("type", "context"):
            v = a.perm[gold_type]
        elif a.source == "domain":
            v = a.perm[DOMAINS.index(g_dom)]
        else:
            v = _entity_bucket(gold_entity, int(a.name[-1]))
        values.append((a.name, f"v{v}"))
    return RequestRecord(request_id, intents, InformationState(values))


def _generate(cfg: GenConfig, stream: int, start: int, count: int, prefix: str) -> list[RequestRecord]:
    out = []
    for i in range(start, start + count):
        rng = np.random.default_rng([cfg.seed, stream, i])
        out.append(gen_request(cfg, rng, f"{prefix}-{i:06d}"))
    return out


def split_sizes(scale: float) -> dict[str, int]:
    return {name: int(round(n * scale)) for name, n in SPLIT_RATIOS}


def gen_labeled(cfg: GenConfig, scale: float | None = None) -> dict[str, list[RequestRecord]]:
    """Disjoint train/val/test splits in the 12:4:8 ratio.

    ``scale`` multiplies the full 24,000-request size; if omitted the total
    is ``cfg.n_requests``.
    """
    if scale is None:
        scale = cfg.n_requests / FULL_LABELED
    sizes = split_sizes(scale)
    out, start = {}, 0
    for name, n in sizes.items():
        out[name] = _generate(cfg, STREAM_LABELED, start, n, name)
        start += n
    return out


def gen_unlabeled_pair(cfg: GenConfig, shifted: GenConfig | None = None, n: int | None = None,
                       scale: float | None = None) -> tuple[list[RequestRecord], list[RequestRecord]]:
    """Two unlabeled sets: P from ``cfg``, Q from ``shifted`` (default ``cfg.shifted()``).

    Relevance labels are zeroed; only scores of the top predicted intent are used downstream.
    """
    if n is None:
        n = int(round(FULL_UNLABELED * (scale if scale is not None else 1.0)))
    shifted = shifted or cfg.shifted()
    p = _generate(cfg, STREAM_P, 0, n, "p")
    q = _generate(shifted, STREAM_Q, 0, n, "q")
    for rec in p + q:
        for it in rec.intents:
            it.relevance = 0
    return p, q

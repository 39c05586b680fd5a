"""End-to-end EnergyRank model: frozen (or fine-tuned) MSDAE + Siamese ranker.

Also holds the run-level helpers shared by the CLI and the acceptance
suite: build a model from training records, train it, evaluate it, and
save/load it as a checkpoint.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint, losses, msdae, ranker
from .baseline import LogRegModel
from .errors import CompatibilityError, ValidationError
from .evaluator import EvalReport, ScorePDF, bucketize, report, robustness
from .featurizer import FeaturizerConfig, InfoStateVocab, encode_info_state, encode_intents
from .trainer import FitResult, TrainConfig, fit

log = logging.getLogger(__name__)

CHUNK = 256


@dataclass
class PipelineConfig:
    """Everything that defines one training run besides the data."""

    train: TrainConfig = field(default_factory=TrainConfig)
    corruption: msdae.CorruptionConfig = field(default_factory=msdae.CorruptionConfig)
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)
    dae_epochs: int = 20
    dae_batch_size: int = 32
    dae_lr: float = 1e-3
    finetune_dae: bool = False
    model: str = "energyrank"

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "corruption": self.corruption.to_dict(),
                "featurizer": asdict(self.featurizer), "dae_epochs": self.dae_epochs,
                "dae_batch_size": self.dae_batch_size, "dae_lr": self.dae_lr,
                "finetune_dae": self.finetune_dae, "model": self.model}


class RankBatch:
    def __init__(self, x: np.ndarray, seg: np.ndarray, states: np.ndarray, relevance: list[np.ndarray]):
        self.x = x
        self.seg = seg
        self.states = states
        self.relevance = relevance


class RankSet:
    """Per-request intent inputs (fused vectors, or raw triples when fine-tuning) and state indices."""

    def __init__(self, inputs: list[np.ndarray], states: np.ndarray, relevance: list[np.ndarray]):
        self.requests = list(zip(inputs, states))
        self.relevance = relevance
        self.gold = np.array([int(np.argmax(r)) for r in relevance], dtype=np.int64)

    def batch(self, idx) -> RankBatch:
        xs = [self.requests[i][0] for i in idx]
        seg = np.concatenate([np.full(len(x), k, dtype=np.intp) for k, x in enumerate(xs)])
        states = np.stack([self.requests[i][1] for i in idx])
        return RankBatch(np.concatenate(xs), seg, states, [self.relevance[i] for i in idx])


class EnergyRankModel:
    kind = "energyrank"

    def __init__(self, vocab: InfoStateVocab, rng: np.random.Generator,
                 featurizer: FeaturizerConfig = FeaturizerConfig(), finetune_dae: bool = False,
                 dae_params: dict[str, ad.Tensor] | None = None, dtype=np.float32):
        self.vocab = vocab
        self.featurizer = featurizer
        self.finetune_dae = finetune_dae
        self.dae = dae_params if dae_params is not None else msdae.init_params(rng, dtype)
        self.tower = ranker.init_tower(rng, dtype)
        self.embedder = ranker.InfoStateEmbedder(vocab.table_sizes(), rng, dtype)

    # -- parameters --------------------------------------------------------

    def trainable(self) -> dict[str, ad.Tensor]:
        out = dict(self.tower)
        out.update(self.embedder.params)
        if self.finetune_dae:
            out.update(self.dae)
        return out

    def all_params(self) -> dict[str, ad.Tensor]:
        out = dict(self.dae)
        out.update(self.tower)
        out.update(self.embedder.params)
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        snap = {k: p.data.copy() for k, p in self.all_params().items()}
        snap["embed.bn.running_mean"] = self.embedder.bn.running_mean.copy()
        snap["embed.bn.running_var"] = self.embedder.bn.running_var.copy()
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.all_params().items():
            p.data[...] = snap[k]
        self.embedder.bn.running_mean = np.array(snap["embed.bn.running_mean"], dtype=self.embedder.bn.running_mean.dtype)
        self.embedder.bn.running_var = np.array(snap["embed.bn.running_var"], dtype=self.embedder.bn.running_var.dtype)

    def astype(self, dtype) -> "EnergyRankModel":
        """Deep copy with every parameter cast (used for float64 gradient checks)."""
        clone = object.__new__(EnergyRankModel)
        clone.vocab, clone.featurizer, clone.finetune_dae = self.vocab, self.featurizer, self.finetune_dae
        snap = self.snapshot()

        def cast(d):
            return {k: ad.Tensor(snap[k].astype(dtype), requires_grad=True, name=k) for k in d}

        clone.dae = cast(self.dae)
        clone.tower = cast(self.tower)
        emb = object.__new__(ranker.InfoStateEmbedder)
        emb.params = cast(self.embedder.params)
        bn = object.__new__(type(self.embedder.bn))
        bn.momentum, bn.eps = self.embedder.bn.momentum, self.embedder.bn.eps
        bn.gamma, bn.beta = emb.params["embed.bn.gamma"], emb.params["embed.bn.beta"]
        bn.running_mean = snap["embed.bn.running_mean"].astype(dtype)
        bn.running_var = snap["embed.bn.running_var"].astype(dtype)
        emb.bn = bn
        clone.embedder = emb
        return clone

    # -- data --------------------------------------------------------------

    def encode_records(self, records) -> tuple[list[np.ndarray], np.ndarray]:
        """Model inputs for each request and the (n, 114) state index matrix."""
        inputs = []
        for rec in records:
            stacked = encode_intents(rec.intents, self.featurizer)
            inputs.append(stacked if self.finetune_dae else msdae.fused_representation(stacked, self.dae))
        states = np.stack([encode_info_state(r.info_state, self.vocab) for r in records]) if records else \
            np.zeros((0, len(self.vocab.tables)), dtype=np.int64)
        return inputs, states

    def prepare(self, records) -> RankSet:
        if self.finetune_dae:
            inputs, states = self.encode_records(records)
        else:
            # encode all intents in one pass: much faster than per-request DAE calls
            stacked = [encode_intents(r.intents, self.featurizer) for r in records]
            flat = msdae.fused_representation(np.concatenate(stacked), self.dae)
            bounds = np.cumsum([0] + [len(s) for s in stacked])
            inputs = [flat[bounds[i]:bounds[i + 1]] for i in range(len(records))]
            states = np.stack([encode_info_state(r.info_state, self.vocab) for r in records])
        rel = [np.array([it.relevance for it in r.intents]) for r in records]
        return RankSet(inputs, states, rel)

    # -- forward -----------------------------------------------------------

    def intent_points(self, x: np.ndarray) -> ad.Tensor:
        if self.finetune_dae:
            src = {"s": x[:, :121], "t": x[:, 121:1121], "c": x[:, 1121:]}
            fused, _ = msdae.encode({k: v.astype(self.dae["dae.fuse.W"].dtype) for k, v in src.items()}, self.dae)
        else:
            fused = ad.Tensor(x)
        return ranker.tower_forward(fused, self.tower)

    def batch_scores(self, x: np.ndarray, seg: np.ndarray, states: np.ndarray, mode: str) -> ad.Tensor:
        if mode == "train" and len(states) < 2:
            mode = "infer"
        emb = ranker.embed_info_state(states, self.embedder, mode)
        p_st = ranker.tower_forward(emb, self.tower)
        p_int = self.intent_points(x)
        e = ranker.energy_tensor(p_int, ad.take_rows(p_st, seg))
        return ranker.score_tensor(e)

    def batch_loss(self, batch: RankBatch, cfg: TrainConfig, rng) -> ad.Tensor:
        scores = self.batch_scores(batch.x, batch.seg, batch.states, "train")
        if cfg.loss == "listwise":
            perms, offset = [], 0
            for rel in batch.relevance:
                perms.append(offset + losses.relevance_permutation(rel, rng))
                offset += len(rel)
            return losses.listmle(scores, perms)
        return losses.pairwise_batch_loss(scores, losses.pair_index(batch.relevance), cfg.phi)

    def request_scores(self, requests) -> list[np.ndarray]:
        out = []
        with ad.no_record():
            for i in range(0, len(requests), CHUNK):
                chunk = requests[i:i + CHUNK]
                x = np.concatenate([r[0] for r in chunk])
                seg = np.concatenate([np.full(len(r[0]), k, dtype=np.intp) for k, r in enumerate(chunk)])
                s = self.batch_scores(x, seg, np.stack([r[1] for r in chunk]), "infer").data
                bounds = np.cumsum([0] + [len(r[0]) for r in chunk])
                out.extend(s[bounds[k]:bounds[k + 1]] for k in range(len(chunk)))
        return out

    def predict_top(self, requests) -> np.ndarray:
        return np.array([ranker.stable_rank(s)[0] for s in self.request_scores(requests)], dtype=np.int64)

    def score_records(self, records) -> list[np.ndarray]:
        out = []
        for i in range(0, len(records), CHUNK):
            out.extend(self.request_scores(self.prepare(records[i:i + CHUNK]).requests))
        return out


# --------------------------------------------------------------------------
# run helpers
# --------------------------------------------------------------------------

def pretrain_dae(records, cfg: PipelineConfig, seed: int, dae_params=None) -> msdae.PretrainResult:
    stacked = np.concatenate([encode_intents(r.intents, cfg.featurizer) for r in records])
    params = dae_params if dae_params is not None else msdae.init_params(np.random.default_rng([seed, 1]))
    return msdae.pretrain(stacked, params, cfg.corruption, epochs=cfg.dae_epochs, batch_size=cfg.dae_batch_size,
                          base_lr=cfg.dae_lr, lr_decay=cfg.train.lr_decay, seed=seed)


@dataclass
class RunResult:
    model: object
    fit: FitResult
    dae_curve: list[float]


def train_model(train_records, val_records, cfg: PipelineConfig, dae_params=None,
                on_epoch=None) -> RunResult:
    """Build, (pre)train and fit one model; the seed comes from ``cfg.train.seed``."""
    if not train_records or not val_records:
        raise ValidationError("training and validation sets must be non-empty")
    seed = cfg.train.seed
    if cfg.model == "logreg":
        model = LogRegModel(cfg.featurizer)
        dae_curve: list[float] = []
    elif cfg.model == "energyrank":
        vocab = InfoStateVocab.build(r.info_state for r in train_records)
        dae_curve = []
        if dae_params is None:
            res = pretrain_dae(train_records, cfg, seed)
            dae_params, dae_curve = res.params, res.loss_curve
        model = EnergyRankModel(vocab, np.random.default_rng([seed, 2]), cfg.featurizer,
                                cfg.finetune_dae, dae_params)
    else:
        raise ValidationError(f"unknown model kind {cfg.model!r}")
    result = fit(model.prepare(train_records), model.prepare(val_records), model, cfg.train, on_epoch)
    return RunResult(model, result, dae_curve)


def evaluate_run(model, records) -> EvalReport:
    scores = model.score_records(records)
    preds = [int(ranker.stable_rank(s)[0]) for s in scores]
    return report(preds, [r.gold for r in records])


def top_scores(model, records) -> np.ndarray:
    return np.array([float(np.max(s)) for s in model.score_records(records)])


def robustness_run(model, p_records, q_records) -> tuple[float, ScorePDF, ScorePDF]:
    p_pdf = bucketize(top_scores(model, p_records))
    q_pdf = bucketize(top_scores(model, q_records))
    return robustness(p_pdf, q_pdf), p_pdf, q_pdf


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def featurizer_meta(f: FeaturizerConfig) -> dict:
    d = asdict(f)
    d["fingerprint"] = f.fingerprint()
    return d


def save_model(path, model, meta_extra: dict | None = None) -> None:
    meta = {"kind": model.kind, "featurizer": featurizer_meta(model.featurizer)}
    if model.kind == "energyrank":
        blocks = model.snapshot()
        meta["vocab"] = model.vocab.to_dict()
        meta["finetune_dae"] = model.finetune_dae
    else:
        blocks = model.snapshot()
    meta.update(meta_extra or {})
    checkpoint.save(path, blocks, meta)


def load_model(path, featurizer: FeaturizerConfig | None = None):
    blocks, meta = checkpoint.load(path)
    fmeta = dict(meta["featurizer"])
    stored_fp = fmeta.pop("fingerprint")
    stored = FeaturizerConfig(**fmeta)
    if stored.fingerprint() != stored_fp:
        raise CompatibilityError("checkpoint featurizer fingerprint is inconsistent with its salts")
    if featurizer is not None and featurizer.fingerprint() != stored_fp:
        raise CompatibilityError(
            f"checkpoint was trained with featurizer {stored_fp}, current featurizer is {featurizer.fingerprint()}")
    if meta["kind"] == "logreg":
        model = LogRegModel(stored)
    elif meta["kind"] == "energyrank":
        vocab = InfoStateVocab.from_dict(meta["vocab"])
        model = EnergyRankModel(vocab, np.random.default_rng(0), stored, bool(meta.get("finetune_dae", False)))
    else:
        raise ValidationError(f"unknown model kind {meta['kind']!r} in checkpoint")
    model.restore(blocks)
    return model, meta

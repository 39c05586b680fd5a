"""Finite-difference gradient checks over the model's building blocks.

Used by the ``gradcheck`` command and the test suite.  Every check builds
its own float64 parameters from ``seed`` so results are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import datagen, losses, msdae, ranker
from .featurizer import InfoStateVocab, encode_intents
from .trainer import TrainConfig

UNIT_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    seed: int
    report: ad.GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:<22s} seed={self.seed:<3d} worst={self.report.worst:.2e} " \
               f"tol={self.report.tolerance:.0e} kinks={self.report.kinks}"


def _param(rng, shape, scale=0.5, name=None):
    return ad.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, name=name)


def check_unit_ops(seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 10])
    w = _param(rng, (6, 5), name="W")
    b = _param(rng, (5,), name="b")
    x = ad.Tensor(rng.normal(size=(4, 6)))
    y = ad.Tensor(rng.normal(size=(4, 5)))
    target = ad.Tensor(rng.dirichlet(np.ones(5), size=4))

    def closure():
        h = ad.add(ad.matmul(x, w), b)
        a = ad.sum_(ad.l1_distance(ad.tanh(h), ad.sigmoid(y)))
        c = ad.cross_entropy_with_logits(target, h, axis=1)
        return ad.add(a, ad.add(c, ad.sum_(ad.relu(h))))

    return CheckResult("unit-ops", seed, ad.check_gradients(closure, [w, b], UNIT_TOLERANCE, rng=rng))


def check_gru_step(seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 11])
    params = ranker.init_gru("g", rng, np.float64)
    x = ad.Tensor(rng.normal(size=(3, ranker.FRAME_DIM)))
    h = _param(rng, (3, ranker.GRU_HIDDEN), name="h")
    probe = rng.normal(size=(3, ranker.GRU_HIDDEN))

    def closure():
        return ad.sum_(ad.mul(ranker.gru_step(x, h, params, "g"), ad.Tensor(probe)))

    return CheckResult("gru-step", seed,
                       ad.check_gradients(closure, {**params, "h": h}, UNIT_TOLERANCE, max_entries=6, rng=rng))


def _tiny_records(seed: int, n: int = 4):
    cfg = datagen.GenConfig(seed=seed, mean_intents=4.0)
    return datagen.gen_labeled(cfg, scale=3 * n / datagen.FULL_LABELED)["train"][:n]


def check_msdae(seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 12])
    params = msdae.init_params(rng, np.float64)
    records = _tiny_records(seed, 2)
    clean = np.concatenate([encode_intents(r.intents) for r in records])[:3].astype(np.float64)
    cfg = msdae.CorruptionConfig()

    def closure():
        return msdae.dae_loss(clean, params, cfg, np.random.default_rng(seed))

    return CheckResult("msdae", seed,
                       ad.check_gradients(closure, params, UNIT_TOLERANCE, max_entries=2, rng=rng))


def check_energy_model(seed: int, loss: str = "pairwise") -> CheckResult:
    """Full ranker (embedder, shared tower, energy, loss) on a 3-request batch."""
    from .pipeline import EnergyRankModel

    rng = np.random.default_rng([seed, 13])
    records = _tiny_records(seed, 3)
    vocab = InfoStateVocab.build(r.info_state for r in records)
    model = EnergyRankModel(vocab, rng).astype(np.float64)
    prepared = model.prepare(records)
    batch = prepared.batch(np.arange(len(records)))
    batch.x = batch.x.astype(np.float64)
    cfg = TrainConfig(loss=loss, phi=losses.PhiKind.LOGISTIC.value)
    # every 19th embedding table: the tables share one code path and probing all 114 is slow
    params = {k: p for k, p in model.trainable().items() if not k.startswith("embed.attr") or int(k[10:]) % 19 == 0}

    def closure():
        return model.batch_loss(batch, cfg, np.random.default_rng(seed))

    return CheckResult(f"energy-model/{loss}", seed,
                       ad.check_gradients(closure, params, MODEL_TOLERANCE, max_entries=1, rng=rng))


def run_all(seeds) -> list[CheckResult]:
    out = []
    for s in seeds:
        out += [check_unit_ops(s), check_gru_step(s), check_msdae(s),
                check_energy_model(s, "pairwise"), check_energy_model(s, "listwise")]
    return out

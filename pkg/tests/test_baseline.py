import numpy as np
import pytest

from energyrank import baseline, datagen, pipeline
from energyrank import autodiff as ad
from energyrank.errors import ShapeError
from energyrank.trainer import TrainConfig


@pytest.fixture(scope="module")
def records():
    return datagen.gen_labeled(datagen.GenConfig(seed=21), scale=0.02)


def test_feature_shape(records):
    rec = records["train"][0]
    f = baseline.request_features(rec)
    assert f.shape == (len(rec.intents), baseline.FEATURE_DIM) == (len(rec.intents), 349)
    # the hashed state block is shared by every intent of a request
    assert np.all(f[:, -128:] == f[0, -128:])


def test_zero_weights_score_half():
    s = baseline.baseline_score(np.ones((3, 349)), baseline.LinearRankerParams.zeros())
    np.testing.assert_array_equal(s.data, [0.5, 0.5, 0.5])


def test_score_is_sigmoid_of_affine():
    rng = np.random.default_rng(0)
    p = baseline.LinearRankerParams.zeros(dtype=np.float64)
    p.w.data[:] = rng.normal(size=349)
    p.b.data[:] = 0.3
    x = rng.random((4, 349))
    np.testing.assert_allclose(baseline.baseline_score(ad.Tensor(x), p).data, 1 / (1 + np.exp(-(x @ p.w.data + 0.3))),
                               rtol=1e-12)


def test_width_mismatch():
    with pytest.raises(ShapeError):
        baseline.baseline_score(np.ones((2, 10)), baseline.LinearRankerParams.zeros())


def test_gradient():
    rng = np.random.default_rng(1)
    p = baseline.LinearRankerParams.zeros(dtype=np.float64)
    p.w.data[:] = rng.normal(0, 0.1, size=349)
    x = rng.random((5, 349))
    rep = ad.check_gradients(lambda: ad.sum_(baseline.baseline_score(x, p)), {"w": p.w, "b": p.b}, 1e-6,
                             max_entries=10, rng=rng)
    assert rep.passed, str(rep)


@pytest.mark.parametrize("loss", ["pairwise", "listwise"])
def test_training_beats_untrained(records, loss):
    cfg = pipeline.PipelineConfig(train=TrainConfig(seed=3, max_epochs=15, loss=loss), model="logreg")
    res = pipeline.train_model(records["train"], records["val"], cfg)
    assert res.fit.history[-1].train_loss < res.fit.initial_train_loss
    untrained = pipeline.evaluate_run(baseline.LogRegModel(), records["test"]).error_rate
    # zero weights tie everything and pick the first intent
    assert untrained == np.mean([r.gold != 0 for r in records["test"]])

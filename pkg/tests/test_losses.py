import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energyrank import autodiff as ad
from energyrank import losses
from energyrank.errors import ValidationError
from energyrank.losses import LabeledScoredList, PhiKind


def pl_oracle(scores, perm):
    """Plackett-Luce negative log-likelihood written out term by term."""
    s = [scores[i] for i in perm]
    total = 0.0
    for i in range(len(s)):
        total += -s[i] + math.log(sum(math.exp(x) for x in s[i:]))
    return total


class TestPhi:
    def test_zero_identities(self):
        assert abs(losses.phi("lf", 0.0) - math.log(2)) < 1e-15
        assert losses.phi("hf", 0.0) == 1.0
        assert losses.phi("ef", 0.0) == 1.0

    def test_hinge_margin(self):
        assert losses.phi("hinge", 2.0) == 0.0

    def test_logistic_one(self):
        assert round(losses.phi("logistic", 1.0), 4) == 0.3133

    def test_parse(self):
        assert PhiKind.parse("LF") is PhiKind.LOGISTIC
        assert PhiKind.parse("exponential").short == "ef"
        with pytest.raises(ValidationError):
            PhiKind.parse("squared")

    @pytest.mark.parametrize("kind", ["lf", "hf", "ef"])
    def test_tensor_and_float_agree(self, kind):
        z = np.linspace(-2, 2, 9)
        np.testing.assert_allclose(losses.phi(kind, ad.Tensor(z)).data, losses.phi(kind, z), rtol=1e-12)

    @pytest.mark.parametrize("kind", ["lf", "hf", "ef"])
    def test_monotone_non_increasing(self, kind):
        z = np.linspace(-3, 3, 101)
        assert np.all(np.diff(losses.phi(kind, z)) <= 0)


class TestPairwise:
    def test_single_intent(self):
        assert losses.pairwise_loss(LabeledScoredList([0.3], [2]), "lf") == 0.0

    def test_all_tied(self):
        assert losses.pairwise_loss(LabeledScoredList([0.3, 0.9, 0.1], [1, 1, 1]), "ef") == 0.0

    def test_hand_value(self):
        v = losses.pairwise_loss(LabeledScoredList([0.6, 0.4], [1, 0]), "lf")
        assert abs(v - math.log1p(math.exp(-0.2))) < 1e-12
        assert round(v, 4) == 0.5981

    def test_margin_hinge(self):
        assert losses.pairwise_loss(LabeledScoredList([5.0, 1.0], [1, 0]), "hf") == 0.0

    def test_mean_over_pairs(self):
        lst = LabeledScoredList([0.9, 0.5, 0.2], [2, 1, 0])
        pairs = [(0.9 - 0.5), (0.9 - 0.2), (0.5 - 0.2)]
        expected = np.mean([losses.phi("lf", z) for z in pairs])
        assert abs(losses.pairwise_loss(lst, "lf") - expected) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            LabeledScoredList([0.1, 0.2], [1])

    def test_batch_is_mean_of_lists(self):
        a = LabeledScoredList([0.9, 0.1], [1, 0])
        b = LabeledScoredList([0.2, 0.7, 0.4], [0, 2, 1])
        s = ad.Tensor(np.array(a.scores + b.scores))
        batch = float(losses.pairwise_batch_loss(s, losses.pair_index([a.relevance, b.relevance]), "lf").data)
        assert abs(batch - 0.5 * (losses.pairwise_loss(a, "lf") + losses.pairwise_loss(b, "lf"))) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=8), st.floats(-5, 5), st.sampled_from(["lf", "hf", "ef"]))
    def test_shift_invariance(self, scores, c, kind):
        rel = list(range(len(scores)))
        a = losses.pairwise_loss(LabeledScoredList(scores, rel), kind)
        b = losses.pairwise_loss(LabeledScoredList([x + c for x in scores], rel), kind)
        assert abs(a - b) < 1e-9 * max(1.0, abs(a))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=8), st.floats(0, 2), st.sampled_from(["lf", "hf", "ef"]))
    def test_lowering_worst_item_never_hurts(self, scores, delta, kind):
        rel = [1] * (len(scores) - 1) + [0]
        base = losses.pairwise_loss(LabeledScoredList(scores, rel), kind)
        lowered = scores[:-1] + [scores[-1] - delta]
        assert losses.pairwise_loss(LabeledScoredList(lowered, rel), kind) <= base + 1e-12


class TestListwise:
    def test_single(self):
        assert losses.listwise_loss(LabeledScoredList([3.7], [0]), np.random.default_rng(0)) == 0.0

    def test_uniform_three(self):
        v = losses.listwise_loss(LabeledScoredList([0.4, 0.4, 0.4], [2, 1, 0]), np.random.default_rng(0))
        assert abs(v - math.log(6)) < 1e-9
        assert round(v, 4) == 1.7918

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            s = rng.normal(size=n).tolist()
            rel = rng.integers(0, 3, size=n)
            perm = losses.relevance_permutation(rel, np.random.default_rng(1))
            got = float(losses.listmle(ad.Tensor(np.array(s)), [perm]).data)
            assert abs(got - pl_oracle(s, perm)) < 1e-9

    def test_permutation_respects_relevance(self):
        rel = np.array([0, 2, 1, 2, 0])
        for seed in range(10):
            p = losses.relevance_permutation(rel, np.random.default_rng(seed))
            assert list(rel[p]) == sorted(rel, reverse=True)

    def test_ties_are_shuffled(self):
        rel = np.zeros(4, dtype=int)
        seen = {tuple(losses.relevance_permutation(rel, np.random.default_rng(s))) for s in range(50)}
        assert len(seen) > 10

    def test_stable_for_large_scores(self):
        v = losses.listwise_loss(LabeledScoredList([1000.0, 999.0, -1000.0], [2, 1, 0]), np.random.default_rng(0))
        assert math.isfinite(v) and v >= 0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(-5, 5))
    def test_nonnegative_and_shift_invariant(self, scores, c):
        perm = np.arange(len(scores))
        a = float(losses.listmle(ad.Tensor(np.array(scores)), [perm]).data)
        b = float(losses.listmle(ad.Tensor(np.array(scores) + c), [perm]).data)
        assert a >= -1e-12 and abs(a - b) < 1e-9 * max(1.0, a)


@pytest.mark.parametrize("kind", ["lf", "hf", "ef", "listwise"])
def test_loss_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(3)
    s = ad.Tensor(rng.normal(size=9), requires_grad=True, name="s")
    rel = [rng.integers(0, 3, size=4), rng.integers(0, 3, size=5)]
    perms = [losses.relevance_permutation(rel[0], rng), 4 + losses.relevance_permutation(rel[1], rng)]
    pairs = losses.pair_index(rel)

    def closure():
        if kind == "listwise":
            return losses.listmle(s, perms)
        return losses.pairwise_batch_loss(s, pairs, kind)

    rep = ad.check_gradients(closure, [s], tolerance=1e-6, step=1e-6, max_entries=None)
    assert rep.passed, str(rep)

import numpy as np
import pytest
from scipy import stats

from energyrank import datagen, dataset
from energyrank.errors import ValidationError
from energyrank.featurizer import N_ATTRIBUTES


@pytest.fixture(scope="module")
def calib_splits():
    # test split of 5,000 requests
    return datagen.gen_labeled(datagen.GenConfig(seed=11), scale=5000 / 8000)


def gold_kind(rec):
    g = rec.intents[rec.gold]
    return (g.tokens[0] if g.tokens else "", tuple(g.slot_labels))


def independence_pvalues(records):
    """Chi-square p-value of (attribute value, gold intent kind) independence per attribute."""
    kinds = {k: i for i, k in enumerate(sorted({gold_kind(r) for r in records}))}
    y = np.array([kinds[gold_kind(r)] for r in records])
    out = []
    for a in range(N_ATTRIBUTES):
        vals = [r.info_state.values[a] for r in records]
        codes = {v: i for i, v in enumerate(sorted(set(vals)))}
        table = np.zeros((len(codes), len(kinds)))
        np.add.at(table, ([codes[v] for v in vals], y), 1)
        table = table[table.sum(axis=1) > 0]
        out.append(1.0 if len(table) < 2 else stats.chi2_contingency(table)[1])
    return np.array(out)


class TestRequests:
    def test_intent_count_range_and_mean(self, calib_splits):
        counts = np.array([len(r.intents) for s in calib_splits.values() for r in s])
        assert counts.min() >= 1 and counts.max() <= datagen.MAX_INTENTS
        assert len(counts) >= 10_000
        assert abs(counts.mean() - 9.0) <= 0.3

    def test_pmf_mean_is_configured(self):
        pmf = datagen.GenConfig(mean_intents=5.0).intent_count_pmf
        assert abs((np.arange(1, 44) * pmf).sum() - 5.0) < 1e-9

    def test_unique_gold_and_state_size(self, calib_splits):
        for rec in calib_splits["val"][:500]:
            rec.validate_labels()
            assert len(rec.info_state.attributes) == N_ATTRIBUTES

    def test_first_hypothesis_calibration(self, calib_splits):
        test = calib_splits["test"]
        assert len(test) == 5000
        err = np.mean([r.gold != 0 for r in test])
        assert abs(err - 0.41) <= 0.02

    def test_splits_disjoint_and_sized(self):
        splits = datagen.gen_labeled(datagen.GenConfig(seed=1), scale=0.01)
        assert {k: len(v) for k, v in splits.items()} == {"train": 120, "val": 40, "test": 80}
        ids = [r.request_id for s in splits.values() for r in s]
        assert len(ids) == len(set(ids))

    @pytest.mark.parametrize("scale", [0.001, 0.05, 0.5])
    def test_split_ratio(self, scale):
        sizes = datagen.split_sizes(scale)
        assert abs(sizes["train"] - 1.5 * sizes["test"]) <= 1.5 and abs(sizes["val"] - 0.5 * sizes["test"]) <= 1

    def test_deterministic(self, tmp_path):
        cfg = datagen.GenConfig(seed=5)
        a = datagen.gen_labeled(cfg, scale=0.002)["train"]
        b = datagen.gen_labeled(cfg, scale=0.002)["train"]
        dataset.write_jsonl(a, tmp_path / "a.jsonl")
        dataset.write_jsonl(b, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_roundtrip_file(self, tmp_path):
        recs = datagen.gen_labeled(datagen.GenConfig(seed=2), scale=0.001)["val"]
        dataset.write_jsonl(recs, tmp_path / "v.jsonl")
        back = dataset.read_jsonl(tmp_path / "v.jsonl", labeled=True)
        assert [dataset.dumps_record(r) for r in back] == [dataset.dumps_record(r) for r in recs]

    def test_malformed_line(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text('{"request_id": "x"}\n')
        with pytest.raises(ValidationError):
            dataset.read_jsonl(tmp_path / "bad.jsonl")

    @pytest.mark.parametrize("kw", [dict(rho=1.5), dict(mean_intents=0.5), dict(top1_error=1.0),
                                    dict(tau=0.0), dict(domains=3)])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            datagen.GenConfig(**kw)


class TestInformationState:
    def test_rho_zero_is_independent_of_gold(self):
        recs = [datagen.gen_request(datagen.GenConfig(rho=0.0, seed=3), np.random.default_rng([3, 0, i]))
                for i in range(5000)]
        p = independence_pvalues(recs)
        # Bonferroni over 114 attributes at family-wise level 0.001
        assert p.min() * N_ATTRIBUTES > 1e-3

    def test_rho_positive_is_informative(self):
        recs = [datagen.gen_request(datagen.GenConfig(rho=0.8, seed=3), np.random.default_rng([3, 0, i]))
                for i in range(1000)]
        assert (independence_pvalues(recs) < 1e-6).sum() > N_ATTRIBUTES // 2


class TestShift:
    def test_unlabeled_pair(self):
        cfg = datagen.GenConfig(seed=4)
        p, q = datagen.gen_unlabeled_pair(cfg, n=200)
        assert len(p) == len(q) == 200
        assert all(it.relevance == 0 for r in p + q for it in r.intents)
        top_p = np.mean([max(r.intents[0].scores) for r in p])
        top_q = np.mean([max(r.intents[0].scores) for r in q])
        assert top_p != top_q

    def test_shifted_config(self):
        s = datagen.GenConfig().shifted()
        assert (s.tau, s.delta, s.token_drift) == (1.3, 0.25, 0.2)
        assert s.fingerprint() != datagen.GenConfig().fingerprint()

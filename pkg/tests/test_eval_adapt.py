import numpy as np
import pytest

from disentangle_seg.core import Dataset
from disentangle_seg.eval_adapt import (
    adapt, dice_score, evaluate, split_for_adaptation,
)
from disentangle_seg.networks import ArchConfig, ModelBundle
from disentangle_seg.synth import CANONICAL_DOMAINS, synth_domain_dataset

ARCH = ArchConfig(resolution=32, channels=(8, 16), mine_hidden=16)


@pytest.fixture(scope="module")
def dataset():
    return synth_domain_dataset(CANONICAL_DOMAINS["A"], 24, 5, 32)


class TestDiceScore:
    def test_identity(self):
        m = np.zeros((8, 8)); m[2:5, 2:5] = 1.0
        assert dice_score(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8)); a[0, 0] = 1.0
        b = np.zeros((8, 8)); b[7, 7] = 1.0
        assert dice_score(a, b) == 0.0

    def test_half_overlap(self):
        m = np.zeros((4, 4)); m[0, 0] = m[0, 1] = 1.0
        l = np.zeros((4, 4)); l[0, 1] = l[0, 2] = 1.0
        assert dice_score(m, l) == pytest.approx(0.5)

    def test_both_empty(self):
        z = np.zeros((4, 4))
        assert dice_score(z, z) == 1.0

    def test_one_empty(self):
        z = np.zeros((4, 4))
        m = z.copy(); m[0, 0] = 1.0
        assert dice_score(m, z) == 0.0
        assert dice_score(z, m) == 0.0

    def test_thresholding(self):
        l = np.ones((2, 2))
        probs = np.full((2, 2), 0.6)
        assert dice_score(probs, l, threshold=0.5) == 1.0
        assert dice_score(probs, l, threshold=0.7) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_score(np.zeros((2, 2)), np.zeros((3, 3)))


class TestEvaluate:
    def test_deterministic_and_readonly(self, dataset):
        bundle = ModelBundle.build(ARCH, 0)
        before = {n: bundle.parameter_hash(n) for n in ModelBundle.COLLECTIONS}
        r1 = evaluate(bundle, dataset)
        r2 = evaluate(bundle, dataset)
        assert r1.per_sample_dsc == r2.per_sample_dsc
        after = {n: bundle.parameter_hash(n) for n in ModelBundle.COLLECTIONS}
        assert before == after

    def test_report_statistics_consistent(self, dataset):
        bundle = ModelBundle.build(ARCH, 0)
        r = evaluate(bundle, dataset)
        assert len(r.per_sample_dsc) == len(dataset)
        assert all(0.0 <= d <= 1.0 for d in r.per_sample_dsc)
        assert r.mean_dsc == pytest.approx(np.mean(r.per_sample_dsc))
        assert r.std_dsc == pytest.approx(np.std(r.per_sample_dsc))

    def test_report_roundtrips_to_json(self, dataset, tmp_path):
        import json
        bundle = ModelBundle.build(ARCH, 0)
        r = evaluate(bundle, dataset)
        r.save(tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["mean_dsc"] == pytest.approx(r.mean_dsc)
        assert d["protocol"] == "zero_shot"


class TestSplit:
    def test_arithmetic_540_sample_split(self):
        adapt_idx, eval_idx = split_for_adaptation(540, 0.05, seed=0)
        assert len(adapt_idx) == 27
        assert len(eval_idx) == 513
        assert sorted(np.concatenate([adapt_idx, eval_idx])) == list(range(540))

    def test_seeded_and_reproducible(self):
        a1, e1 = split_for_adaptation(100, 0.1, seed=3)
        a2, e2 = split_for_adaptation(100, 0.1, seed=3)
        assert np.array_equal(a1, a2) and np.array_equal(e1, e2)
        a3, _ = split_for_adaptation(100, 0.1, seed=4)
        assert not np.array_equal(a1, a3)

    def test_too_small_fraction_rejected(self):
        with pytest.raises(ValueError, match="no adaptation data"):
            split_for_adaptation(30, 0.01, seed=0)


class TestAdapt:
    def test_frozen_collections_unchanged(self, dataset):
        bundle = ModelBundle.build(ARCH, 0)
        before = {n: bundle.parameter_hash(n) for n in ModelBundle.COLLECTIONS}
        bundle, report = adapt(bundle, dataset, fraction=0.25, epochs=2, seed=0)
        after = {n: bundle.parameter_hash(n) for n in ModelBundle.COLLECTIONS}
        for frozen in ("encoder_d", "generator", "mine"):
            assert before[frozen] == after[frozen]
        assert before["encoder_a"] != after["encoder_a"]
        assert before["segmentor"] != after["segmentor"]
        assert report.protocol == "adapted"
        assert report.split_seed == 0
        assert report.extra["n_adapt"] == 6
        assert report.extra["n_eval"] == 18

    def test_small_dataset_rejected(self):
        small = synth_domain_dataset(CANONICAL_DOMAINS["A"], 5, 1, 32)
        bundle = ModelBundle.build(ARCH, 0)
        with pytest.raises(ValueError, match=">= 20"):
            adapt(bundle, small)

import numpy as np
import pytest
import torch

from disentangle_seg.networks import ArchConfig, ModelBundle
from disentangle_seg.synth import CANONICAL_DOMAINS, synth_domain_dataset
from disentangle_seg.trainer import (
    TrainConfig, batch_quadruples, build_optimizers, compute_objectives,
    train, train_step,
)
from disentangle_seg.transforms import TransformConfig

ARCH = ArchConfig(resolution=32, channels=(8, 16), mine_hidden=16)

ZERO_PROB = TransformConfig(
    crop_probability=0.0, flip_probability=0.0, blur_probability=0.0,
    sharpen_probability=0.0, noise_probability=0.0,
    brightness_probability=0.0, contrast_probability=0.0,
)


def small_config(**overrides):
    defaults = dict(arch=ARCH, batch_size=4, epochs=1, val_every=1)
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def dataset():
    return synth_domain_dataset(CANONICAL_DOMAINS["A"], 16, 5, 32)


def make_batch(dataset, cfg, seed=0):
    rng = np.random.default_rng(seed)
    return batch_quadruples(dataset.samples[:cfg.batch_size], rng, cfg.transform)


def hashes(bundle):
    return {name: bundle.parameter_hash(name) for name in ModelBundle.COLLECTIONS}


def run_one_step(cfg, dataset, seed=0):
    bundle = ModelBundle.build(cfg.arch, seed)
    before = hashes(bundle)
    opts = build_optimizers(bundle, cfg.learning_rate)
    gen = torch.Generator().manual_seed(seed)
    train_step(bundle, opts, make_batch(dataset, cfg), cfg, gen)
    after = hashes(bundle)
    return {name: before[name] != after[name] for name in before}


class TestRouting:
    def test_seg_objective_only(self, dataset):
        # zero weights elsewhere: only the segmentation update may move params
        cfg = small_config(use_mi_loss=False, rec_weight=0.0)
        changed = run_one_step(cfg, dataset)
        assert changed["encoder_a"] and changed["segmentor"]
        assert not changed["encoder_d"] and not changed["generator"]
        assert not changed["mine"]

    def test_mine_objective_only(self, dataset):
        cfg = small_config(use_mi_loss=True, mi_weight=0.0,
                           rec_weight=0.0, seg_weight=0.0)
        changed = run_one_step(cfg, dataset)
        assert changed["mine"]
        assert not any(changed[n] for n in
                       ("encoder_a", "encoder_d", "segmentor", "generator"))

    def test_rec_objective_only(self, dataset):
        cfg = small_config(use_mi_loss=False, seg_weight=0.0)
        changed = run_one_step(cfg, dataset)
        assert changed["encoder_a"] and changed["encoder_d"] and changed["generator"]
        assert not changed["segmentor"] and not changed["mine"]

    def test_mi_encoder_objective_touches_encoders_not_mine(self, dataset):
        # apply only the encoders' MI objective by hand and verify routing
        cfg = small_config()
        bundle = ModelBundle.build(cfg.arch, 0)
        gen = torch.Generator().manual_seed(0)
        objectives, _ = compute_objectives(bundle, make_batch(dataset, cfg), cfg, gen)
        (obj,) = [o for o in objectives if o.name == "mi_encoders"]
        assert obj.targets == ("encoder_a", "encoder_d")
        before = hashes(bundle)
        params = bundle.parameters_of(*obj.targets)
        obj.loss.backward(inputs=params)
        opt = torch.optim.Adam(params, lr=1e-4)
        opt.step()
        after = hashes(bundle)
        assert before["mine"] == after["mine"]
        assert before["segmentor"] == after["segmentor"]
        assert before["generator"] == after["generator"]
        assert before["encoder_a"] != after["encoder_a"]
        assert before["encoder_d"] != after["encoder_d"]
        # and no gradient ever reached the statistics network on this path
        assert all(p.grad is None for p in bundle.mine.parameters())

    def test_full_step_changes_all_collections(self, dataset):
        changed = run_one_step(small_config(), dataset)
        assert all(changed.values())


class TestObjectiveList:
    def test_objective_order_and_targets(self, dataset):
        cfg = small_config()
        bundle = ModelBundle.build(cfg.arch, 0)
        gen = torch.Generator().manual_seed(0)
        objectives, metrics = compute_objectives(bundle, make_batch(dataset, cfg),
                                                 cfg, gen)
        assert [o.name for o in objectives] == [
            "mine_bound", "reconstruction", "mi_encoders", "segmentation"]
        assert objectives[0].targets == ("mine",)
        assert objectives[1].targets == ("encoder_a", "encoder_d", "generator")
        assert objectives[3].targets == ("encoder_a", "segmentor")
        assert np.isfinite(metrics.seg_loss)

    def test_toggles_drop_objectives(self, dataset):
        cfg = small_config(use_mi_loss=False)
        bundle = ModelBundle.build(cfg.arch, 0)
        gen = torch.Generator().manual_seed(0)
        objectives, _ = compute_objectives(bundle, make_batch(dataset, cfg), cfg, gen)
        assert [o.name for o in objectives] == ["reconstruction", "segmentation"]

    def test_degenerate_quadruple_cross_equals_matched(self, dataset):
        # no augmentation: all four targets coincide, so cross = matched rec
        cfg = small_config(transform=ZERO_PROB)
        bundle = ModelBundle.build(cfg.arch, 0)
        gen = torch.Generator().manual_seed(0)
        batch = make_batch(dataset, cfg)
        assert torch.equal(batch["x11"], batch["x12"])
        assert torch.equal(batch["x22"], batch["x21"])
        _, metrics = compute_objectives(bundle, batch, cfg, gen)
        assert metrics.rec_11 == metrics.rec_12
        assert metrics.rec_22 == metrics.rec_21


class TestTrainLoop:
    def test_smoke_run_decreasing_seg_loss(self, dataset, tmp_path):
        cfg = small_config(epochs=6, seed=1)
        val = synth_domain_dataset(CANONICAL_DOMAINS["A"], 4, 6, 32)
        bundle, history = train(cfg, dataset, val, out_dir=tmp_path / "run")
        assert (tmp_path / "run" / "metrics.csv").exists()
        assert (tmp_path / "run" / "checkpoint_final.pt").exists()
        assert (tmp_path / "run" / "checkpoint_best.pt").exists()
        seg = [m.seg_loss for m in history]
        k = len(seg) // 3
        assert np.mean(seg[-k:]) < np.mean(seg[:k])

    def test_deterministic_metrics(self, dataset, tmp_path):
        cfg = small_config(epochs=1, seed=7)
        _, h1 = train(cfg, dataset, None, out_dir=tmp_path / "a")
        _, h2 = train(cfg, dataset, None, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
               (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_mi_toggle_reduces_update_count(self, dataset):
        cfg_on = small_config()
        cfg_off = small_config(use_mi_loss=False)
        bundle = ModelBundle.build(ARCH, 0)
        gen = torch.Generator().manual_seed(0)
        batch = make_batch(dataset, cfg_on)
        on, _ = compute_objectives(bundle, batch, cfg_on, gen)
        off, _ = compute_objectives(bundle, batch, cfg_off, gen)
        assert len(off) == 2 and len(on) == 4


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys.*epcohs"):
            TrainConfig.from_dict({"epcohs": 3})

    def test_nested_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"arch": {"channel": [8, 16]}})
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"loss": {"dice_smooth": 1.0}})

    def test_roundtrip(self):
        cfg = small_config(epochs=3, use_cross_rec=False)
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)

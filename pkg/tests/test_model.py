"""Model tests: forward semantics, losses, ablation flags, checkpointing."""

import logging

import numpy as np
import pytest

from causaltrim import autodiff as ad
from causaltrim.autodiff import Tensor
from causaltrim.bank import FeatureBank
from causaltrim.data import GeneratorConfig, build_splits
from causaltrim.errors import DataError
from causaltrim.model import (
    ModelConfig,
    TrimModel,
    load_model,
    orth_loss,
    save_model,
    vqa_loss,
)

GEN = GeneratorConfig(
    backgrounds=2, lesions=2, regions=5, raw_dim=8,
    train_count=24, iid_count=8, ood_count=8, seed=3,
)
SMALL = ModelConfig(raw_dim=8, answer_count=6, feature_dim=8, hidden_dim=8, bank_size=4)


@pytest.fixture(scope="module")
def splits():
    return build_splits(GEN)


def small_model(seed=0, **overrides):
    config = ModelConfig(**{**SMALL.__dict__, **overrides})
    return TrimModel(config, seed=seed)


class TestForward:
    def test_zero_weights_give_half_probabilities(self, splits):
        model = small_model()
        for p in model.parameters().values():
            p.data = np.zeros(p.shape)
        probs = model.forward(splits.train[0])
        np.testing.assert_array_equal(probs, np.full(6, 0.5))

    def test_probabilities_in_unit_interval_and_deterministic(self, splits):
        model = small_model(seed=5)
        a = model.forward(splits.train[1])
        b = model.forward(splits.train[1])
        np.testing.assert_array_equal(a, b)
        assert np.all(a > 0.0) and np.all(a < 1.0)

    def test_unknown_question_id_fatal(self, splits):
        model = small_model()
        bad = splits.train[0]
        bad.question_id = 7
        try:
            with pytest.raises(DataError):
                model.forward(bad)
        finally:
            bad.question_id = 0

    def test_trim_off_is_bitwise_identical_to_trim_deleted(self, splits):
        """A bank-only model must produce the exact bytes of a plain one."""
        bank_only = small_model(seed=9, use_bank=True, use_trim=False)
        plain = small_model(seed=9, use_bank=False, use_trim=False)
        for inst in splits.iid_test:
            np.testing.assert_array_equal(bank_only.forward(inst), plain.forward(inst))

    def test_batched_forward_matches_per_instance(self, splits):
        model = small_model(seed=2)
        batch = splits.train[:6]
        with ad.no_grad():
            probs, *_ = model.forward_batch(batch)
        for i, inst in enumerate(batch):
            np.testing.assert_allclose(probs.data[i], model.forward(inst), atol=1e-12)


class TestVqaLoss:
    def test_perfect_prediction_is_near_zero(self):
        labels = np.zeros((2, 6))
        labels[0, 1] = labels[1, 4] = 1.0
        loss = vqa_loss(Tensor(labels.copy()), Tensor(labels))
        assert loss.item() < 1e-10

    def test_uniform_half_gives_log_two(self):
        labels = np.zeros((3, 6))
        labels[:, 0] = 1.0
        loss = vqa_loss(Tensor(np.full((3, 6), 0.5)), Tensor(labels))
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(8)
        probs = rng.uniform(0.05, 0.95, size=(4, 6))
        labels = np.zeros((4, 6))
        for i in range(4):
            labels[i, rng.integers(6)] = 1.0

        total = 0.0
        for i in range(4):
            for j in range(6):
                p, y = probs[i, j], labels[i, j]
                total += -(y * np.log(p) + (1 - y) * np.log(1 - p))
        oracle = total / 24.0

        loss = vqa_loss(Tensor(probs), Tensor(labels))
        assert loss.item() == pytest.approx(oracle, rel=1e-12)


class TestOrthLoss:
    def test_orthogonal_gives_zero(self):
        bank = FeatureBank(np.array([[1.0, 0.0, 0.0]]), momentum=0.9)
        trimmed = Tensor(np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 4.0]]))
        assert orth_loss(trimmed, bank).item() == 0.0

    def test_parallel_gives_one(self):
        bank = FeatureBank(np.array([[1.0, 2.0, -1.0]]), momentum=0.9)
        trimmed = Tensor(np.array([[3.0, 6.0, -3.0]]))
        assert orth_loss(trimmed, bank).item() == pytest.approx(1.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        bank = FeatureBank(rng.normal(size=(5, 6)), momentum=0.9)
        feats = rng.normal(size=(7, 6))
        base = orth_loss(Tensor(feats), bank).item()
        scaled = orth_loss(Tensor(3.7 * feats), bank).item()
        assert scaled == pytest.approx(base, rel=1e-12)

    def test_zero_norm_returns_zero_with_warning(self, caplog):
        bank = FeatureBank(np.ones((2, 3)), momentum=0.9)
        with caplog.at_level(logging.WARNING):
            out = orth_loss(Tensor(np.zeros((4, 3))), bank)
        assert out.item() == 0.0
        assert any("zero norm" in rec.message for rec in caplog.records)

    def test_bounded_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for trial in range(100):
            bank = FeatureBank(rng.normal(size=(4, 5)), momentum=0.9)
            value = orth_loss(Tensor(rng.normal(size=(6, 5))), bank).item()
            assert 0.0 <= value <= 1.0


class TestTotalLoss:
    def test_breakdown_identity_bitwise(self, splits):
        model = small_model(seed=11)
        result = model.compute_loss(splits.train[:8], lambda_orth=0.1)
        b = result.breakdown
        assert b.l_total == b.l_vqa + 0.1 * b.l_orth
        assert result.total.item() == b.l_total

    def test_lambda_zero_reduces_to_vqa(self, splits):
        model = small_model(seed=11)
        result = model.compute_loss(splits.train[:8], lambda_orth=0.0)
        assert result.breakdown.l_total == result.breakdown.l_vqa
        assert result.total.item() == result.breakdown.l_vqa

    def test_arithmetic_example(self):
        from causaltrim.model import LossBreakdown

        b = LossBreakdown(l_vqa=0.5, l_orth=0.2, l_total=0.5 + 0.1 * 0.2, lambda_orth=0.1)
        assert b.l_total == pytest.approx(0.52, abs=1e-15)

    def test_orth_reported_zero_without_bank(self, splits):
        model = small_model(seed=11, use_bank=False, use_trim=False)
        result = model.compute_loss(splits.train[:8], lambda_orth=0.1)
        assert result.breakdown.l_orth == 0.0
        assert result.breakdown.l_total == result.breakdown.l_vqa

    def test_every_parameter_receives_finite_gradient(self, splits):
        model = small_model(seed=13)
        rng = np.random.default_rng(0)
        model.trim.w.data = rng.normal(0.0, 0.3, size=model.trim.w.shape)
        result = model.compute_loss(splits.train[:8], lambda_orth=0.1)
        result.total.backward()
        for name, p in model.parameters().items():
            assert p.grad is not None, name
            assert np.isfinite(p.grad).all(), name
            if name != "q_embed":
                assert np.any(p.grad != 0.0), name

    def test_bank_untouched_by_backward(self, splits):
        model = small_model(seed=13)
        before = model.bank.prototypes.copy()
        result = model.compute_loss(splits.train[:8], lambda_orth=0.1)
        result.total.backward()
        np.testing.assert_array_equal(model.bank.prototypes, before)


class TestCheckpoint:
    def test_roundtrip_preserves_forward(self, tmp_path, splits):
        model = small_model(seed=21)
        model.bank.update(np.random.default_rng(1).normal(size=8))
        path = tmp_path / "model.lctm"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.config == model.config
        for (na, pa), (nb, pb) in zip(model.parameters().items(),
                                      loaded.parameters().items()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)
        np.testing.assert_array_equal(loaded.bank.prototypes, model.bank.prototypes)
        assert loaded.bank.update_count == model.bank.update_count
        for inst in splits.iid_test:
            np.testing.assert_array_equal(loaded.forward(inst), model.forward(inst))

    def test_write_read_write_bitwise_stable(self, tmp_path):
        model = small_model(seed=22)
        a, b = tmp_path / "a.lctm", tmp_path / "b.lctm"
        save_model(model, a)
        save_model(load_model(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_baseline_checkpoint_has_no_bank(self, tmp_path):
        model = small_model(seed=23, use_bank=False, use_trim=False)
        path = tmp_path / "plain.lctm"
        save_model(model, path)
        assert load_model(path).bank is None

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.lctm"
        path.write_bytes(b"ZZZZ" + b"\x00" * 64)
        with pytest.raises(DataError):
            load_model(path)

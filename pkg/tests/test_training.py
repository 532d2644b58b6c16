"""Trainer tests: optimizer arithmetic, loop determinism, evaluation purity."""

import numpy as np
import pytest

from causaltrim.autodiff import Tensor
from causaltrim.bank import bank_to_bytes
from causaltrim.data import GeneratorConfig, build_splits
from causaltrim.errors import TrainingError
from causaltrim.model import TrimModel
from causaltrim.training import (
    ABLATION_ARMS,
    AdamW,
    TrainConfig,
    curves_csv,
    evaluate,
    model_config_for,
    run_ablation,
    train,
)

GEN = GeneratorConfig(
    backgrounds=2, lesions=2, regions=5, raw_dim=8,
    train_count=96, iid_count=48, ood_count=48, seed=17,
)
FAST = TrainConfig(
    epochs=2, batch_size=16, bank_size=8, feature_dim=8, hidden_dim=8,
    num_seeds=2, seed=17,
)


@pytest.fixture(scope="module")
def splits():
    return build_splits(GEN)


def fresh_model(config=FAST, seed=17):
    return TrimModel(model_config_for(config, GEN), seed=seed)


class TestAdamW:
    def test_zero_gradient_zero_decay_is_fixed_point(self):
        p = Tensor(np.array([[1.5, -2.0]]), requires_grad=True)
        before = p.data.copy()
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        p.grad = np.zeros((1, 2))
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_closed_form(self):
        start = np.array([[2.0, -1.0, 0.5]])
        grad = np.array([[0.3, -0.7, 0.01]])
        p = Tensor(start.copy(), requires_grad=True)
        opt = AdamW({"p": p}, lr=1e-2, beta1=0.9, beta2=0.999,
                    epsilon=1e-8, weight_decay=0.04)
        p.grad = grad.copy()
        opt.step()
        # decay first, then bias-corrected moments collapse to g and g^2
        expected = start * (1.0 - 1e-2 * 0.04)
        expected = expected - 1e-2 * grad / (np.abs(grad) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)

    def test_first_step_sign_agrees_with_negative_gradient(self):
        rng = np.random.default_rng(2)
        grad = rng.normal(size=(4, 4))
        p = Tensor(np.zeros((4, 4)), requires_grad=True)
        opt = AdamW({"p": p}, lr=1e-3, weight_decay=0.0)
        p.grad = grad.copy()
        opt.step()
        assert np.all(np.sign(p.data) == -np.sign(grad))

    def test_scalar_quadratic_converges(self):
        x = Tensor(1.0, requires_grad=True)
        opt = AdamW({"x": x}, lr=0.05, weight_decay=0.0)
        for _ in range(200):
            x.grad = 2.0 * x.data
            opt.step()
        assert abs(x.item()) < 0.1

    def test_non_finite_gradient_aborts(self):
        p = Tensor(np.ones((1, 2)), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1)
        p.grad = np.array([[1.0, np.inf]])
        with pytest.raises(TrainingError):
            opt.step()


class TestTrainLoop:
    def test_zero_epochs_is_noop(self, splits):
        config = TrainConfig(**{**FAST.__dict__, "epochs": 0})
        model = fresh_model(config)
        before = {k: p.data.copy() for k, p in model.parameters().items()}
        result = train(model, splits, config)
        assert result.final_metrics is None
        assert result.curves == []
        assert set(result.init_metrics) == {"train", "iid_test", "ood_test"}
        for k, p in model.parameters().items():
            np.testing.assert_array_equal(p.data, before[k])

    def test_same_seed_is_bitwise_identical(self, splits):
        outs = []
        for _ in range(2):
            model = fresh_model()
            train(model, splits, FAST)
            outs.append({k: p.data.copy() for k, p in model.parameters().items()}
                        | {"bank": model.bank.prototypes.copy()})
        for key in outs[0]:
            np.testing.assert_array_equal(outs[0][key], outs[1][key])

    def test_bank_updates_once_per_batch(self, splits):
        model = fresh_model()
        result = train(model, splits, FAST)
        batches_per_epoch = -(-GEN.train_count // FAST.batch_size)
        assert model.bank.update_count == FAST.epochs * batches_per_epoch
        assert all(c.bank_drift > 0 for c in result.curves)

    def test_checkpoints_written(self, tmp_path, splits):
        config = TrainConfig(**{**FAST.__dict__, "checkpoint_every": 1})
        model = fresh_model(config)
        train(model, splits, config, out_dir=tmp_path)
        assert (tmp_path / "ckpt_epoch001.lctm").exists()
        assert (tmp_path / "ckpt_epoch002.lctm").exists()
        assert (tmp_path / "ckpt_final.lctm").exists()


class TestEvaluate:
    def test_purity(self, splits):
        model = fresh_model()
        params_before = {k: p.data.copy() for k, p in model.parameters().items()}
        bank_before = bank_to_bytes(model.bank)
        evaluate(model, splits.iid_test, GEN)
        for k, p in model.parameters().items():
            np.testing.assert_array_equal(p.data, params_before[k])
        assert bank_to_bytes(model.bank) == bank_before

    def test_counts_reconcile(self, splits):
        block = evaluate(fresh_model(), splits.iid_test, GEN)
        c = block.counts
        assert c["total"] == len(splits.iid_test)
        assert c["open"] + c["closed"] == c["total"]
        assert c["open_correct"] + c["closed_correct"] == c["correct"]

    def test_untrained_closed_accuracy_near_chance(self):
        # an even region count balances the yes/no labels exactly; with the
        # default 9 regions a constant guesser sits at 4/9 or 5/9 instead
        gen = GeneratorConfig(regions=10, train_count=10, iid_count=2000,
                              ood_count=10, seed=29)
        splits = build_splits(gen)
        config = TrainConfig(bank_size=8, feature_dim=16, hidden_dim=16, seed=29)
        for seed in (29, 57, 91):
            model = TrimModel(model_config_for(config, gen), seed=seed)
            block = evaluate(model, splits.iid_test, gen)
            assert abs(block.closed_style - 50.0) < 5.0


class TestAblation:
    def test_structure_and_baseline_equivalence(self, splits):
        result = run_ablation(GEN, FAST, datasets=splits)
        arms = [arm for arm, _, _ in ABLATION_ARMS]
        assert sorted({r.arm for r in result.runs}) == sorted(arms)
        assert len(result.runs) == len(arms) * FAST.num_seeds
        for arm in arms:
            assert set(result.medians[arm]) == {"train", "iid_test", "ood_test"}

        # the (False, False) arm must equal a directly trained plain model
        direct = fresh_model(TrainConfig(**{
            **FAST.__dict__, "use_bank": False, "use_trim": False, "seed": FAST.seed,
        }))
        direct_result = train(direct, splits, TrainConfig(**{
            **FAST.__dict__, "use_bank": False, "use_trim": False, "seed": FAST.seed,
        }))
        arm_run = next(r for r in result.runs
                       if r.arm == "baseline" and r.seed == FAST.seed)
        for split in ("train", "iid_test", "ood_test"):
            assert arm_run.metrics[split].overall == \
                direct_result.final_metrics[split].overall

    def test_median_is_seedwise_median(self, splits):
        result = run_ablation(GEN, FAST, datasets=splits)
        rows = [r for r in result.runs if r.arm == "full"]
        values = [r.metrics["ood_test"].overall for r in rows]
        assert result.median("full", "ood_test") == np.median(values)


class TestReports:
    def test_curves_csv_format(self, splits):
        model = fresh_model()
        result = train(model, splits, FAST)
        text = curves_csv(result.curves)
        lines = text.strip().splitlines()
        assert lines[0] == "epoch,l_vqa,l_orth,l_total"
        assert len(lines) == FAST.epochs + 1
        first = lines[1].split(",")
        assert int(first[0]) == 1
        assert all(np.isfinite(float(x)) for x in first[1:])

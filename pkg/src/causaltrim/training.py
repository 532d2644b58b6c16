"""Training loop, AdamW optimizer, evaluation and the four-arm ablation.

Every run is a pure function of (config, seed): data order, parameter
initialization and the bank all derive from explicit seed streams, so two
runs with the same inputs produce bitwise-identical checkpoints.  The
ablation runner trains the four trimming/bank flag combinations on shared
data and reports the median accuracy over a set of seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bank import batch_global_feature, momentum_update
from .data import (
    GeneratorConfig,
    MetricsBlock,
    Splits,
    VqaInstance,
    accuracy_block,
    answer_candidates,
    build_splits,
)
from .errors import ConfigError, TrainingError
from .model import ModelConfig, TrimModel, save_model

ABLATION_ARMS = (
    ("baseline", False, False),
    ("bank_only", True, False),
    ("trim_only", False, True),
    ("full", True, True),
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    lambda_orth: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    bank_size: int = 256
    momentum: float = 0.99
    tau: float = 0.07
    feature_dim: int = 64
    hidden_dim: int = 64
    use_bank: bool = True
    use_trim: bool = True
    seed: int = 42
    checkpoint_every: int = 10
    num_seeds: int = 5

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lambda_orth < 0:
            raise ConfigError(f"lambda_orth must be >= 0, got {self.lambda_orth}")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must be in [0, 1), got {getattr(self, key)}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        for key in ("bank_size", "feature_dim", "hidden_dim", "num_seeds"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        return self


def model_config_for(train: TrainConfig, gen: GeneratorConfig) -> ModelConfig:
    return ModelConfig(
        raw_dim=gen.raw_dim,
        answer_count=gen.answer_count,
        feature_dim=train.feature_dim,
        hidden_dim=train.hidden_dim,
        bank_size=train.bank_size,
        momentum=train.momentum,
        tau=train.tau,
        use_bank=train.use_bank,
        use_trim=train.use_trim,
    )


class AdamW:
    """Adaptive-moment optimizer with decoupled (multiplicative) weight decay.

    The decay is applied to the parameter before the moment-based update,
    never folded into the gradient.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros(p.shape) for name, p in params.items()}
        self._v = {name: np.zeros(p.shape) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros(p.shape)
            if not np.isfinite(grad).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r} at step {t}")
            if self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# -- evaluation ----------------------------------------------------------------


def predict(model: TrimModel, instances: list[VqaInstance], gen: GeneratorConfig,
            chunk_size: int = 256) -> list[int]:
    """Candidate-restricted argmax predictions, no parameter mutation.

    The argmax runs over the answer ids valid for each question type
    (lesion answers for open questions, yes/no for closed ones).
    """
    preds: list[int] = []
    with ad.no_grad():
        for start in range(0, len(instances), chunk_size):
            chunk = instances[start:start + chunk_size]
            probs, *_ = model.forward_batch(chunk)
            for row, inst in zip(probs.data, chunk):
                cands = answer_candidates(inst.question_id, gen)
                preds.append(cands[int(np.argmax(row[cands]))])
    return preds


def evaluate(model: TrimModel, instances: list[VqaInstance], gen: GeneratorConfig) -> MetricsBlock:
    return accuracy_block(predict(model, instances, gen), instances)


def evaluate_splits(model: TrimModel, splits: Splits) -> dict[str, MetricsBlock]:
    return {
        name: evaluate(model, splits.by_name(name), splits.config)
        for name in ("train", "iid_test", "ood_test")
    }


# -- training ------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    l_vqa: float
    l_orth: float
    l_total: float
    bank_drift: float


@dataclass
class TrainResult:
    model: TrimModel
    curves: list[EpochStats]
    init_metrics: dict[str, MetricsBlock]
    final_metrics: dict[str, MetricsBlock] | None


def train(model: TrimModel, splits: Splits, config: TrainConfig,
          out_dir: Path | None = None, log=None) -> TrainResult:
    """Run the full loop: forward, losses, backward, AdamW, bank update.

    The bank is refreshed once per batch, after the optimizer step, from
    the pre-trim encoded features of that batch.  Checkpoints are written
    every ``checkpoint_every`` epochs when an output directory is given.
    """
    config.validate()
    params = model.parameters()
    opt = AdamW(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                epsilon=config.epsilon, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    train_set = splits.train

    init_metrics = evaluate_splits(model, splits)
    curves: list[EpochStats] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_set))
        bank_start = model.bank.prototypes.copy() if model.bank is not None else None
        sums = np.zeros(3)
        batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            result = model.compute_loss(batch, config.lambda_orth)
            if not np.isfinite(result.breakdown.l_total):
                if out_dir is not None:
                    save_model(model, out_dir / "ckpt_last_good.lctm")
                raise TrainingError(
                    f"non-finite loss {result.breakdown.l_total!r} at epoch {epoch}"
                )
            result.total.backward()
            opt.step()
            if model.bank is not None:
                sizes = np.cumsum([inst.features.shape[0] for inst in batch])[:-1]
                per_instance = np.split(result.region_features.data, sizes)
                momentum_update(model.bank, batch_global_feature(per_instance))
            sums += (result.breakdown.l_vqa, result.breakdown.l_orth, result.breakdown.l_total)
            batches += 1
        drift = (
            float(np.linalg.norm(model.bank.prototypes - bank_start))
            if bank_start is not None else 0.0
        )
        means = sums / max(batches, 1)
        curves.append(EpochStats(epoch + 1, float(means[0]), float(means[1]),
                                 float(means[2]), drift))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}  "
                f"l_vqa {curves[-1].l_vqa:.4f}  l_orth {curves[-1].l_orth:.4f}  "
                f"l_total {curves[-1].l_total:.4f}")
        if (out_dir is not None and config.checkpoint_every > 0
                and (epoch + 1) % config.checkpoint_every == 0):
            save_model(model, out_dir / f"ckpt_epoch{epoch + 1:03d}.lctm")

    final_metrics = evaluate_splits(model, splits) if config.epochs > 0 else None
    if out_dir is not None:
        save_model(model, out_dir / "ckpt_final.lctm")
    return TrainResult(model, curves, init_metrics, final_metrics)


# -- ablation runner -------------------------------------------------------------


@dataclass
class ArmRun:
    arm: str
    seed: int
    metrics: dict[str, MetricsBlock]


@dataclass
class AblationResult:
    runs: list[ArmRun] = field(default_factory=list)
    medians: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)

    def median(self, arm: str, split: str, metric: str = "overall") -> float:
        return self.medians[arm][split][metric]


def run_ablation(gen: GeneratorConfig, config: TrainConfig,
                 datasets: Splits | None = None, log=None) -> AblationResult:
    """Train all four flag combinations over ``num_seeds`` paired seeds.

    Within one seed every arm shares the same datasets and the same
    parameter initialization, so arm differences isolate the mechanism.
    When ``datasets`` is given it is reused for every seed (only the
    training stochasticity varies); otherwise each seed regenerates the
    benchmark from its own seed.
    """
    config.validate()
    result = AblationResult()
    seeds = [config.seed + k for k in range(config.num_seeds)]
    for seed in seeds:
        splits = datasets if datasets is not None else build_splits(replace(gen, seed=seed))
        for arm, use_bank, use_trim in ABLATION_ARMS:
            arm_config = replace(config, seed=seed, use_bank=use_bank, use_trim=use_trim)
            model = TrimModel(model_config_for(arm_config, splits.config), seed=seed)
            outcome = train(model, splits, arm_config)
            result.runs.append(ArmRun(arm, seed, outcome.final_metrics or outcome.init_metrics))
            if log is not None:
                ood = result.runs[-1].metrics["ood_test"]
                log(f"seed {seed}  {arm:<10s}  ood overall {ood.overall:5.1f}  "
                    f"open {ood.open_style:5.1f}  closed {ood.closed_style:5.1f}")
    for arm, _, _ in ABLATION_ARMS:
        arm_rows = [r for r in result.runs if r.arm == arm]
        result.medians[arm] = {}
        for split in ("train", "iid_test", "ood_test"):
            result.medians[arm][split] = {
                metric: float(np.median([getattr(r.metrics[split], metric) for r in arm_rows]))
                for metric in ("overall", "open_style", "closed_style")
            }
    return result


# -- whole-model gradient verification ---------------------------------------------


def full_model_gradcheck(seed: int = 0, lambda_orth: float = 0.1,
                         step: float = 1e-5) -> ad.GradCheckReport:
    """Check analytic gradients of the assembled loss on toy shapes.

    Uses a 4-instance batch with 5 regions, a 4-prototype bank and
    8-dimensional features, small enough that probing every parameter
    entry with central differences takes well under ten seconds.
    """
    gen = GeneratorConfig(
        backgrounds=2, lesions=2, regions=5, raw_dim=6,
        train_count=4, iid_count=1, ood_count=1, seed=seed,
    )
    config = TrainConfig(feature_dim=8, hidden_dim=8, bank_size=4, seed=seed)
    splits = build_splits(gen)
    model = TrimModel(model_config_for(config, gen), seed=seed)
    # the symmetric trim init zeroes the psi_scale gradient path; perturb so
    # every parameter entry is exercised
    rng = np.random.default_rng([seed, 7])
    model.trim.w.data = rng.normal(0.0, 0.5, size=model.trim.w.shape)
    model.trim.psi_scale.data = np.array([[1.0 + 0.3 * rng.standard_normal()]])
    model.trim.psi_bias.data = np.array([[0.2 * rng.standard_normal()]])
    batch = splits.train

    def closure():
        return model.compute_loss(batch, lambda_orth).total

    return ad.gradcheck(closure, model.parameters(), step=step)


# -- report rendering -------------------------------------------------------------


def metrics_table(blocks: dict[str, MetricsBlock], title: str = "") -> str:
    """Aligned-column accuracy table: one row per split."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'split':<10s} {'Open':>8s} {'Closed':>8s} {'Overall':>8s}")
    for name, block in blocks.items():
        lines.append(
            f"{name:<10s} {block.open_style:8.2f} {block.closed_style:8.2f} {block.overall:8.2f}"
        )
    return "\n".join(lines) + "\n"


def ablation_table(result: AblationResult) -> str:
    """Median accuracy per arm and split, arms as rows."""
    splits = ("train", "iid_test", "ood_test")
    group = "{:>7s} {:>7s} {:>8s}".format("Open", "Closed", "Overall")
    top = f"{'':<10s}" + "".join(f" | {split:^24s}" for split in splits)
    header = f"{'arm':<10s}" + f" | {group}" * len(splits)
    lines = [top, header, "-" * len(header)]
    for arm, _, _ in ABLATION_ARMS:
        row = f"{arm:<10s}"
        for split in splits:
            med = result.medians[arm][split]
            row += (f" | {med['open_style']:7.2f} {med['closed_style']:7.2f} "
                    f"{med['overall']:8.2f}")
        lines.append(row)
    return "\n".join(lines) + "\n"


def curves_csv(curves: list[EpochStats]) -> str:
    lines = ["epoch,l_vqa,l_orth,l_total"]
    for row in curves:
        lines.append(f"{row.epoch},{row.l_vqa!r},{row.l_orth!r},{row.l_total!r}")
    return "\n".join(lines) + "\n"


def _block_record(block: MetricsBlock) -> dict:
    return {
        "overall": block.overall,
        "open": block.open_style,
        "closed": block.closed_style,
        "counts": block.counts,
    }


def train_report_json(result: TrainResult) -> str:
    record = {
        "init": {name: _block_record(b) for name, b in result.init_metrics.items()},
        "final": (
            {name: _block_record(b) for name, b in result.final_metrics.items()}
            if result.final_metrics is not None else None
        ),
        "curves": [
            {"epoch": c.epoch, "l_vqa": c.l_vqa, "l_orth": c.l_orth,
             "l_total": c.l_total, "bank_drift": c.bank_drift}
            for c in result.curves
        ],
    }
    return json.dumps(record, indent=2) + "\n"


def ablation_report_json(result: AblationResult) -> str:
    record = {
        "runs": [
            {
                "arm": run.arm,
                "seed": run.seed,
                "metrics": {name: _block_record(b) for name, b in run.metrics.items()},
            }
            for run in result.runs
        ],
        "medians": result.medians,
    }
    return json.dumps(record, indent=2) + "\n"

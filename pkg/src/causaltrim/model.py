"""End-to-end fusion classifier with optional bank-guided trimming.

The network is deliberately small: a per-region affine map stands in for
an image encoder, a question-id embedding table stands in for a text
encoder, and fusion is mean-pooling plus concatenation into one hidden
tanh layer feeding per-answer sigmoid logits.  Between encoding and
pooling sits the trimming module, switchable for ablations:

* ``use_trim=False``  regions pass through untouched (the forward pass is
  then bitwise identical to a model with the trimming module deleted).
* ``use_bank=False`` with ``use_trim=True``  the prototype bank is replaced
  by a single prototype tracking the running batch-global feature, and the
  region score is the temperature-scaled similarity to it (the softmax
  over a one-column score matrix would be identically 1, disabling the
  module).

Training optimizes mean binary cross-entropy over the answer vocabulary
plus ``lambda_orth`` times the squared cosine between the batch-mean
trimmed feature and the bank average.  Arms without any confounder proxy
(no bank, no trimming) have no orthogonality term and report it as 0.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bank import FeatureBank, bank_from_bytes, bank_to_bytes, init_bank
from .data import QUESTION_COUNT, VqaInstance
from .errors import ConfigError, DataError
from .trimming import TrimOutput, apply_trim, init_trim_params, soft_mask, trim_forward

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"LCTM"
MODEL_VERSION = 1

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    raw_dim: int
    answer_count: int
    feature_dim: int = 64
    hidden_dim: int = 64
    question_count: int = QUESTION_COUNT
    bank_size: int = 256
    momentum: float = 0.99
    tau: float = 0.07
    use_bank: bool = True
    use_trim: bool = True

    def validate(self) -> "ModelConfig":
        for key in ("raw_dim", "answer_count", "feature_dim", "hidden_dim", "question_count"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.bank_size < 1:
            raise ConfigError(f"bank_size must be >= 1, got {self.bank_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        return self


@dataclass
class LossBreakdown:
    l_vqa: float
    l_orth: float
    l_total: float
    lambda_orth: float


@dataclass
class LossResult:
    breakdown: LossBreakdown
    total: Tensor              # 1x1, differentiable
    probs: Tensor              # B x A answer probabilities
    region_features: Tensor    # (B*N) x D encoded, pre-trim
    trimmed: Tensor            # (B*N) x D post-trim (== region_features when trimming is off)
    trim: TrimOutput | None


class TrimModel:
    """Encoder, optional trimming, fusion and answer head in one object."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        root = np.random.SeedSequence(seed)
        vis_seq, q_seq, fus_seq, head_seq, bank_seq = root.spawn(5)
        d_in, d, h, a = config.raw_dim, config.feature_dim, config.hidden_dim, config.answer_count

        def gauss(seq, rows, cols, scale):
            rng = np.random.default_rng(seq)
            return Tensor(rng.normal(0.0, scale, size=(rows, cols)), requires_grad=True)

        self.vis_w = gauss(vis_seq, d_in, d, 1.0 / np.sqrt(d_in))
        self.vis_b = Tensor(np.zeros((1, d)), requires_grad=True)
        self.q_embed = gauss(q_seq, config.question_count, d, 1.0 / np.sqrt(d))
        self.fus_w = gauss(fus_seq, 2 * d, h, 1.0 / np.sqrt(2 * d))
        self.fus_b = Tensor(np.zeros((1, h)), requires_grad=True)
        self.head_w = gauss(head_seq, h, a, 1.0 / np.sqrt(h))
        self.head_b = Tensor(np.zeros((1, a)), requires_grad=True)

        self.bank: FeatureBank | None
        if config.use_bank:
            self.bank = init_bank(config.bank_size, d, bank_seq, config.momentum)
        elif config.use_trim:
            # single-prototype proxy: tracks the running batch-global feature
            self.bank = init_bank(1, d, bank_seq, config.momentum)
        else:
            self.bank = None
        self.trim = init_trim_params(self.bank.size, config.tau) if config.use_trim else None

    # -- parameter access -------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        params = {
            "vis_w": self.vis_w, "vis_b": self.vis_b,
            "q_embed": self.q_embed,
            "fus_w": self.fus_w, "fus_b": self.fus_b,
            "head_w": self.head_w, "head_b": self.head_b,
        }
        if self.trim is not None:
            params.update(self.trim.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def forward_batch(self, instances: list[VqaInstance]):
        """Probabilities for a batch, plus the intermediates the losses need.

        Returns (probs, region_features, trimmed, trim_output, pooled).
        """
        if not instances:
            raise DataError("forward_batch: empty batch")
        for inst in instances:
            if inst.features.shape[1] != self.config.raw_dim:
                raise ConfigError(
                    f"instance raw dim {inst.features.shape[1]} does not match "
                    f"model raw_dim {self.config.raw_dim}"
                )
            if not 0 <= inst.question_id < self.config.question_count:
                raise DataError(f"unknown question id {inst.question_id}")

        raw = Tensor(np.concatenate([inst.features for inst in instances], axis=0))
        region_features = raw @ self.vis_w + self.vis_b

        trim_out: TrimOutput | None = None
        if self.trim is not None:
            if self.config.use_bank:
                trim_out = trim_forward(region_features, self.bank, self.trim)
            else:
                # single-prototype proxy: a softmax over one column is
                # identically 1 and would disable the module, so the score
                # is the temperature-scaled similarity itself
                scores = (region_features @ Tensor(self.bank.prototypes.T.copy())) * (
                    1.0 / self.trim.tau
                )
                mask = soft_mask(scores, self.trim)
                trim_out = TrimOutput(scores, mask, apply_trim(region_features, mask))
            trimmed = trim_out.trimmed
        else:
            trimmed = region_features

        # block-mean pooling over each instance's regions via a constant matrix
        sizes = [inst.features.shape[0] for inst in instances]
        pool = np.zeros((len(instances), sum(sizes)))
        start = 0
        for i, n in enumerate(sizes):
            pool[i, start:start + n] = 1.0 / n
            start += n
        pooled = Tensor(pool) @ trimmed

        qids = [inst.question_id for inst in instances]
        f_q = ad.gather_rows(self.q_embed, qids)
        fused = ad.concat_cols(pooled, f_q) @ self.fus_w + self.fus_b
        hidden = fused.tanh()
        logits = hidden @ self.head_w + self.head_b
        probs = logits.sigmoid()
        return probs, region_features, trimmed, trim_out, pooled

    def forward(self, instance: VqaInstance) -> np.ndarray:
        """Answer-probability vector for one instance."""
        with ad.no_grad():
            probs, *_ = self.forward_batch([instance])
        return probs.data[0].copy()

    # -- losses ----------------------------------------------------------

    def one_hot(self, answers) -> np.ndarray:
        out = np.zeros((len(answers), self.config.answer_count))
        for i, a in enumerate(answers):
            if not 0 <= a < self.config.answer_count:
                raise DataError(f"answer id {a} outside vocabulary")
            out[i, a] = 1.0
        return out

    def compute_loss(self, instances: list[VqaInstance], lambda_orth: float) -> LossResult:
        probs, region_features, trimmed, trim_out, _ = self.forward_batch(instances)
        labels = Tensor(self.one_hot([inst.answer for inst in instances]))
        l_vqa = vqa_loss(probs, labels)

        if self.bank is not None:
            l_orth = orth_loss(trimmed, self.bank)
            orth_value = l_orth.item()
        else:
            l_orth = None
            orth_value = 0.0

        if l_orth is not None and lambda_orth != 0.0:
            total = l_vqa + lambda_orth * l_orth
        else:
            total = l_vqa

        vqa_value = l_vqa.item()
        breakdown = LossBreakdown(
            l_vqa=vqa_value,
            l_orth=orth_value,
            l_total=vqa_value + lambda_orth * orth_value,
            lambda_orth=lambda_orth,
        )
        return LossResult(breakdown, total, probs, region_features, trimmed, trim_out)


def vqa_loss(probs: Tensor, labels: Tensor) -> Tensor:
    """Mean binary cross-entropy over every (instance, answer) cell.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    if probs.shape != labels.shape:
        raise ConfigError(f"vqa_loss: probs {probs.shape} vs labels {labels.shape}")
    p = probs.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    term = labels * p.log() + (1.0 - labels) * (1.0 - p).log()
    return -term.mean()


def orth_loss(trimmed: Tensor, bank: FeatureBank) -> Tensor:
    """Squared cosine between the mean trimmed feature and the bank average.

    Gradients flow into the trimmed features only; the bank side is a
    constant.  Degenerate zero-norm inputs return 0 rather than NaN: an
    all-zero trimmed feature carries no bank alignment to penalize.
    """
    if trimmed.cols != bank.dim:
        raise ConfigError(f"orth_loss: feature dim {trimmed.cols} vs bank dim {bank.dim}")
    b_avg = bank.average()
    b_norm = float(np.linalg.norm(b_avg))
    if b_norm == 0.0:
        logger.warning("orth_loss: bank average has zero norm, returning 0")
        return Tensor(0.0)
    rows = trimmed.rows
    f_avg = Tensor(np.full((1, rows), 1.0 / rows)) @ trimmed
    if float((f_avg.data ** 2).sum()) == 0.0:
        logger.warning("orth_loss: mean trimmed feature has zero norm, returning 0")
        return Tensor(0.0)
    dot = f_avg @ Tensor(b_avg.reshape(-1, 1))
    f_norm = (f_avg * f_avg).sum().sqrt()
    cosine = dot / (f_norm * b_norm)
    return cosine * cosine


# -- checkpoint container -----------------------------------------------------


def _model_config_echo(config: ModelConfig) -> str:
    fields = (
        "raw_dim", "answer_count", "feature_dim", "hidden_dim", "question_count",
        "bank_size", "momentum", "tau", "use_bank", "use_trim",
    )
    return "\n".join(f"{name}={getattr(config, name)!r}" for name in fields)


def _model_config_from_echo(echo: str) -> ModelConfig:
    import ast

    values: dict[str, object] = {}
    for line in echo.strip().splitlines():
        key, _, raw = line.partition("=")
        values[key] = ast.literal_eval(raw)
    return ModelConfig(**values).validate()


def save_model(model: TrimModel, path) -> None:
    """Versioned binary checkpoint: named parameter sections plus the bank."""
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        echo = _model_config_echo(model.config).encode("utf-8")
        fh.write(struct.pack("<II", MODEL_VERSION, len(echo)))
        fh.write(echo)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", tensor.rows, tensor.cols))
            fh.write(tensor.data.astype("<f8").tobytes())
        if model.bank is not None:
            blob = bank_to_bytes(model.bank)
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
        else:
            fh.write(struct.pack("<B", 0))


def load_model(path) -> TrimModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    version, echo_len = struct.unpack_from("<II", blob, 4)
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model checkpoint version {version}")
    offset = 12
    config = _model_config_from_echo(blob[offset:offset + echo_len].decode("utf-8"))
    offset += echo_len
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4

    model = TrimModel(config, seed=0)
    params = model.parameters()
    if count != len(params):
        raise DataError(f"{path}: checkpoint has {count} sections, model expects {len(params)}")
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", blob, offset)
        offset += 8
        data = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
        offset += rows * cols * 8
        if name not in params:
            raise DataError(f"{path}: unexpected parameter section {name!r}")
        if params[name].shape != (rows, cols):
            raise DataError(f"{path}: section {name!r} has shape {(rows, cols)}, "
                            f"expected {params[name].shape}")
        params[name].data = np.ascontiguousarray(data.reshape(rows, cols))
    (has_bank,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if has_bank:
        (blob_len,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        model.bank = bank_from_bytes(blob[offset:offset + blob_len])
    else:
        model.bank = None
    return model

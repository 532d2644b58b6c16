"""Differentiable soft trimming of prototype-like feature regions.

Three chained steps, all differentiable with respect to the region
features and the trim parameters (never the bank):

1. relevance scores   S = row-softmax(F b^T / tau)           (N x K)
2. soft mask          M = 1 - sigmoid(scale * (S w) + bias)  (N x 1)
3. residual trim      F_hat = F * M + F                      (N x D)

A region that strongly resembles a bank prototype gets a mask near 0 and
is merely passed through, while instance-specific regions approach mask 1
and are amplified toward 2x.  The residual keeps every per-region norm
ratio inside (1, 2), so trimming re-weights evidence without deleting it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bank import FeatureBank
from .errors import ConfigError


@dataclass
class TrimParams:
    """Learnable prototype weights plus the affine scalar map and temperature.

    ``w``, ``psi_scale`` and ``psi_bias`` receive gradients; ``tau`` is a
    fixed positive hyperparameter.  The aggregate S w is already a scalar
    per region, so the learnable projection reduces to an affine
    scalar-to-scalar map.
    """

    w: Tensor          # K x 1
    psi_scale: Tensor  # 1 x 1
    psi_bias: Tensor   # 1 x 1
    tau: float

    def parameters(self) -> dict[str, Tensor]:
        return {"trim_w": self.w, "trim_psi_scale": self.psi_scale, "trim_psi_bias": self.psi_bias}


def init_trim_params(bank_size: int, tau: float) -> TrimParams:
    """Zero weights, identity affine map: the initial mask is 0.5 everywhere."""
    if tau <= 0:
        raise ConfigError(f"trim temperature must be positive, got {tau}")
    if bank_size < 1:
        raise ConfigError(f"trim needs bank_size >= 1, got {bank_size}")
    return TrimParams(
        w=Tensor(np.zeros((bank_size, 1)), requires_grad=True),
        psi_scale=Tensor(np.ones((1, 1)), requires_grad=True),
        psi_bias=Tensor(np.zeros((1, 1)), requires_grad=True),
        tau=float(tau),
    )


@dataclass
class TrimOutput:
    """Relevance scores, per-region mask and trimmed features."""

    scores: Tensor   # N x K, rows sum to 1
    mask: Tensor     # N x 1, entries in (0, 1)
    trimmed: Tensor  # N x D


def relevance_scores(features: Tensor, bank: FeatureBank, tau: float) -> Tensor:
    """Row-stochastic prototype-similarity scores; the bank read is detached."""
    if features.cols != bank.dim:
        raise ConfigError(
            f"relevance_scores: feature dim {features.cols} does not match bank dim {bank.dim}"
        )
    logits = features @ Tensor(bank.prototypes.T.copy())
    return ad.softmax_rows(logits, tau)


def soft_mask(scores: Tensor, params: TrimParams) -> Tensor:
    """Per-region attenuator M = 1 - sigmoid(scale * (S w) + bias).

    The score-weight aggregate is reduced in sorted order: permuting the
    bank together with ``w`` leaves the mask bitwise unchanged.
    """
    if scores.cols != params.w.rows:
        raise ConfigError(
            f"soft_mask: scores have {scores.cols} columns, w has {params.w.rows} entries"
        )
    aggregate = (scores * params.w.transpose()).sum_rows_sorted()
    return 1.0 - (params.psi_scale * aggregate + params.psi_bias).sigmoid()


def apply_trim(features: Tensor, mask: Tensor) -> Tensor:
    """Residual modulation F * M + F, mask broadcast across feature columns."""
    if mask.rows != features.rows or mask.cols != 1:
        raise ConfigError(
            f"apply_trim: mask shape {mask.shape} does not match features {features.shape}"
        )
    return features * mask + features


def trim_forward(features: Tensor, bank: FeatureBank, params: TrimParams) -> TrimOutput:
    """Chain scoring, masking and residual trimming on one feature matrix."""
    scores = relevance_scores(features, bank, params.tau)
    mask = soft_mask(scores, params)
    return TrimOutput(scores=scores, mask=mask, trimmed=apply_trim(features, mask))


# -- mask inspection dumps ----------------------------------------------------


def mask_text_grid(mask_values: np.ndarray) -> str:
    """One line per region with the mask value, for quick inspection."""
    vals = np.asarray(mask_values, dtype=np.float64).reshape(-1)
    return "\n".join(f"{v:.6f}" for v in vals) + "\n"


def mask_pgm(mask_values: np.ndarray) -> str:
    """Plain-text PGM heatmap of the mask, values mapped to 0..255.

    Renders a square grid when the region count is a perfect square,
    otherwise a single row.
    """
    vals = np.asarray(mask_values, dtype=np.float64).reshape(-1)
    n = vals.size
    side = int(round(np.sqrt(n)))
    if side * side == n:
        width, height = side, side
    else:
        width, height = n, 1
    levels = np.clip(np.rint(vals * 255.0), 0, 255).astype(int)
    lines = ["P2", f"{width} {height}", "255"]
    for r in range(height):
        lines.append(" ".join(str(v) for v in levels[r * width:(r + 1) * width]))
    return "\n".join(lines) + "\n"


def write_mask_dump(mask_values: np.ndarray, text_path, pgm_path) -> None:
    with open(text_path, "w") as fh:
        fh.write(mask_text_grid(mask_values))
    with open(pgm_path, "w") as fh:
        fh.write(mask_pgm(mask_values))

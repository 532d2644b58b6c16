"""Momentum-updated prototype feature bank.

The bank holds K prototype vectors that summarize frequently recurring
visual patterns.  It is a non-learnable buffer: training reads it through
detached constants, and the only mutation is the per-batch momentum update

    b  <-  m * b + (1 - m) * f_avg

applied to the single prototype nearest (Euclidean) to the incoming batch
average.  Broadcasting one batch average into every row would collapse all
prototypes onto the same vector, so the nearest-row assignment keeps the
bank diverse while each touched row still follows the exponential moving
average recursion exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, DataError

BANK_MAGIC = b"DAFB"
BANK_VERSION = 1


class FeatureBank:
    """K x D prototype matrix with momentum state."""

    def __init__(self, prototypes: np.ndarray, momentum: float, update_count: int = 0):
        prototypes = np.ascontiguousarray(np.asarray(prototypes, dtype=np.float64))
        if prototypes.ndim != 2 or prototypes.shape[0] < 1 or prototypes.shape[1] < 1:
            raise ConfigError(f"bank prototypes must be a K x D matrix, got shape {prototypes.shape}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        if not np.isfinite(prototypes).all():
            raise DataError("bank prototypes contain non-finite values")
        self.prototypes = prototypes
        self.momentum = float(momentum)
        self.update_count = int(update_count)

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def average(self) -> np.ndarray:
        """Mean over the K prototype rows (the bank's summary direction)."""
        return self.prototypes.mean(axis=0)

    def update(self, f_avg: np.ndarray) -> "FeatureBank":
        """Momentum-update the prototype nearest to ``f_avg``.

        Exactly one row changes per call; ties on the distance break toward
        the lowest index.  Returns self for chaining.
        """
        f_avg = np.asarray(f_avg, dtype=np.float64).reshape(-1)
        if f_avg.shape[0] != self.dim:
            raise ConfigError(f"update vector has dim {f_avg.shape[0]}, bank has dim {self.dim}")
        if not np.isfinite(f_avg).all():
            raise DataError("bank update vector contains non-finite values")
        dists = np.sum((self.prototypes - f_avg) ** 2, axis=1)
        k = int(np.argmin(dists))  # argmin returns the first minimum: lowest index wins ties
        m = self.momentum
        self.prototypes[k] = m * self.prototypes[k] + (1.0 - m) * f_avg
        self.update_count += 1
        return self


def init_bank(size: int, dim: int, seed, momentum: float = 0.99) -> FeatureBank:
    """Gaussian-initialized bank with per-entry standard deviation 1/sqrt(dim).

    The 1/sqrt(dim) scale keeps dot products between unit-norm features and
    prototypes O(1), so relevance logits stay well-scaled at low softmax
    temperatures.  ``seed`` may be an integer or a numpy Generator.
    """
    if size < 1 or dim < 1:
        raise ConfigError(f"bank needs size >= 1 and dim >= 1, got size={size} dim={dim}")
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(size, dim))
    return FeatureBank(prototypes, momentum=momentum)


def batch_global_feature(batch_features: list[np.ndarray]) -> np.ndarray:
    """Mean over every region of every instance in the batch.

    Equal to the flat mean over the stacked (sum N_i) x D matrix.
    """
    if not batch_features:
        raise DataError("batch_global_feature: empty batch")
    stacked = np.concatenate([np.asarray(f, dtype=np.float64) for f in batch_features], axis=0)
    return stacked.mean(axis=0)


def momentum_update(bank: FeatureBank, f_avg: np.ndarray) -> FeatureBank:
    """Functional alias for :meth:`FeatureBank.update`."""
    return bank.update(f_avg)


def bank_average(bank: FeatureBank) -> np.ndarray:
    return bank.average()


def save_bank(bank: FeatureBank, path) -> None:
    """Write the binary bank checkpoint (magic DAFB, little-endian f64 body)."""
    with open(path, "wb") as fh:
        fh.write(bank_to_bytes(bank))


def load_bank(path) -> FeatureBank:
    with open(path, "rb") as fh:
        return bank_from_bytes(fh.read())


def bank_to_bytes(bank: FeatureBank) -> bytes:
    header = BANK_MAGIC + struct.pack(
        "<IIIdQ", BANK_VERSION, bank.size, bank.dim, bank.momentum, bank.update_count
    )
    return header + bank.prototypes.astype("<f8").tobytes()


def bank_from_bytes(blob: bytes) -> FeatureBank:
    if blob[:4] != BANK_MAGIC:
        raise DataError("not a bank checkpoint (bad magic)")
    version, size, dim, momentum, count = struct.unpack_from("<IIIdQ", blob, 4)
    if version != BANK_VERSION:
        raise DataError(f"unsupported bank checkpoint version {version}")
    offset = 4 + struct.calcsize("<IIIdQ")
    expected = size * dim * 8
    body = blob[offset:offset + expected]
    if len(body) != expected:
        raise DataError("bank checkpoint truncated")
    prototypes = np.frombuffer(body, dtype="<f8").reshape(size, dim).copy()
    return FeatureBank(prototypes, momentum=momentum, update_count=count)

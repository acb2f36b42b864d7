"""Mixup: virtual training examples from convex combinations of sample pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 1.0
    real_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError(f"real_fraction must be in [0, 1], got {self.real_fraction}")


@dataclass
class MixedBatch:
    x_tilde: np.ndarray
    y_tilde: np.ndarray
    lam: np.ndarray
    is_real: np.ndarray
    source_indices: np.ndarray  # (B, 2) rows (i, j)

    def __len__(self) -> int:
        return self.x_tilde.shape[0]

    @property
    def real_rows(self) -> np.ndarray:
        return self.x_tilde[self.is_real]


def mix_pair(x_i, y_i, x_j, y_j, lam: float) -> tuple[np.ndarray, np.ndarray]:
    x_i, x_j = np.asarray(x_i, dtype=np.float64), np.asarray(x_j, dtype=np.float64)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ValueError(f"feature shapes differ: {x_i.shape} vs {x_j.shape}")
    if y_i.shape != y_j.shape:
        raise ValueError(f"label shapes differ: {y_i.shape} vs {y_j.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    # endpoints are returned verbatim so real samples survive bit-exactly
    if lam == 1.0:
        return x_i.copy(), y_i.copy()
    if lam == 0.0:
        return x_j.copy(), y_j.copy()
    return lam * x_i + (1.0 - lam) * x_j, lam * y_i + (1.0 - lam) * y_j


def sample_lambdas(config: MixupConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` mixing coefficients.

    Each draw is, with probability ``real_fraction``, an exact endpoint
    (0.0 or 1.0 with equal odds); otherwise it comes from Beta(alpha, alpha).
    """
    forced = rng.random(size) < config.real_fraction
    endpoint = rng.integers(0, 2, size=size).astype(np.float64)
    beta = rng.beta(config.alpha, config.alpha, size=size)
    return np.where(forced, endpoint, beta)


def sample_lambda(config: MixupConfig, rng: np.random.Generator) -> float:
    return float(sample_lambdas(config, rng, 1)[0])


def mix_arrays(
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    config: MixupConfig,
    rng: np.random.Generator,
    first: np.ndarray | None = None,
) -> MixedBatch:
    """Vectorised batch mixing over row-aligned feature and label arrays.

    ``first`` optionally fixes the first partner of every row (used for
    epoch-wise shuffling); the second partner is always drawn uniformly.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot mix an empty dataset")
    if first is None:
        i = rng.integers(0, n, size=batch_size)
    else:
        i = np.asarray(first, dtype=np.int64)
        batch_size = i.shape[0]
    j = rng.integers(0, n, size=batch_size)
    lam = sample_lambdas(config, rng, batch_size)

    lam_col = lam[:, None]
    x_t = lam_col * x[i] + (1.0 - lam_col) * x[j]
    y_t = lam_col * y[i] + (1.0 - lam_col) * y[j]
    is_one, is_zero = lam == 1.0, lam == 0.0
    x_t[is_one], y_t[is_one] = x[i[is_one]], y[i[is_one]]
    x_t[is_zero], y_t[is_zero] = x[j[is_zero]], y[j[is_zero]]
    return MixedBatch(x_t, y_t, lam, is_one | is_zero, np.stack([i, j], axis=1))


def make_mixed_batch(dataset, batch_size: int, config: MixupConfig, rng: np.random.Generator, first=None) -> MixedBatch:
    return mix_arrays(dataset.features, dataset.one_hot, batch_size, config, rng, first=first)

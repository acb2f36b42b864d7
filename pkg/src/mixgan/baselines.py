"""Dimensionality-reduction baselines: PCA and a plain ReLU autoencoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp, adam_step, AdamState, backward, build_mlp, forward, mse_loss


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def pca_fit(x: np.ndarray, k: int) -> PcaModel:
    """Top-``k`` eigenvectors of the sample covariance.

    Each component is sign-fixed so its largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} must lie in [1, min(N-1, D)] = [1, {min(n - 1, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order].T
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), pivot])[:, None]
    return PcaModel(mean, comps, np.maximum(evals[order], 0.0))


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"PCA fitted on {model.mean.shape[0]} features, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[-1] != model.k:
        raise ValueError(f"PCA has {model.k} components, got codes with {codes.shape[-1]}")
    return codes @ model.components + model.mean


@dataclass(frozen=True)
class BaselineAeConfig:
    hidden: tuple[int, ...] = (512, 128)
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass
class BaselineAeModel:
    encoder: Mlp
    decoder: Mlp
    losses: list[float]

    @property
    def k(self) -> int:
        return self.encoder.out_dim


def baseline_ae_train(x: np.ndarray, k: int, config: BaselineAeConfig,
                      rng: np.random.Generator | None = None) -> BaselineAeModel:
    """Fit D -> hidden... -> k -> ...hidden -> D with ReLU hidden layers on an MSE loss."""
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d = x.shape[1]
    enc_sizes = [d, *config.hidden, k]
    acts = ["relu"] * len(config.hidden) + ["linear"]
    encoder = build_mlp(enc_sizes, acts, rng)
    decoder = build_mlp(enc_sizes[::-1], acts, rng)
    params = encoder.parameters() + decoder.parameters()
    state = AdamState.for_params(params, config.learning_rate)
    losses = []
    for _ in range(config.epochs):
        perm = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            xb = x[perm[start:start + config.batch_size]]
            z, ce = forward(encoder, xb)
            xh, cd = forward(decoder, z)
            loss, g = mse_loss(xh, xb)
            gd, gz = backward(decoder, cd, g)
            ge, _ = backward(encoder, ce, gz)
            adam_step(params, ge + gd, state)
            total += loss * len(xb)
        losses.append(total / len(x))
    return BaselineAeModel(encoder, decoder, losses)


def baseline_ae_encode(model: BaselineAeModel, x: np.ndarray) -> np.ndarray:
    return forward(model.encoder, np.asarray(x, dtype=np.float64))[0]


def baseline_ae_reconstruct(model: BaselineAeModel, x: np.ndarray) -> np.ndarray:
    return forward(model.decoder, baseline_ae_encode(model, x))[0]

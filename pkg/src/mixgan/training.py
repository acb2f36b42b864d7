"""Autoencoder pretraining and the three-phase adversarial update."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureDataset
from .mixup import MixedBatch, MixupConfig, mix_arrays
from .model import MixGanModel, discriminate, reconstruct
from .nn import AdamState, adam_step, backward, bce_loss, forward, mse_loss

log = logging.getLogger(__name__)

MONITOR_ROWS = 512


class NumericalError(RuntimeError):
    def __init__(self, phase: str, epoch: int, batch: int, loss: float):
        self.phase, self.epoch, self.batch, self.loss = phase, epoch, batch, loss
        super().__init__(f"non-finite {phase} loss {loss} at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 50
    epochs: int = 200
    batch_size: int = 64
    lr_autoencoder: float = 1e-4
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    recon_weight: float = 1.0  # scales the autoencoder phase loss
    mixup: MixupConfig = field(default_factory=MixupConfig)
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epoch counts must be non-negative and batch_size positive")
        if min(self.lr_autoencoder, self.lr_generator, self.lr_discriminator, self.recon_weight) <= 0:
            raise ValueError("learning rates and recon_weight must be positive")


@dataclass
class EpochRecord:
    epoch: int
    phase: str  # "pretrain" or "adversarial"
    recon_loss: float
    eval_recon_loss: float
    generator_loss: float
    discriminator_loss: float
    discriminator_accuracy: float
    skipped_discriminator_steps: int = 0
    wall_time: float = 0.0


CSV_FIELDS = ("epoch", "phase", "recon_loss", "eval_recon_loss", "generator_loss",
              "discriminator_loss", "discriminator_accuracy", "skipped_discriminator_steps")


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def phase(self, name: str) -> list[EpochRecord]:
        return [r for r in self.records if r.phase == name]

    def to_csv(self, path) -> None:
        # wall_time is left out so logs are byte-reproducible
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v
                            for v in (getattr(r, f) for f in CSV_FIELDS)])


@dataclass
class StepLosses:
    recon: float
    generator: float
    discriminator: float  # nan when phase 3 was skipped
    discriminator_skipped: bool


# ---- per-phase objectives ---------------------------------------------------

def autoencoder_objective(model: MixGanModel, x: np.ndarray, rng: np.random.Generator,
                          weight: float = 1.0) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Reconstruction loss over every row and its encoder/generator gradients."""
    z, enc_cache = forward(model.encoder, x, True, rng)
    x_hat, gen_cache = forward(model.generator, z, True, rng)
    loss, g = mse_loss(x_hat, x)
    gen_grads, gz = backward(model.generator, gen_cache, weight * g)
    enc_grads, _ = backward(model.encoder, enc_cache, gz)
    return weight * loss, enc_grads, gen_grads


def generator_objective(model: MixGanModel, x: np.ndarray,
                        rng: np.random.Generator) -> tuple[float, list[np.ndarray]]:
    """Non-saturating adversarial loss ``-log D(G(E(x)))`` and its generator gradient."""
    z, _ = forward(model.encoder, x, True, rng)
    fake, gen_cache = forward(model.generator, z, True, rng)
    prob, dis_cache = forward(model.discriminator, fake)
    loss, gp = bce_loss(prob[:, 0], np.ones(len(fake)))
    _, gx = backward(model.discriminator, dis_cache, gp[:, None])
    gen_grads, _ = backward(model.generator, gen_cache, gx)
    return loss, gen_grads


def discriminator_objective(model: MixGanModel, x_real: np.ndarray,
                            rng: np.random.Generator) -> tuple[float, list[np.ndarray]]:
    """BCE of real rows (label 1) against their reconstructions (label 0)."""
    fake = reconstruct(model, x_real, True, rng)
    inputs = np.vstack([x_real, fake])
    labels = np.concatenate([np.ones(len(x_real)), np.zeros(len(fake))])
    prob, cache = forward(model.discriminator, inputs)
    loss, gp = bce_loss(prob[:, 0], labels)
    grads, _ = backward(model.discriminator, cache, gp[:, None])
    return loss, grads


def _optimizer(model: MixGanModel, name: str, params: list[np.ndarray], lr: float) -> AdamState:
    if name not in model.optimizers:
        model.optimizers[name] = AdamState.for_params(params, lr)
    return model.optimizers[name]


def _check(loss: float, phase: str, epoch: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise NumericalError(phase, epoch, batch, loss)


def autoencoder_step(model: MixGanModel, x: np.ndarray, config: TrainConfig,
                     rng: np.random.Generator, epoch: int = 0, batch: int = 0) -> float:
    loss, enc_grads, gen_grads = autoencoder_objective(model, x, rng, config.recon_weight)
    _check(loss, "reconstruction", epoch, batch)
    params = model.encoder.parameters() + model.generator.parameters()
    adam_step(params, enc_grads + gen_grads, _optimizer(model, "autoencoder", params, config.lr_autoencoder))
    return loss


def train_step(model: MixGanModel, batch: MixedBatch, config: TrainConfig, rng: np.random.Generator,
               epoch: int = 0, batch_index: int = 0) -> StepLosses:
    """One iteration: autoencoder, then generator, then discriminator on real rows only."""
    x = batch.x_tilde
    recon = autoencoder_step(model, x, config, rng, epoch, batch_index)

    gen_loss, gen_grads = generator_objective(model, x, rng)
    _check(gen_loss, "generator", epoch, batch_index)
    gen_params = model.generator.parameters()
    adam_step(gen_params, gen_grads, _optimizer(model, "generator", gen_params, config.lr_generator))

    real = batch.x_tilde[batch.is_real]
    if len(real) == 0:
        return StepLosses(recon, gen_loss, float("nan"), True)
    dis_loss, dis_grads = discriminator_objective(model, real, rng)
    _check(dis_loss, "discriminator", epoch, batch_index)
    dis_params = model.discriminator.parameters()
    adam_step(dis_params, dis_grads, _optimizer(model, "discriminator", dis_params, config.lr_discriminator))
    return StepLosses(recon, gen_loss, dis_loss, False)


# ---- loops ------------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def reconstruction_mse(model: MixGanModel, x: np.ndarray) -> float:
    return mse_loss(reconstruct(model, x), x)[0]


def discriminator_accuracy(model: MixGanModel, x: np.ndarray) -> float:
    """Balanced real-vs-reconstruction accuracy of the discriminator in eval mode."""
    real = discriminate(model, x)
    fake = discriminate(model, reconstruct(model, x))
    return 0.5 * (float(np.mean(real > 0.5)) + float(np.mean(fake <= 0.5)))


def _monitor_rows(data: FeatureDataset) -> np.ndarray:
    if len(data) <= MONITOR_ROWS:
        return data.features
    idx = np.linspace(0, len(data) - 1, MONITOR_ROWS).astype(np.int64)
    return data.features[idx]


def pretrain_autoencoder(model: MixGanModel, data: FeatureDataset, config: TrainConfig,
                         rng: np.random.Generator, monitor: FeatureDataset | None = None) -> list[EpochRecord]:
    """Minimise reconstruction loss on mixed batches; the discriminator is not touched."""
    x_mon = _monitor_rows(monitor if monitor is not None else data)
    one_hot = data.one_hot
    records = []
    for _ in range(config.pretrain_epochs):
        start = time.perf_counter()
        epoch = model.epoch + 1
        losses = []
        for b, idx in enumerate(_batches(len(data), config.batch_size, rng)):
            mixed = mix_arrays(data.features, one_hot, len(idx), config.mixup, rng, first=idx)
            losses.append(autoencoder_step(model, mixed.x_tilde, config, rng, epoch, b))
        model.epoch = epoch
        records.append(EpochRecord(
            epoch, "pretrain", float(np.mean(losses)), reconstruction_mse(model, x_mon),
            float("nan"), float("nan"), discriminator_accuracy(model, x_mon),
            wall_time=time.perf_counter() - start,
        ))
        log.debug("pretrain epoch %d recon %.5f", epoch, records[-1].recon_loss)
    return records


def adversarial_epochs(model: MixGanModel, data: FeatureDataset, config: TrainConfig,
                       rng: np.random.Generator, monitor: FeatureDataset | None = None) -> list[EpochRecord]:
    x_mon = _monitor_rows(monitor if monitor is not None else data)
    one_hot = data.one_hot
    records = []
    for _ in range(config.epochs):
        start = time.perf_counter()
        epoch = model.epoch + 1
        steps, skipped = [], 0
        for b, idx in enumerate(_batches(len(data), config.batch_size, rng)):
            mixed = mix_arrays(data.features, one_hot, len(idx), config.mixup, rng, first=idx)
            s = train_step(model, mixed, config, rng, epoch, b)
            skipped += s.discriminator_skipped
            steps.append(s)
        if skipped:
            log.warning("epoch %d: %d batches had no real rows, discriminator step skipped", epoch, skipped)
        dis = [s.discriminator for s in steps if not s.discriminator_skipped]
        model.epoch = epoch
        records.append(EpochRecord(
            epoch, "adversarial",
            float(np.mean([s.recon for s in steps])),
            reconstruction_mse(model, x_mon),
            float(np.mean([s.generator for s in steps])),
            float(np.mean(dis)) if dis else float("nan"),
            discriminator_accuracy(model, x_mon),
            skipped,
            time.perf_counter() - start,
        ))
    return records


def train(model: MixGanModel, data: FeatureDataset, config: TrainConfig,
          rng: np.random.Generator | None = None, monitor: FeatureDataset | None = None) -> TrainLog:
    """Pretrain the autoencoder, then run the adversarial epochs.

    ``monitor`` is the real data used for the per-epoch diagnostics
    (defaults to ``data``); it never feeds a parameter update.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if data.dim != model.config.input_dim:
        raise ValueError(f"data has {data.dim} features, model expects {model.config.input_dim}")
    tl = TrainLog()
    tl.records += pretrain_autoencoder(model, data, config, rng, monitor)
    tl.records += adversarial_epochs(model, data, config, rng, monitor)
    return tl


def generate_synthetic_dataset(model: MixGanModel, data: FeatureDataset) -> FeatureDataset:
    """One eval-mode reconstruction per row, keeping label, session and speaker."""
    if data.dim != model.config.input_dim:
        raise ValueError(f"data has {data.dim} features, model expects {model.config.input_dim}")
    syn = data.with_features(reconstruct(model, data.features))
    return FeatureDataset(syn.features, syn.labels, syn.session, syn.speaker,
                          np.char.add(data.ids.astype(str), "_syn"), data.corpus)

"""Downstream classifiers, recall metrics and the experiment drivers."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .baselines import BaselineAeConfig, baseline_ae_encode, baseline_ae_train, pca_fit, pca_transform
from .data import (CLASS_NAMES, N_CLASSES, FeatureDataset, apply_normalizer, fit_normalizer,
                   loso_splits, stratified_split)
from .mixup import MixupConfig, mix_arrays
from .model import MixGanConfig, array_digest, build_model, encode, parameter_digest
from .nn import Mlp, AdamState, adam_step, backward, build_mlp, forward, softmax_ce_loss
from .training import TrainConfig, generate_synthetic_dataset, train

log = logging.getLogger(__name__)

SETTINGS = ("real", "synthetic", "real+synthetic")

# Published corpus-scale UARs, carried as annotations for human comparison only.
REFERENCE_UAR = {
    ("within", "real"): "IEMOCAP published: 60.51 ± 0.57",
    ("within", "synthetic"): "IEMOCAP published: 45.75 ± 0.81",
    ("within", "real+synthetic"): "IEMOCAP published: 61.05 ± 0.68",
    ("cross", "real"): "MSP-IMPROV published: 46.0 ± 0.57",
    ("cross", "synthetic"): "MSP-IMPROV published: 42.15 ± 1.12",
    ("cross", "real+synthetic"): "MSP-IMPROV published: 46.60 ± 0.45",
    ("encoded", "pca"): "IEMOCAP published: 57.7",
    ("encoded", "autoencoder"): "IEMOCAP published: 57.8",
    ("encoded", "pca+mixup"): "IEMOCAP published: 58.3",
    ("encoded", "autoencoder+mixup"): "IEMOCAP published: 58.5",
    ("encoded", "proposed+mixup"): "IEMOCAP published: 59.6",
}


class EmptyClassWarning(UserWarning):
    pass


# ---- classifiers ------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    hidden_units: int = 400
    hidden_layers: int = 2
    dropout_rate: float = 0.5
    learning_rate: float = 1e-5
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    eval_every: int = 10  # dev-set check interval when a dev set is given
    mixup: MixupConfig | None = None

    def __post_init__(self):
        if min(self.hidden_units, self.hidden_layers, self.epochs, self.batch_size, self.eval_every) <= 0:
            raise ValueError("classifier sizes and counts must be positive")
        if self.learning_rate <= 0 or not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("learning_rate must be positive and dropout_rate in [0, 1)")


@dataclass
class Classifier:
    mlp: Mlp
    classes_seen: np.ndarray  # bool per class
    losses: list[float] = field(default_factory=list)
    selected_epoch: int | None = None

    def digest(self) -> str:
        return parameter_digest(self.mlp)


def _targets_of(train, targets):
    if isinstance(train, FeatureDataset):
        x = train.features
        if targets is None:
            targets = train.labels
    else:
        x = np.asarray(train, dtype=np.float64)
    if targets is None:
        raise ValueError("targets are required when training on a bare array")
    return x, np.asarray(targets)


def train_classifier(train, config: ClassifierConfig, rng: np.random.Generator | None = None,
                     targets=None, dev: FeatureDataset | None = None) -> Classifier:
    """Softmax classifier with ``hidden_layers`` leaky-ReLU layers and dropout after each.

    ``targets`` may be class indices or soft label rows. With ``dev`` the
    parameters from the dev-UAR-best checkpoint (every ``eval_every`` epochs)
    are kept; without it the final parameters are.
    """
    x, y = _targets_of(train, targets)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    soft = y.ndim == 2
    y_rows = y.astype(np.float64) if soft else np.eye(N_CLASSES)[y.astype(np.int64)]
    seen = y_rows.sum(axis=0) > 0

    sizes = [x.shape[1], *[config.hidden_units] * config.hidden_layers, N_CLASSES]
    acts = ["leaky_relu"] * config.hidden_layers + ["linear"]
    mlp = build_mlp(sizes, acts, rng, config.dropout_rate, range(config.hidden_layers))
    params = mlp.parameters()
    state = AdamState.for_params(params, config.learning_rate)
    clf = Classifier(mlp, seen)

    best = (-1.0, None, None)
    n = len(x)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if config.mixup is not None:
                mixed = mix_arrays(x, y_rows, len(idx), config.mixup, rng, first=idx)
                xb, tb = mixed.x_tilde, mixed.y_tilde
            else:
                xb, tb = x[idx], y_rows[idx]
            logits, cache = forward(mlp, xb, True, rng)
            loss, g = softmax_ce_loss(logits, tb)
            grads, _ = backward(mlp, cache, g)
            adam_step(params, grads, state)
            total += loss * len(idx)
        clf.losses.append(total / n)
        if dev is not None and (epoch % config.eval_every == 0 or epoch == config.epochs):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EmptyClassWarning)
                score = uar(confusion(dev.labels, predict(clf, dev.features)))
            if score > best[0]:
                best = (score, epoch, [p.copy() for p in params])
    if best[2] is not None:
        for p, saved in zip(params, best[2]):
            p[...] = saved
        clf.selected_epoch = best[1]
    return clf


def predict_logits(clf: Classifier, x: np.ndarray) -> np.ndarray:
    return forward(clf.mlp, np.asarray(x, dtype=np.float64))[0]


def predict(clf: Classifier, x: np.ndarray) -> np.ndarray:
    """Arg-max class, restricted to classes present in the training targets."""
    logits = predict_logits(clf, x)
    return np.argmax(np.where(clf.classes_seen, logits, -np.inf), axis=1)


# ---- metrics ----------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, cols: predicted

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def absent_classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.counts.sum(axis=1) == 0)]


def confusion(true_labels, predictions, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"{t.size} labels vs {p.size} predictions")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    """Diagonal over row sums; NaN for classes with no test samples."""
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts).astype(np.float64)
    out = np.full(rows.shape, np.nan)
    present = rows > 0
    out[present] = diag[present] / rows[present]
    return out


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall over the classes present in the true labels."""
    recalls = per_class_recall(cm)
    present = ~np.isnan(recalls)
    if not present.any():
        raise ValueError("confusion matrix is empty")
    if not present.all():
        warnings.warn(f"classes {cm.absent_classes} absent from the true labels; excluded from UAR",
                      EmptyClassWarning, stacklevel=2)
    return float(recalls[present].mean())


# ---- reports ----------------------------------------------------------------

@dataclass
class FoldResult:
    seed: int
    fold: str
    uar: float
    absent_classes: list[int] = field(default_factory=list)
    digests: dict[str, str] = field(default_factory=dict)
    selected_epoch: int | None = None


@dataclass
class EvalReport:
    experiment: str
    setting: str
    folds: list[FoldResult] = field(default_factory=list)
    confusion: ConfusionMatrix = field(default_factory=lambda: ConfusionMatrix(np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)))
    reference: str | None = None

    def add(self, result: FoldResult, cm: ConfusionMatrix) -> None:
        self.folds.append(result)
        self.confusion = self.confusion + cm

    def per_seed_uar(self) -> dict[int, float]:
        out = {}
        for seed in sorted({f.seed for f in self.folds}):
            out[seed] = float(np.mean([f.uar for f in self.folds if f.seed == seed]))
        return out

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_seed_uar().values())))

    @property
    def std(self) -> float:
        # population standard deviation of the per-seed UARs
        return float(np.std(list(self.per_seed_uar().values()), ddof=0))

    @property
    def warnings(self) -> list[str]:
        return [f"seed {f.seed} fold {f.fold}: classes {[CLASS_NAMES[c] for c in f.absent_classes]} "
                "absent from test set, excluded from UAR" for f in self.folds if f.absent_classes]

    def to_dict(self) -> dict:
        seeds = {}
        for f in sorted(self.folds, key=lambda r: (r.seed, r.fold)):
            entry = seeds.setdefault(str(f.seed), {"uar": self.per_seed_uar()[f.seed], "folds": {}})
            fold = {"uar": f.uar, "digests": dict(sorted(f.digests.items()))}
            if f.absent_classes:
                fold["absent_classes"] = [CLASS_NAMES[c] for c in f.absent_classes]
            if f.selected_epoch is not None:
                fold["selected_epoch"] = f.selected_epoch
            entry["folds"][f.fold] = fold
        return {
            "mean_uar": self.mean,
            "std_uar": self.std,
            "reference": self.reference,
            "warnings": self.warnings,
            "confusion": {"classes": list(CLASS_NAMES), "counts": self.confusion.counts.tolist()},
            "seeds": seeds,
        }


def reports_to_dict(experiment: str, reports: dict[str, EvalReport]) -> dict:
    return {"experiment": experiment, "settings": {k: reports[k].to_dict() for k in reports}}


def reports_to_json(experiment: str, reports: dict[str, EvalReport]) -> str:
    return json.dumps(reports_to_dict(experiment, reports), indent=2, sort_keys=False, allow_nan=False) + "\n"


def reports_to_csv(experiment: str, reports: dict[str, EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "setting", "seed", "fold", "uar"])
    for name, rep in reports.items():
        for f in sorted(rep.folds, key=lambda r: (r.seed, r.fold)):
            w.writerow([experiment, name, f.seed, f.fold, repr(f.uar)])
    return buf.getvalue()


def confusion_to_csv(reports: dict[str, EvalReport]) -> str:
    """One 4x4 block per setting, separated by blank lines."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for k, (name, rep) in enumerate(reports.items()):
        if k:
            w.writerow([])
        w.writerow([f"# {name}"])
        w.writerow(["true\\pred", *CLASS_NAMES])
        for cname, row in zip(CLASS_NAMES, rep.confusion.counts):
            w.writerow([cname, *row.tolist()])
    return buf.getvalue()


# ---- experiment drivers -----------------------------------------------------

def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in keys])


_MODEL, _TRAIN, _CLF, _MIX, _AE = range(5)


def _check_dim(model_config: MixGanConfig, data: FeatureDataset) -> None:
    if model_config.input_dim != data.dim:
        raise ValueError(f"model input_dim {model_config.input_dim} != data dimension {data.dim}")


def _classifier_configs(configs) -> dict[str, ClassifierConfig]:
    if isinstance(configs, ClassifierConfig):
        return {s: configs for s in SETTINGS}
    missing = [s for s in SETTINGS if s not in configs]
    if missing:
        raise ValueError(f"classifier configs missing for settings {missing}")
    return dict(configs)


def _score(clf: Classifier, test: FeatureDataset) -> tuple[float, ConfusionMatrix]:
    cm = confusion(test.labels, predict(clf, test.features))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyClassWarning)
        return uar(cm), cm


def _train_mixgan(model_config, train_config, data, seed, fold):
    model = build_model(model_config, _rng(seed, fold, _MODEL))
    tl = train(model, data, train_config, _rng(seed, fold, _TRAIN))
    return model, tl


def _three_settings(reports, seed, fold_name, fold_idx, model, real_tr, syn_tr, eval_sets, configs, dev_sets=None):
    """Run the real / synthetic / real+synthetic classifiers for one fold."""
    gan = parameter_digest(model.encoder, model.generator, model.discriminator)
    train_sets = {"real": real_tr, "synthetic": syn_tr, "real+synthetic": real_tr.concat(syn_tr)}
    for k, setting in enumerate(SETTINGS):
        dev = dev_sets[setting] if dev_sets else None
        clf = train_classifier(train_sets[setting], configs[setting], _rng(seed, fold_idx, _CLF, k), dev=dev)
        score, cm = _score(clf, eval_sets[setting])
        reports[setting].add(FoldResult(seed, fold_name, score, cm.absent_classes,
                                        {"mixgan": gan, "classifier": clf.digest()}, clf.selected_epoch), cm)


def run_within_corpus(data: FeatureDataset, model_config: MixGanConfig, train_config: TrainConfig,
                      classifier_configs, seeds: Sequence[int], folds=None,
                      synthetic_test: str = "synthetic") -> dict[str, EvalReport]:
    """Leave-one-session-out evaluation of real, synthetic and real+synthetic training features.

    Per fold: min-max statistics come from the training sessions, the model
    is trained on them, and synthetic train/test features are its eval-mode
    reconstructions. ``synthetic_test="real"`` scores the synthetic-trained
    classifier on real test features instead.
    """
    if synthetic_test not in ("synthetic", "real"):
        raise ValueError("synthetic_test must be 'synthetic' or 'real'")
    _check_dim(model_config, data)
    configs = _classifier_configs(classifier_configs)
    folds = loso_splits(data) if folds is None else folds
    reports = {s: EvalReport("within", s, reference=REFERENCE_UAR.get(("within", s))) for s in SETTINGS}
    for seed in seeds:
        for fi, (tr, te) in enumerate(folds):
            name = str(te.session[0]) if len(np.unique(te.session)) == 1 else f"fold{fi}"
            stats = fit_normalizer(tr, "minmax")
            tr_n, te_n = apply_normalizer(stats, tr), apply_normalizer(stats, te)
            model, _ = _train_mixgan(model_config, train_config, tr_n, seed, fi)
            syn_tr = generate_synthetic_dataset(model, tr_n)
            syn_te = generate_synthetic_dataset(model, te_n)
            eval_sets = {"real": te_n, "synthetic": syn_te if synthetic_test == "synthetic" else te_n,
                         "real+synthetic": te_n}
            _three_settings(reports, seed, name, fi, model, tr_n, syn_tr, eval_sets, configs)
            log.info("within seed %s fold %s: %s", seed, name,
                     {s: round(reports[s].folds[-1].uar, 4) for s in SETTINGS})
    return reports


def run_cross_corpus(source: FeatureDataset, target: FeatureDataset, model_config: MixGanConfig,
                     train_config: TrainConfig, classifier_configs, seeds: Sequence[int],
                     dev_fraction: float = 0.3, split_seed: int = 0, target_split=None,
                     synthetic_test: str = "synthetic") -> dict[str, EvalReport]:
    """Train on ``source``, tune classifier epochs on a stratified dev part of
    ``target`` and score on the remaining target samples.

    Each corpus is z-normalised with its own statistics; the target's are fit
    on its dev part so held-out test samples influence nothing.
    """
    _check_dim(model_config, source)
    if target.dim != source.dim:
        raise ValueError(f"source has {source.dim} features, target has {target.dim}")
    configs = _classifier_configs(classifier_configs)
    dev, test = stratified_split(target, dev_fraction, split_seed) if target_split is None else target_split
    src = apply_normalizer(fit_normalizer(source, "zscore"), source)
    tstats = fit_normalizer(dev, "zscore", fitted_on=f"{target.corpus}:dev")
    dev_n, test_n = apply_normalizer(tstats, dev), apply_normalizer(tstats, test)
    reports = {s: EvalReport("cross", s, reference=REFERENCE_UAR.get(("cross", s))) for s in SETTINGS}
    for seed in seeds:
        model, _ = _train_mixgan(model_config, train_config, src, seed, 0)
        syn_src = generate_synthetic_dataset(model, src)
        syn_dev = generate_synthetic_dataset(model, dev_n)
        syn_test = generate_synthetic_dataset(model, test_n)
        real_syn = synthetic_test == "synthetic"
        eval_sets = {"real": test_n, "synthetic": syn_test if real_syn else test_n, "real+synthetic": test_n}
        dev_sets = {"real": dev_n, "synthetic": syn_dev if real_syn else dev_n, "real+synthetic": dev_n}
        _three_settings(reports, seed, target.corpus, 0, model, src, syn_src, eval_sets, configs, dev_sets)
    return reports


REDUCERS = ("proposed", "pca", "autoencoder")


def _standardize(train_codes: np.ndarray, test_codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu, sd = train_codes.mean(axis=0), train_codes.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train_codes - mu) / sd, (test_codes - mu) / sd


def run_encoded(data: FeatureDataset, model_config: MixGanConfig, train_config: TrainConfig,
                classifier_config: ClassifierConfig, seeds: Sequence[int], k: int,
                reducers: Sequence[str] = REDUCERS, mixup_flags: Sequence[bool] = (True, False),
                ae_config: BaselineAeConfig | None = None, folds=None) -> dict[str, EvalReport]:
    """Classify k-dimensional codes from each reducer, with and without mixup.

    With mixup every reducer is fit on the same mixed training matrix and the
    classifier is trained on the codes of that matrix against the mixed soft
    labels. Without mixup the proposed model is trained on unmixed batches
    (every row real). Codes are standardised with training-code statistics.
    Report keys are ``reducer`` or ``reducer+mixup``.
    """
    if not 0 < k < data.dim:
        raise ValueError(f"k must lie in (0, {data.dim}), got {k}")
    unknown = set(reducers) - set(REDUCERS)
    if unknown:
        raise ValueError(f"unknown reducers {sorted(unknown)}")
    model_config = replace(model_config, latent_dim=k)
    _check_dim(model_config, data)
    ae_config = ae_config or BaselineAeConfig()
    folds = loso_splits(data) if folds is None else folds
    reports = {}
    for r in reducers:
        for flag in mixup_flags:
            key = f"{r}+mixup" if flag else r
            reports[key] = EvalReport("encoded", key, reference=REFERENCE_UAR.get(("encoded", key)))

    for seed in seeds:
        for fi, (tr, te) in enumerate(folds):
            name = str(te.session[0]) if len(np.unique(te.session)) == 1 else f"fold{fi}"
            stats = fit_normalizer(tr, "minmax")
            tr_n, te_n = apply_normalizer(stats, tr), apply_normalizer(stats, te)
            mixed = mix_arrays(tr_n.features, tr_n.one_hot, len(tr_n), train_config.mixup, _rng(seed, fi, _MIX))
            for flag in mixup_flags:
                fit_x = mixed.x_tilde if flag else tr_n.features
                targets = mixed.y_tilde if flag else tr_n.labels
                for ri, r in enumerate(reducers):
                    key = f"{r}+mixup" if flag else r
                    if r == "proposed":
                        tc = train_config if flag else replace(
                            train_config, mixup=replace(train_config.mixup, real_fraction=1.0))
                        model, _ = _train_mixgan(model_config, tc, tr_n, seed, 10 * fi + int(flag))
                        tr_codes, te_codes = encode(model, fit_x), encode(model, te_n.features)
                        digest = parameter_digest(model.encoder, model.generator, model.discriminator)
                    elif r == "pca":
                        pca = pca_fit(fit_x, k)
                        tr_codes, te_codes = pca_transform(pca, fit_x), pca_transform(pca, te_n.features)
                        digest = array_digest([pca.mean, pca.components])
                    else:
                        ae = baseline_ae_train(fit_x, k, ae_config, _rng(seed, fi, _AE, int(flag)))
                        tr_codes, te_codes = baseline_ae_encode(ae, fit_x), baseline_ae_encode(ae, te_n.features)
                        digest = parameter_digest(ae.encoder, ae.decoder)
                    tr_codes, te_codes = _standardize(tr_codes, te_codes)
                    clf = train_classifier(tr_codes, classifier_config, _rng(seed, fi, _CLF, 10 + ri, int(flag)),
                                           targets=targets)
                    score, cm = _score(clf, te_n.with_features(te_codes))
                    reports[key].add(FoldResult(seed, name, score, cm.absent_classes,
                                                {"reducer": digest, "classifier": clf.digest()}), cm)
    return reports

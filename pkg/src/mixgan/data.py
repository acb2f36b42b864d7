"""Feature datasets: CSV ingestion, normalisation, folds and a synthetic benchmark."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CLASS_NAMES = ("angry", "happy", "neutral", "sad")
N_CLASSES = len(CLASS_NAMES)
LABEL_ALIASES = {"excitement": "happy"}
META_COLUMNS = ("id", "corpus", "session", "speaker", "label")


class DataError(Exception):
    pass


class SchemaError(DataError):
    pass


class MalformedRowError(DataError):
    def __init__(self, line: int, count: int, expected: int):
        self.line, self.count, self.expected = line, count, expected
        super().__init__(f"line {line}: expected {expected} fields, got {count}")


class UnknownLabelError(DataError):
    def __init__(self, line: int, label: str):
        self.line, self.label = line, label
        super().__init__(f"line {line}: unknown label {label!r}")


class NonNumericFeatureError(DataError):
    def __init__(self, line: int, column: str, value: str):
        self.line, self.column, self.value = line, column, value
        super().__init__(f"line {line}: feature {column} is not numeric: {value!r}")


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    features: np.ndarray
    labels: np.ndarray
    session: np.ndarray
    speaker: np.ndarray
    ids: np.ndarray
    corpus: str = "unknown"

    def __post_init__(self):
        n = self.features.shape[0]
        for name in ("labels", "session", "speaker", "ids"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has {len(getattr(self, name))} rows, features have {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DataError("class index out of range")

    @classmethod
    def from_arrays(cls, features, labels, session=None, speaker=None, ids=None, corpus="unknown"):
        features = np.asarray(features, dtype=np.float64)
        n = features.shape[0]
        labels = np.asarray(labels, dtype=np.int64)
        session = np.asarray(session if session is not None else ["s0"] * n, dtype=str)
        speaker = np.asarray(speaker if speaker is not None else session, dtype=str)
        ids = np.asarray(ids if ids is not None else [f"{corpus}_{k:05d}" for k in range(n)], dtype=str)
        return cls(features, labels, session, speaker, ids, corpus)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def one_hot(self) -> np.ndarray:
        return np.eye(N_CLASSES)[self.labels]

    def subset(self, index) -> "FeatureDataset":
        return FeatureDataset(
            self.features[index], self.labels[index], self.session[index],
            self.speaker[index], self.ids[index], self.corpus,
        )

    def with_features(self, features: np.ndarray) -> "FeatureDataset":
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != len(self):
            raise DataError(f"{features.shape[0]} feature rows for a dataset of {len(self)}")
        return replace(self, features=features)

    def concat(self, other: "FeatureDataset") -> "FeatureDataset":
        return FeatureDataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.session, other.session]),
            np.concatenate([self.speaker, other.speaker]),
            np.concatenate([self.ids, other.ids]),
            self.corpus,
        )


def feature_columns(dim: int) -> list[str]:
    width = max(4, len(str(dim - 1)))
    return [f"f{k:0{width}d}" for k in range(dim)]


def load_feature_csv(path) -> FeatureDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header[:5]) != META_COLUMNS:
            raise SchemaError(f"{path}: header must start with {','.join(META_COLUMNS)}")
        fcols = header[5:]
        if not fcols or fcols != feature_columns(len(fcols)):
            raise SchemaError(f"{path}: feature columns must be f0000..f{len(fcols) - 1:04d}")
        expected = len(header)

        rows, meta = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected:
                raise MalformedRowError(line_no, len(row), expected)
            label = LABEL_ALIASES.get(row[4].strip().lower(), row[4].strip().lower())
            if label not in CLASS_NAMES:
                raise UnknownLabelError(line_no, row[4])
            try:
                values = [float(v) for v in row[5:]]
            except ValueError:
                for col, v in zip(fcols, row[5:]):
                    try:
                        float(v)
                    except ValueError:
                        raise NonNumericFeatureError(line_no, col, v) from None
                raise
            if not np.all(np.isfinite(values)):
                bad = next(c for c, v in zip(fcols, values) if not np.isfinite(v))
                raise NonNumericFeatureError(line_no, bad, row[5 + fcols.index(bad)])
            rows.append(values)
            meta.append((row[0], row[1], row[2], row[3], CLASS_NAMES.index(label)))

    if not rows:
        raise DataError(f"{path}: no data rows")
    ids, corpora, sessions, speakers, labels = zip(*meta)
    return FeatureDataset(
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.int64),
        np.array(sessions, dtype=str),
        np.array(speakers, dtype=str),
        np.array(ids, dtype=str),
        corpora[0],
    )


def write_feature_csv(data: FeatureDataset, path) -> None:
    """Write ``data`` in the ingestion schema; floats use round-trip repr."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*META_COLUMNS, *feature_columns(data.dim)])
        for k in range(len(data)):
            writer.writerow([
                data.ids[k], data.corpus, data.session[k], data.speaker[k],
                CLASS_NAMES[data.labels[k]], *(repr(float(v)) for v in data.features[k]),
            ])


@dataclass
class NormalizationStats:
    """Frozen per-feature statistics.

    For ``minmax`` ``shift`` is the minimum and ``scale`` the range; for
    ``zscore`` they are the mean and population standard deviation. Features
    with zero scale map to 0.
    """

    kind: str
    shift: np.ndarray
    scale: np.ndarray
    fitted_on: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shift": self.shift.tolist(), "scale": self.scale.tolist(),
                "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(d["kind"], np.asarray(d["shift"], dtype=np.float64),
                   np.asarray(d["scale"], dtype=np.float64), d.get("fitted_on", ""))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.shift.shape[0]:
            raise DataError(f"stats cover {self.shift.shape[0]} features, data has {x.shape[-1]}")
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, (x - self.shift) / safe, 0.0)

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.shift


def fit_normalizer(data: FeatureDataset, kind: str = "minmax", fitted_on: str | None = None) -> NormalizationStats:
    if len(data) == 0:
        raise DataError("cannot fit normalisation on an empty dataset")
    if len(data) < 2:
        raise DataError("need at least two rows to fit normalisation")
    x = data.features
    if kind == "minmax":
        lo = x.min(axis=0)
        shift, scale = lo, x.max(axis=0) - lo
    elif kind == "zscore":
        shift, scale = x.mean(axis=0), x.std(axis=0)
    else:
        raise ValueError(f"unknown normalisation kind {kind!r}")
    return NormalizationStats(kind, shift, scale, fitted_on if fitted_on is not None else data.corpus)


def apply_normalizer(stats: NormalizationStats, data: FeatureDataset) -> FeatureDataset:
    return data.with_features(stats.apply(data.features))


def loso_splits(data: FeatureDataset) -> list[tuple[FeatureDataset, FeatureDataset]]:
    """One (train, test) pair per session, sessions in sorted order."""
    sessions = np.unique(data.session)
    if sessions.size < 2:
        raise DataError(f"leave-one-session-out needs at least two sessions, found {sessions.size}")
    return [(data.subset(data.session != s), data.subset(data.session == s)) for s in sessions]


def stratified_split(data: FeatureDataset, dev_fraction: float, seed: int) -> tuple[FeatureDataset, FeatureDataset]:
    """Split into (dev, rest) with ``dev_fraction`` of every class in dev.

    Per-class dev counts use largest-remainder rounding so the dev total is
    ``round(len(data) * dev_fraction)`` and each class is within one sample of
    its exact share.
    """
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    classes, counts = np.unique(data.labels, return_counts=True)
    if np.any(counts < 2):
        raise DataError(f"class {CLASS_NAMES[classes[counts < 2][0]]} has fewer than 2 samples")
    ideal = counts * dev_fraction
    take = np.floor(ideal).astype(np.int64)
    remaining = int(round(len(data) * dev_fraction)) - int(take.sum())
    order = sorted(range(len(classes)), key=lambda c: (-(ideal[c] - take[c]), c))
    for c in order[:max(remaining, 0)]:
        take[c] += 1

    rng = np.random.default_rng(seed)
    dev_mask = np.zeros(len(data), dtype=bool)
    for c, n_dev in zip(classes, take):
        members = np.flatnonzero(data.labels == c)
        dev_mask[rng.permutation(members)[:n_dev]] = True
    return data.subset(dev_mask), data.subset(~dev_mask)


def _class_means(n_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    if dim >= n_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n_classes)))
        # orthonormal directions scaled so every pair sits exactly `separation` apart
        return (q.T * separation / np.sqrt(2.0))
    scale = separation
    while True:
        means = rng.uniform(-scale, scale, size=(n_classes, dim))
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)
        if d[np.triu_indices(n_classes, 1)].min() >= separation:
            return means
        scale *= 1.1


def make_benchmark(
    n_per_class: int = 200,
    dim: int = 64,
    n_sessions: int = 5,
    class_separation: float = 40.0,
    noise_std: float = 1.0,
    seed: int = 0,
    session_shift: float = 1.0,
    sample_seed: int | None = None,
    domain_shift: float = 0.0,
    corpus: str = "benchmark",
) -> FeatureDataset:
    """Four Gaussian classes standing in for an emotion corpus.

    ``seed`` fixes the class means. ``sample_seed`` (default: ``seed``) drives
    session offsets, the corpus-wide offset and the noise, so two corpora that
    share ``seed`` but not ``sample_seed`` have the same classes under different
    recording conditions. ``session_shift`` and ``domain_shift`` are offset
    norms in units of ``noise_std``.
    """
    if min(n_per_class, dim, n_sessions) <= 0 or class_separation <= 0 or noise_std <= 0:
        raise ValueError("benchmark arguments must be positive")
    means = _class_means(N_CLASSES, dim, class_separation, np.random.default_rng(seed))
    rng = np.random.default_rng(seed if sample_seed is None else sample_seed)

    def offsets(count: int, norm: float) -> np.ndarray:
        v = rng.standard_normal((count, dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * norm * noise_std

    shifts = offsets(n_sessions, session_shift)
    domain = offsets(1, domain_shift)[0]

    labels = np.repeat(np.arange(N_CLASSES), n_per_class)
    sess_idx = np.tile(np.arange(n_per_class) % n_sessions, N_CLASSES)
    noise = rng.standard_normal((labels.size, dim)) * noise_std
    features = means[labels] + shifts[sess_idx] + domain + noise
    width = len(str(n_sessions))
    session = np.array([f"Ses{s + 1:0{width}d}" for s in sess_idx])
    speaker = np.array([f"{session[k]}{'FM'[k % 2]}" for k in range(labels.size)])
    ids = np.array([f"{corpus}_{k:05d}" for k in range(labels.size)])
    return FeatureDataset(features, labels, session, speaker, ids, corpus)

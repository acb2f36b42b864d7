"""Command-line entry point: ``mixgan benchmark|train|generate|encode|evaluate|report``.

Experiments are driven by one JSON or YAML config per run; ``--set`` only
overrides fields of that document. Outputs land in a run directory named by
the config hash and a UTC timestamp, next to an archived copy of the
resolved config.

Exit codes: 0 success, 2 config error, 3 data or checkpoint error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import re
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .baselines import BaselineAeConfig
from .data import (DataError, FeatureDataset, NormalizationStats, apply_normalizer, fit_normalizer,
                   load_feature_csv, make_benchmark, write_feature_csv)
from .evaluation import (SETTINGS, ClassifierConfig, EvalReport, confusion_to_csv, reports_to_csv,
                         reports_to_dict, run_cross_corpus, run_encoded, run_within_corpus)
from .mixup import MixupConfig
from .model import CheckpointError, MixGanConfig, build_model, encode, load_checkpoint, save_checkpoint
from .nn import ShapeError
from .training import NumericalError, TrainConfig, generate_synthetic_dataset, train

log = logging.getLogger("mixgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

# classifier widths per setting when the config does not say otherwise
DEFAULT_HIDDEN = {"real": 400, "synthetic": 400, "real+synthetic": 1000}


class ConfigError(Exception):
    pass


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-4`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*\.?[0-9_]*(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?"
               r"|\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$"),
    list("-+0123456789."),
)


def load_schema(name: str) -> dict:
    text = resources.files("mixgan").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(doc, schema_name: str, what: str) -> None:
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError(f"invalid {what}:\n  " + "\n  ".join(lines))


def validate_config(doc: dict) -> None:
    _validate(doc, "config", "config")


def validate_report(doc: dict) -> None:
    _validate(doc, "report", "report")


def apply_override(doc: dict, assignment: str) -> None:
    """Set ``a.b.c=value`` in place; the value is parsed as JSON, else YAML."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        try:
            value = yaml.load(raw, Loader=_Loader)
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {key}: cannot parse value {raw!r}: {exc}") from None
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"--set {key}: {part} is not a mapping")
        node = child
    node[parts[-1]] = value


def load_config(path, overrides=()) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.load(text, Loader=_Loader)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    doc = copy.deepcopy(doc)
    for item in overrides:
        apply_override(doc, item)
    validate_config(doc)
    return doc


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def make_run_dir(doc: dict, explicit: str | None = None) -> Path:
    if explicit:
        run = Path(explicit)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        run = Path(doc.get("output_dir", "runs")) / f"{config_hash(doc)}-{stamp}"
    try:
        run.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create run directory {run}: {exc.strerror}") from None
    (run / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return run


# ---- config -> library objects -----------------------------------------------

def _build(cls, fields: dict, where: str, **extra):
    try:
        return cls(**fields, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_source(section: dict, where: str) -> FeatureDataset:
    if "path" in section:
        path = Path(section["path"])
        if not path.is_file():
            raise DataError(f"{where}.path: file not found: {path}")
        return load_feature_csv(path)
    return _build(make_benchmark, section["benchmark"], f"{where}.benchmark")


def model_config(doc: dict, dim: int) -> MixGanConfig:
    fields = dict(doc.get("model", {}))
    if fields.setdefault("input_dim", dim) != dim:
        raise DataError(f"model.input_dim is {fields['input_dim']} but the data has {dim} features")
    for key in ("encoder_hidden", "discriminator_hidden"):
        if key in fields:
            fields[key] = tuple(fields[key])
    return _build(MixGanConfig, fields, "model")


def train_config(doc: dict) -> TrainConfig:
    mixup = _build(MixupConfig, doc.get("mixup", {}), "mixup")
    return _build(TrainConfig, doc.get("train", {}), "train", mixup=mixup)


def classifier_configs(doc: dict, seed: int = 0) -> dict[str, ClassifierConfig]:
    common = dict(doc.get("classifier", {}))
    if doc["experiment"] == "cross":
        common.setdefault("dropout_rate", 0.8)
    per = doc.get("classifier_per_setting", {})
    out = {}
    for s in SETTINGS:
        fields = {"hidden_units": DEFAULT_HIDDEN[s], "seed": seed, **common, **per.get(s, {})}
        out[s] = _build(ClassifierConfig, fields, f"classifier_per_setting.{s}")
    return out


# ---- commands -----------------------------------------------------------------

def cmd_benchmark(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise DataError(f"{out} exists; pass --force to overwrite")
    data = make_benchmark(args.n_per_class, args.dim, args.sessions, args.separation, args.noise,
                          seed=args.seed, session_shift=args.session_shift, sample_seed=args.sample_seed,
                          domain_shift=args.domain_shift, corpus=args.corpus)
    write_feature_csv(data, out)
    print(f"wrote {len(data)} rows x {data.dim} features to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = load_config(args.config, args.set)
    data = load_source(doc["data"], "data")
    mc, tc = model_config(doc, data.dim), train_config(doc)
    kind = "zscore" if doc["experiment"] == "cross" else "minmax"
    stats = fit_normalizer(data, kind, fitted_on=f"{data.corpus}:all")
    run = make_run_dir(doc, args.run_dir)
    model = build_model(mc, np.random.default_rng([tc.seed, 0]))
    tlog = train(model, apply_normalizer(stats, data), tc, np.random.default_rng([tc.seed, 1]))
    save_checkpoint(model, run / "checkpoint.mixgan")
    tlog.to_csv(run / "train_log.csv")
    (run / "normalizer.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    print(run)
    return EXIT_OK


def _load_for_inference(args):
    model = load_checkpoint(args.checkpoint)
    data = load_feature_csv(args.data)
    if args.normalizer:
        try:
            stats = NormalizationStats.from_dict(json.loads(Path(args.normalizer).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot read normalizer {args.normalizer}: {exc}") from None
        if stats.shift.shape[0] != data.dim:
            raise DataError(f"normalizer has {stats.shift.shape[0]} features, data has {data.dim}")
        data = apply_normalizer(stats, data)
    if data.dim != model.config.input_dim:
        raise DataError(f"checkpoint expects {model.config.input_dim} features, {args.data} has {data.dim}")
    return model, data


def cmd_generate(args) -> int:
    model, data = _load_for_inference(args)
    syn = generate_synthetic_dataset(model, data)
    write_feature_csv(syn, args.out)
    print(f"wrote {len(syn)} synthetic rows to {args.out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    model, data = _load_for_inference(args)
    codes = data.with_features(encode(model, data.features))
    write_feature_csv(codes, args.out)
    print(f"wrote {len(codes)} rows x {codes.dim} codes to {args.out}")
    return EXIT_OK


def run_experiment(doc: dict) -> tuple[str, dict[str, EvalReport]]:
    data = load_source(doc["data"], "data")
    mc, tc = model_config(doc, data.dim), train_config(doc)
    seeds = doc.get("seeds", [0])
    exp = doc["experiment"]
    synthetic_test = doc.get("synthetic_test", "synthetic")
    if exp == "within":
        return exp, run_within_corpus(data, mc, tc, classifier_configs(doc), seeds,
                                      synthetic_test=synthetic_test)
    if exp == "cross":
        target = load_source(doc["target"], "target")
        cross = doc.get("cross", {})
        return exp, run_cross_corpus(data, target, mc, tc, classifier_configs(doc), seeds,
                                     dev_fraction=cross.get("dev_fraction", 0.3),
                                     split_seed=cross.get("split_seed", 0), synthetic_test=synthetic_test)
    enc = doc.get("encoded", {})
    clf = _build(ClassifierConfig, {"hidden_units": DEFAULT_HIDDEN["real"], **doc.get("classifier", {})},
                 "classifier")
    ae = enc.get("autoencoder", {})
    if "hidden" in ae:
        ae = {**ae, "hidden": tuple(ae["hidden"])}
    k = enc.get("k", mc.latent_dim)
    if not 0 < k < data.dim:
        raise ConfigError(f"encoded.k must lie in (0, {data.dim}), got {k}")
    return exp, run_encoded(data, mc, tc, clf, seeds, k,
                            reducers=tuple(enc.get("reducers", ("proposed", "pca", "autoencoder"))),
                            mixup_flags=tuple(enc.get("mixup_flags", (True, False))),
                            ae_config=_build(BaselineAeConfig, ae, "encoded.autoencoder"))


def cmd_evaluate(args) -> int:
    doc = load_config(args.config, args.set)
    run = make_run_dir(doc, args.run_dir)
    exp, reports = run_experiment(doc)
    report = reports_to_dict(exp, reports)
    validate_report(report)
    (run / "report.json").write_text(json.dumps(report, indent=2, allow_nan=False) + "\n")
    (run / "report.csv").write_text(reports_to_csv(exp, reports))
    (run / "confusion.csv").write_text(confusion_to_csv(reports))
    print(summary_table(report))
    print(run)
    return EXIT_OK


def summary_table(report: dict) -> str:
    rows = [f"experiment: {report['experiment']}", f"{'setting':<20} {'UAR':>16}  reference"]
    for name, s in report["settings"].items():
        uar = f"{100 * s['mean_uar']:.2f} ± {100 * s['std_uar']:.2f}"
        rows.append(f"{name:<20} {uar:>16}  {s['reference'] or ''}")
        rows.extend(f"  warning: {w}" for w in s["warnings"])
    return "\n".join(rows)


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {args.report}: {exc}") from None
    try:
        validate_report(report)
    except ConfigError as exc:
        raise DataError(str(exc)) from None
    print(summary_table(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixgan", description="Mixup adversarial autoencoder experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("benchmark", help="write a Gaussian-cluster benchmark feature CSV")
    b.add_argument("--out", required=True)
    b.add_argument("--n-per-class", type=int, default=200)
    b.add_argument("--dim", type=int, default=64)
    b.add_argument("--sessions", type=int, default=5)
    b.add_argument("--separation", type=float, default=40.0)
    b.add_argument("--noise", type=float, default=1.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--session-shift", type=float, default=1.0)
    b.add_argument("--sample-seed", type=int, default=None)
    b.add_argument("--domain-shift", type=float, default=0.0)
    b.add_argument("--corpus", default="benchmark")
    b.add_argument("--force", action="store_true", help="overwrite an existing file")
    b.set_defaults(func=cmd_benchmark)

    for name, func, text in [("train", cmd_train, "train a model on the configured data"),
                             ("evaluate", cmd_evaluate, "run the configured experiment")]:
        c = sub.add_parser(name, help=text)
        c.add_argument("config")
        c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. train.epochs=10")
        c.add_argument("--run-dir", help="write outputs here instead of a fresh run directory")
        c.set_defaults(func=func)

    for name, func, text in [("generate", cmd_generate, "write synthetic features G(E(x))"),
                             ("encode", cmd_encode, "write latent codes E(x)")]:
        c = sub.add_parser(name, help=text)
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--data", required=True)
        c.add_argument("--out", required=True)
        c.add_argument("--normalizer", help="normalizer.json from the training run")
        c.set_defaults(func=func)

    r = sub.add_parser("report", help="validate and summarise a report.json")
    r.add_argument("report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, ShapeError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

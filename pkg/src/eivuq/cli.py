"""Command-line pipeline: ``synth`` -> ``train`` -> ``uq`` -> ``eval``, or all of
them at once with ``repro``.

Every command reads one JSON config (the shipped default unless ``--config``
is given), writes into ``output_dir`` and records each file it produced in
``manifest.json`` together with its checksum and the config digest.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import shutil
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import datagen, ensemble, evalharness, mcdropout, uq
from ._seeding import derive_seed
from .errormodel import ErrorModel, from_sensitivity_specificity
from .errors import ConfigError, DataError, EivuqError, NumericalError
from .nncore import NetworkSpec, TrainConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_VERSION = 1
MANIFEST = "manifest.json"

# stream keys for seeds derived from master_seed
_SPLIT_KEY, _ENSEMBLE_KEY, _MC_KEY = 1, 2, 3

PATHS = {
    "dataset": "data/dataset.csv",
    "scenario": "data/scenario.json",
    "train": "data/train.csv",
    "test": "data/test.csv",
    "ensemble": "models/ensemble",
    "error_model": "models/error_model.json",
    "mc_model": "models/mc_dropout.json",
    "uq_report": "reports/uq_report.csv",
    "mc_report": "reports/mc_dropout.csv",
    "curves": "eval/coverage_curves.csv",
    "scatter": "eval/scatter.csv",
    "flips": "eval/flips.csv",
    "summary": "eval/summary.json",
}

_TOP_KEYS = {"version", "master_seed", "output_dir", "scenario", "dataset", "split", "network",
             "training", "ensemble_T", "error_model", "mc_dropout", "eval"}
_NETWORK_KEYS = {"hidden_layers", "activation"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


def default_config() -> dict:
    text = resources.files("eivuq").joinpath("configs/default.json").read_text()
    return json.loads(text)


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"config.{path}: {message}")


def _check_keys(section: dict, allowed: set, path: str) -> None:
    _require(isinstance(section, dict), path, "must be an object")
    extra = sorted(set(section) - allowed)
    _require(not extra, path, f"unknown field(s) {', '.join(extra)}")


def validate_config(cfg: dict) -> dict:
    """Check structure and value ranges; errors name the offending field path."""
    _check_keys(cfg, _TOP_KEYS, "<root>")
    _require(cfg.get("version") == CONFIG_VERSION, "version", f"must be {CONFIG_VERSION}")
    seed = cfg.get("master_seed")
    _require(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
             "master_seed", "must be a non-negative 64-bit integer")
    _require(isinstance(cfg.get("output_dir"), str), "output_dir", "must be a path string")
    has_scenario, has_dataset = cfg.get("scenario") is not None, cfg.get("dataset") is not None
    _require(has_scenario != has_dataset, "scenario", "exactly one of scenario / dataset is required")
    if has_scenario:
        try:
            datagen.ScenarioSpec.from_dict(cfg["scenario"])
        except (TypeError, ConfigError) as exc:
            raise ConfigError(f"config.scenario: {exc}") from None
    else:
        _check_keys(cfg["dataset"], {"path", "noisy_indices"}, "dataset")
        _require(isinstance(cfg["dataset"].get("path"), str), "dataset.path", "must be a path string")
    _check_keys(cfg.get("split", {}), {"train_fraction"}, "split")
    f = cfg.get("split", {}).get("train_fraction")
    _require(isinstance(f, (int, float)) and 0 < f < 1, "split.train_fraction", "must lie in (0, 1)")
    _check_keys(cfg.get("network", {}), _NETWORK_KEYS, "network")
    _check_keys(cfg.get("training", {}), _TRAIN_KEYS, "training")
    try:
        _network_spec(cfg, 1, 0.0)
        _train_config(cfg, 0)
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"config.network/training: {exc}") from None
    T = cfg.get("ensemble_T")
    _require(isinstance(T, int) and not isinstance(T, bool) and T >= 1, "ensemble_T",
             "must be a positive integer")
    em = cfg.get("error_model")
    _check_keys(em, {"path", "sensitivity", "specificity", "prevalence", "features"}, "error_model")
    if "path" not in em:
        for k in ("sensitivity", "specificity"):
            _require(isinstance(em.get(k), (int, float)) and 0 < em[k] <= 1, f"error_model.{k}",
                     "must lie in (0, 1]")
        prev = em.get("prevalence", "empirical")
        _require(prev == "empirical" or (isinstance(prev, (int, float)) and 0 < prev < 1),
                 "error_model.prevalence", "must be 'empirical' or lie in (0, 1)")
    mc = cfg.get("mc_dropout")
    if mc is not None:
        _check_keys(mc, {"rate", "passes"}, "mc_dropout")
        _require(isinstance(mc.get("rate"), (int, float)) and 0 < mc["rate"] < 1,
                 "mc_dropout.rate", "must lie in (0, 1)")
        _require(isinstance(mc.get("passes"), int) and mc["passes"] >= 1, "mc_dropout.passes",
                 "must be a positive integer")
    ev = cfg.get("eval", {})
    _check_keys(ev, {"n_thresholds", "proximity_band"}, "eval")
    _require(isinstance(ev.get("n_thresholds", 51), int) and ev.get("n_thresholds", 51) >= 2,
             "eval.n_thresholds", "must be an integer >= 2")
    _require(ev.get("proximity_band", 0.2) >= 0, "eval.proximity_band", "must be non-negative")
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return default_config()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return cfg


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.out is not None:
        cfg["output_dir"] = args.out
    if args.ensemble_size is not None:
        cfg["ensemble_T"] = args.ensemble_size
    if args.sens_spec is not None:
        sens, spec, prev = args.sens_spec
        cfg["error_model"] = {"sensitivity": sens, "specificity": spec,
                              "prevalence": prev if prev == "empirical" else float(prev)}
    return validate_config(cfg)


def config_digest(cfg: dict) -> str:
    """Digest of the config with ``output_dir`` removed, so relocating a run
    does not change it."""
    doc = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _network_spec(cfg: dict, input_dim: int, dropout: float, seed: int = 0) -> NetworkSpec:
    net = cfg.get("network", {})
    return NetworkSpec(input_dim=input_dim, hidden_layers=tuple(net.get("hidden_layers", (32, 16))),
                       activation=net.get("activation", "relu"), dropout_rate=dropout, seed=seed)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(**cfg.get("training", {}), seed=seed)


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.root = Path(cfg["output_dir"])
        self.digest = config_digest(cfg)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"config.output_dir: cannot create {self.root} ({exc})") from None

    def path(self, key: str) -> Path:
        return self.root / PATHS[key]

    def need(self, key: str, producer: str) -> Path:
        p = self.path(key)
        if not p.exists():
            raise DataError(f"missing {p}; run `eivuq {producer}` first")
        return p

    def record(self, paths) -> None:
        manifest_path = self.root / MANIFEST
        doc = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
        entries = {e["path"]: e for e in doc.get("artifacts", [])}
        for p in paths:
            p = Path(p)
            rel = p.relative_to(self.root).as_posix()
            entries[rel] = {"path": rel, "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                            "command": self.command, "config_digest": self.digest}
        doc = {"format": "eivuq.manifest", "version": 1, "config_digest": self.digest,
               "artifacts": [entries[k] for k in sorted(entries)]}
        manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def write_config(self) -> Path:
        # the output location is not part of the experiment
        p = self.root / "config.json"
        doc = {k: v for k, v in self.cfg.items() if k != "output_dir"}
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


def _prepare(run: Run, key: str) -> Path:
    p = run.path(key)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def cmd_synth(cfg: dict, threads: int = 1) -> list[Path]:
    run = Run(cfg, "synth")
    seed = cfg["master_seed"]
    written = [run.write_config()]
    if cfg.get("scenario") is not None:
        spec = datagen.ScenarioSpec.from_dict(cfg["scenario"])
        data = datagen.generate(spec)
        datagen.write_csv(data, _prepare(run, "dataset"))
        datagen.write_sidecar(spec, data, _prepare(run, "scenario"))
        written += [run.path("dataset"), run.path("scenario")]
    else:
        ds = cfg["dataset"]
        data = datagen.read_csv(ds["path"], tuple(ds.get("noisy_indices", ())))
        _prepare(run, "dataset")
        shutil.copyfile(ds["path"], run.path("dataset"))
        written.append(run.path("dataset"))
    train, test = datagen.split(data, cfg["split"]["train_fraction"], derive_seed(seed, _SPLIT_KEY))
    datagen.write_csv(train, _prepare(run, "train"))
    datagen.write_csv(test, _prepare(run, "test"))
    written += [run.path("train"), run.path("test")]
    run.record(written)
    return written


def _noisy_indices(cfg: dict, data: datagen.Dataset) -> tuple[int, ...]:
    if cfg.get("scenario") is not None:
        return tuple(datagen.ScenarioSpec.from_dict(cfg["scenario"]).noisy_feature_indices)
    return tuple(cfg["dataset"].get("noisy_indices", ())) or tuple(data.noisy_indices)


def build_error_model(cfg: dict, train: datagen.Dataset) -> ErrorModel:
    """Error model from a file or from sensitivity/specificity/prevalence.

    ``prevalence: "empirical"`` takes, per feature, the share of ones among
    the true values of the training split.
    """
    em = cfg["error_model"]
    if "path" in em:
        return ErrorModel.load(em["path"])
    features = tuple(em.get("features", ())) or _noisy_indices(cfg, train)
    if not features:
        raise ConfigError("config.error_model.features: no uncertain features known for this dataset")
    specs = []
    for j in features:
        if not 0 <= j < train.n_features:
            raise ConfigError(f"config.error_model.features: index {j} out of range")
        prev = em.get("prevalence", "empirical")
        if prev == "empirical":
            prev = float(train.true_features[:, j].mean())
            if not 0.0 < prev < 1.0:
                raise DataError(f"feature {j} is constant in the training split; "
                                f"empirical prevalence is undefined")
        specs.append(from_sensitivity_specificity(j, em["sensitivity"], em["specificity"], prev))
    return ErrorModel(tuple(specs))


def cmd_train(cfg: dict, threads: int = 1) -> list[Path]:
    run = Run(cfg, "train")
    seed = cfg["master_seed"]
    train = datagen.read_csv(run.need("train", "synth"))
    truth = train.truth()
    spec = _network_spec(cfg, train.n_features, 0.0)
    tcfg = _train_config(cfg, 0)
    model = ensemble.fit(truth, spec, tcfg, cfg["ensemble_T"], derive_seed(seed, _ENSEMBLE_KEY),
                         threads=threads)
    ens_dir = run.path("ensemble")
    if ens_dir.exists():
        shutil.rmtree(ens_dir)
    written = ensemble.save(model, ens_dir)
    build_error_model(cfg, train).save(_prepare(run, "error_model"))
    written.append(run.path("error_model"))
    mc = cfg.get("mc_dropout")
    if mc is not None:
        mc_model = mcdropout.fit_mc(truth, _network_spec(cfg, train.n_features, mc["rate"]), tcfg,
                                    n_passes=mc["passes"], seed=derive_seed(seed, _MC_KEY))
        mc_model.save(_prepare(run, "mc_model"))
        written.append(run.path("mc_model"))
    run.record(written)
    return written


def cmd_uq(cfg: dict, threads: int = 1) -> list[Path]:
    run = Run(cfg, "uq")
    test = datagen.read_csv(run.need("test", "synth"))
    model = ensemble.load(run.need("ensemble", "train"))
    em = ErrorModel.load(run.need("error_model", "train"))
    reports = uq.uq_reports(model, em, test.features, test.labels.tolist())
    uq.write_reports_csv(reports, _prepare(run, "uq_report"))
    written = [run.path("uq_report")]
    if cfg.get("mc_dropout") is not None:
        mc_model = mcdropout.McDropoutModel.load(run.need("mc_model", "train"))
        p1 = mcdropout.predict_mc_batch(mc_model, test.features)[:, 0]
        mcdropout.write_mc_csv(p1, _prepare(run, "mc_report"), test.labels)
        written.append(run.path("mc_report"))
    run.record(written)
    return written


def cmd_eval(cfg: dict, threads: int = 1) -> list[Path]:
    run = Run(cfg, "eval")
    reports = uq.read_reports_csv(run.need("uq_report", "uq"))
    if any(r.true_label is None for r in reports):
        raise DataError("evaluation needs true labels in the report")
    ev = cfg.get("eval", {})
    tau = evalharness.default_thresholds(ev.get("n_thresholds", 51))
    labels = [r.true_label for r in reports]
    # one misclassification set for every curve: the non-EIV prediction's
    miss = evalharness.misclassified_mask([r.class_noneiv for r in reports], labels)
    curves = [
        evalharness.coverage_curve([r.u_noneiv for r in reports], miss, tau, "non_eiv"),
        evalharness.coverage_curve([r.u_eiv for r in reports], miss, tau, "eiv"),
    ]
    mc_classes = None
    if cfg.get("mc_dropout") is not None:
        mc = mcdropout.read_mc_csv(run.need("mc_report", "uq"))
        if mc["p1"].size != len(reports):
            raise DataError("MC-dropout report and UQ report differ in length")
        curves.append(evalharness.coverage_curve(mc["uncertainty"], miss, tau, "mc_dropout"))
        mc_classes = mc["predicted_class"]
    ideal = np.where(miss, 0.5, 0.0)
    curves.append(evalharness.coverage_curve(ideal, miss, tau, "ideal"))
    band = ev.get("proximity_band", evalharness.DEFAULT_BAND)
    flips = evalharness.flip_report(reports, band)
    evalharness.write_curves_csv(curves, _prepare(run, "curves"))
    evalharness.write_scatter_csv(evalharness.scatter_table(reports), _prepare(run, "scatter"))
    evalharness.write_flip_csv(flips, _prepare(run, "flips"))
    evalharness.write_summary(evalharness.summarize(reports, curves, flips, mc_classes),
                              _prepare(run, "summary"))
    written = [run.path(k) for k in ("curves", "scatter", "flips", "summary")]
    run.record(written)
    return written


def cmd_repro(cfg: dict, threads: int = 1) -> list[Path]:
    written = []
    for cmd in (cmd_synth, cmd_train, cmd_uq, cmd_eval):
        written += cmd(cfg, threads)
    return written


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "uq": cmd_uq, "eval": cmd_eval,
            "repro": cmd_repro}


def _sens_spec(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected SENS,SPEC,PREVALENCE")
    try:
        sens, spec = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError("sensitivity and specificity must be numbers") from None
    prev = parts[2].strip()
    if prev != "empirical":
        try:
            float(prev)
        except ValueError:
            raise argparse.ArgumentTypeError("prevalence must be a number or 'empirical'") from None
    return sens, spec, prev


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (default: the shipped config)")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for ensemble training (results do not change)")
    common.add_argument("--out", help="override output_dir")
    common.add_argument("--ensemble-size", "-T", type=int, dest="ensemble_size",
                        help="override ensemble_T")
    common.add_argument("--sens-spec", type=_sens_spec, metavar="SENS,SPEC,PREV",
                        help="error model shorthand, PREV may be 'empirical'")
    parser = argparse.ArgumentParser(prog="eivuq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"synth": "generate and split the dataset", "train": "fit the ensemble and baselines",
             "uq": "write per-query uncertainty reports", "eval": "write curves, scatter, flips",
             "repro": "run synth, train, uq and eval"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    sub.add_parser("show-config", help="print the shipped default config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "show-config":
        print(json.dumps(default_config(), indent=2))
        return EXIT_OK
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = apply_overrides(load_config(args.config), args)
        written = COMMANDS[args.command](cfg, args.threads)
    except ConfigError as exc:
        print(f"eivuq: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"eivuq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EivuqError) as exc:
        print(f"eivuq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

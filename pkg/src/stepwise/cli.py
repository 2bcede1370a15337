"""``stepwise`` command line.

Subcommands: synth, featurize, train, evaluate, interpret, report.

Settings resolve as built-in defaults < ``--config`` INI file < flags. The
INI file has one section per module (``[paths]``, ``[synth]``,
``[features]``, ``[model]``, ``[forest]``, ``[eval]``, ``[interpret]``) and
every key there matches a flag name with dashes turned into underscores.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 invalid input or
schema violation, 5 training diverged, 1 anything else. Failures print one
line to stderr: ``stepwise: error code=<n> kind=<kind> msg=<message>``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import CohortFormatError, impute_cohort, label, load_cohort
from .experiments import KINDS, MODELS, ExperimentReport, CellResult, Study, kfold, run_experiment
from .features import CohortStats, build_sequences, write_feature_dump
from .interpret import expected_response, ablate_feature, write_ablation, write_profile_csv
from .model.checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .model.lstm import ModelConfig, TrainingDivergedError, predict, train
from .synth import SynthConfig, generate_cohort, write_cohort

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_MISSING, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5

# flag -> (ini section, type, default)
OPTIONS = {
    "seed": ("run", int, None),
    "out": ("paths", str, None),
    "data": ("paths", str, None),
    "events": ("paths", str, None),
    "milestones": ("paths", str, None),
    "demographics": ("paths", str, None),
    "manifest": ("paths", str, None),
    "checkpoint": ("paths", str, None),
    "input": ("paths", str, None),
    "participants": ("synth", int, 300),
    "n_days": ("synth", int, 90),
    "missing_rate": ("synth", float, 0.10),
    "attrition": ("synth", float, 0.825),
    "p_drop_active": ("synth", float, 0.73),
    "p_drop_inactive": ("synth", float, 0.30),
    "m": ("features", int, 6),
    "k": ("features", int, 7),
    "feature_set": ("features", str, "all"),
    "layers": ("model", int, 2),
    "epochs": ("model", int, 150),
    "hidden_units": ("model", int, 25),
    "embed_dim": ("model", int, 32),
    "dropout_rate": ("model", float, 0.5),
    "learning_rate": ("model", float, 1e-3),
    "l2_lambda": ("model", float, 1e-4),
    "batch_size": ("model", int, 32),
    "grad_clip_norm": ("model", float, 5.0),
    "n_trees": ("forest", int, 100),
    "max_depth": ("forest", int, 8),
    "min_leaf": ("forest", int, 2),
    "kind": ("eval", str, "model_sweep"),
    "folds": ("eval", int, 10),
    "M": ("eval", int, None),
    "model": ("eval", str, None),
    "layer": ("interpret", int, None),
    "feature": ("interpret", str, "daily_avg_steps,demo_adults_in_household"),
}

COMMAND_OPTIONS = {
    "synth": ["seed", "out", "participants", "n_days", "missing_rate", "attrition",
              "p_drop_active", "p_drop_inactive", "m"],
    "featurize": ["data", "events", "milestones", "demographics", "manifest", "out", "m", "k",
                  "feature_set"],
    "train": ["seed", "data", "events", "milestones", "demographics", "manifest", "out", "m", "k",
              "feature_set", "layers", "epochs", "hidden_units", "embed_dim", "dropout_rate",
              "learning_rate", "l2_lambda", "batch_size", "grad_clip_norm"],
    "evaluate": ["seed", "data", "events", "milestones", "demographics", "manifest", "out", "kind",
                 "folds", "M", "model", "m", "k", "feature_set", "layers", "epochs",
                 "hidden_units", "embed_dim", "dropout_rate", "learning_rate", "l2_lambda",
                 "batch_size", "grad_clip_norm", "n_trees", "max_depth", "min_leaf"],
    "interpret": ["checkpoint", "data", "events", "milestones", "demographics", "manifest", "out",
                  "feature", "layer"],
    "report": ["input", "out"],
}
REQUIRED = {"synth": ["seed", "out"], "train": ["seed", "out"], "featurize": ["out"],
            "evaluate": ["out"], "interpret": ["checkpoint", "out"], "report": ["input"]}


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stepwise", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMAND_OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with per-module sections")
        for opt in opts:
            section, typ, default = OPTIONS[opt]
            flag = "--" + opt.replace("_", "-")
            p.add_argument(flag, dest=opt, type=typ, default=None,
                           help=f"[{section}] default: {default}")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags for the chosen command."""
    ini = configparser.ConfigParser()
    if args.config:
        if not Path(args.config).is_file():
            raise CliError(EXIT_MISSING, "missing_file", f"config file not found: {args.config}")
        ini.read(args.config)
    cfg = {}
    for opt in COMMAND_OPTIONS[args.command]:
        section, typ, default = OPTIONS[opt]
        value = default
        if ini.has_option(section, opt):
            try:
                value = typ(ini.get(section, opt))
            except ValueError as exc:
                raise CliError(EXIT_INVALID, "config", f"[{section}] {opt}: {exc}") from exc
        flag_value = getattr(args, opt)
        if flag_value is not None:
            value = flag_value
        cfg[opt] = value
    for opt in REQUIRED[args.command]:
        if cfg.get(opt) is None:
            raise CliError(EXIT_USAGE, "usage", f"--{opt.replace('_', '-')} is required for {args.command}")
    return cfg


def write_provenance(out_dir: Path, command: str, cfg: dict) -> None:
    """Config hash, seed and library versions; the output location itself is
    left out so reruns into different directories match byte for byte."""
    import pandas
    import scipy
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps({"command": command, **cfg}, sort_keys=True, default=str)
    record = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": cfg.get("seed"),
        "versions": {"stepwise": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "pandas": pandas.__version__},
    }
    (out_dir / "provenance.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _cohort_paths(cfg: dict) -> tuple[Path, Path, Path, Path]:
    if cfg.get("data"):
        d = Path(cfg["data"])
        paths = (d / "events.csv", d / "milestones.csv", d / "demographics.csv", d / "manifest.json")
    else:
        names = ("events", "milestones", "demographics", "manifest")
        if any(cfg.get(n) is None for n in names):
            raise CliError(EXIT_USAGE, "usage", "give --data DIR or all of --events --milestones "
                                                "--demographics --manifest")
        paths = tuple(Path(cfg[n]) for n in names)
    for p in paths:
        if not p.is_file():
            raise CliError(EXIT_MISSING, "missing_file", f"not found: {p}")
    return paths


def _load(cfg: dict, m: int):
    cohort = load_cohort(*_cohort_paths(cfg), m=m)
    if not len(cohort):
        raise CliError(EXIT_INVALID, "schema", "no usable instances in cohort")
    return cohort, impute_cohort(cohort.series)


def _model_config(cfg: dict, feature_dim: int, layers: int | None = None) -> dict:
    keys = ("epochs", "hidden_units", "embed_dim", "dropout_rate", "learning_rate", "l2_lambda",
            "batch_size", "grad_clip_norm")
    out = {k: cfg[k] for k in keys if k in cfg}
    out["feature_dim"] = feature_dim
    if layers is not None:
        out["layers"] = layers
    return out


def cmd_synth(cfg: dict, out: Path) -> None:
    synth = SynthConfig(n_participants=cfg["participants"], n_days=cfg["n_days"], seed=cfg["seed"],
                        missing_rate=cfg["missing_rate"], dropout_rate=cfg["attrition"],
                        p_drop_active=cfg["p_drop_active"], p_drop_inactive=cfg["p_drop_inactive"])
    write_cohort(generate_cohort(synth), out, m_slots=cfg["m"])


def cmd_featurize(cfg: dict, out: Path) -> None:
    cohort, series = _load(cfg, cfg["m"])
    man = cohort.manifest
    data = build_sequences(series, cfg["k"], man.crt, man.vocabularies)
    write_feature_dump(data.select_features(cfg["feature_set"]), out / "features.csv")


def cmd_train(cfg: dict, out: Path) -> None:
    cohort, series = _load(cfg, cfg["m"])
    man = cohort.manifest
    y = np.array([label(s.bmi_start, s.bmi_end, man.crt) for s in series], dtype=int)
    plan = kfold(y, [s.participant_id for s in series], 10, cfg["seed"])
    tr, va, te = plan.rotation(0)
    stats = CohortStats.from_series([series[i] for i in tr])
    data = build_sequences(series, cfg["k"], man.crt, man.vocabularies, stats)
    data = data.select_features(cfg["feature_set"])
    mc = ModelConfig(**_model_config(cfg, data.X.shape[2], cfg["layers"]), seed=cfg["seed"])
    model = train(data.X[tr], data.y[tr], data.X[va], data.y[va], mc)
    save_checkpoint(model, out / "checkpoint.bin", feature_names=data.feature_names,
                    extra={"k": cfg["k"], "m": cfg["m"], "feature_set": cfg["feature_set"],
                           "cohort_stats": asdict(stats)})
    with open(out / "training_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_accuracy", "val_loss", "val_accuracy"])
        for rec in model.curve:
            w.writerow([rec.epoch, repr(rec.loss), repr(rec.train_accuracy), repr(rec.val_loss),
                        repr(rec.val_accuracy)])
    _, labels = predict(model, data.X[te])
    metrics = {"best_epoch": model.best_epoch, "seq_len": model.seq_len,
               "val_accuracy": model.curve[model.best_epoch].val_accuracy,
               "test_accuracy": float(np.mean(labels == data.y[te])),
               "sizes": {"train": len(tr), "validation": len(va), "test": len(te)}}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")


def cmd_evaluate(cfg: dict, out: Path) -> None:
    kind = cfg["kind"]
    if kind not in KINDS:
        raise CliError(EXIT_INVALID, "config", f"unknown kind {kind!r}; choose from {KINDS}")
    study = Study.from_files(*_cohort_paths(cfg))
    grid = {}
    if cfg.get("M") is not None:
        grid["M"] = [cfg["M"]]
    if cfg.get("model"):
        models = cfg["model"].split(",")
        bad = [m for m in models if m not in MODELS]
        if bad:
            raise CliError(EXIT_INVALID, "config", f"unknown model(s) {bad}")
        grid["model"] = models
    if kind != "feature_sweep" and cfg.get("k") is not None and kind != "window_sweep":
        grid["k"] = [cfg["k"]]
    if kind not in ("feature_sweep",):
        grid["m"] = [cfg["m"]]
        grid["feature_set"] = [cfg["feature_set"]]
    overrides = {k: v for k, v in _model_config(cfg, 1).items() if k != "feature_dim"}
    forest = {"n_trees": cfg["n_trees"], "max_depth": cfg["max_depth"], "min_leaf": cfg["min_leaf"]}
    report = run_experiment(kind, study, grid, seed=cfg["seed"] or 0, folds=cfg["folds"],
                            model_overrides=overrides, forest=forest)
    report.write_json(out / "report.json")
    (out / "report.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())


def cmd_interpret(cfg: dict, out: Path) -> None:
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_file():
        raise CliError(EXIT_MISSING, "missing_file", f"not found: {ckpt}")
    header = read_header(ckpt)
    extra = header.get("extra") or {}
    if not {"k", "m", "feature_set", "cohort_stats"} <= set(extra):
        raise CliError(EXIT_INVALID, "schema", "checkpoint lacks featurization metadata")
    model = load_checkpoint(ckpt)
    cohort, series = _load(cfg, extra["m"])
    man = cohort.manifest
    data = build_sequences(series, extra["k"], man.crt, man.vocabularies,
                           CohortStats(**extra["cohort_stats"])).select_features(extra["feature_set"])
    Xn = model.normalize(data.X)
    profile = expected_response(model, Xn, cfg["layer"])
    write_profile_csv(profile.values, out / "profile.csv")
    for name in cfg["feature"].split(","):
        name = name.strip()
        idx = int(name) if name.isdigit() else (
            data.feature_names.index(name) if name in data.feature_names else None)
        if idx is None:
            raise CliError(EXIT_INVALID, "config", f"unknown feature {name!r}")
        write_ablation(ablate_feature(model, Xn, idx, cfg["layer"]), out,
                       f"ablation_{data.feature_names[idx]}")


def cmd_report(cfg: dict, out: Path | None) -> None:
    path = Path(cfg["input"])
    if not path.is_file():
        raise CliError(EXIT_MISSING, "missing_file", f"not found: {path}")
    raw = json.loads(path.read_text())
    cells = []
    for c in raw["cells"]:
        c = {k: v for k, v in c.items() if not k.startswith("mean_")}
        cells.append(CellResult(**c))
    report = ExperimentReport(raw["kind"], raw["grid"], raw["seed"], raw["folds"],
                              raw["n_instances"], cells, raw.get("runtime_s", 0.0),
                              raw.get("notes", []), raw.get("settings", {}))
    text = report.to_text()
    sys.stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)


COMMANDS = {"synth": cmd_synth, "featurize": cmd_featurize, "train": cmd_train,
            "evaluate": cmd_evaluate, "interpret": cmd_interpret, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        out = Path(cfg["out"]) if cfg.get("out") else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
        if out is not None:
            write_provenance(out, args.command, cfg)
        return EXIT_OK
    except CliError as exc:
        err = exc
    except FileNotFoundError as exc:
        err = CliError(EXIT_MISSING, "missing_file", str(exc))
    except (CohortFormatError, CheckpointError) as exc:
        err = CliError(EXIT_INVALID, "schema", str(exc))
    except TrainingDivergedError as exc:
        err = CliError(EXIT_DIVERGED, "diverged", str(exc))
    except ValueError as exc:
        err = CliError(EXIT_INVALID, "invalid", str(exc))
    msg = " ".join(str(err).split())
    print(f"stepwise: error code={err.code} kind={err.kind} msg={msg}", file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())

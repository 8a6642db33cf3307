"""Command-line pipeline: synth, preprocess, train, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure,
5 checkpoint/config mismatch.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, ingest, preprocess as pp, synth
from ._jsonio import dumps_17g
from .ingest import INPUT_FEATURES, TARGET_POLLUTANTS, IngestError
from .model import CheckpointError, ModelConfig, ModelError, init_weights, load_checkpoint, save_checkpoint
from .preprocess import PreprocessError
from .training import TrainConfig, TrainingError, train

log = logging.getLogger("aqforecast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4, 5

DEFAULTS = {
    "data": {"noaa_csv": None, "epa_csv": None},
    "output_dir": "out",
    "seed": 0,
    "preprocess": {"train_fraction": 0.8, "window": 730, "stride": 30, "targets": None},
    "model": {"H": 512, "d_a": 64, "dropout_p": 0.2, "bn_eps": 1e-5, "bn_momentum": 0.1},
    "train": {"iterations": 200, "learning_rate": 0.001, "batch_size": 8},
    "report": {"repeats": 10},
}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class MismatchError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path  # file values resolve against this
    out_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def targets(self) -> list[str]:
        return list(self.raw["preprocess"]["targets"])

    @property
    def window(self) -> int:
        return int(self.raw["preprocess"]["window"])

    @property
    def stride(self) -> int:
        return int(self.raw["preprocess"]["stride"])

    @property
    def train_fraction(self) -> float:
        return float(self.raw["preprocess"]["train_fraction"])

    def data_path(self, key: str) -> Path | None:
        v = self.raw["data"].get(key)
        return None if v is None else (self.base_dir / v)

    def model_config(self) -> ModelConfig:
        m = self.raw["model"]
        return ModelConfig(F=len(INPUT_FEATURES), T=self.window, H=int(m["H"]),
                           P=len(self.targets), d_a=int(m["d_a"]),
                           dropout_p=float(m["dropout_p"]), bn_eps=float(m["bn_eps"]),
                           bn_momentum=float(m["bn_momentum"]), seed=self.seed)

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(iterations=int(t["iterations"]),
                           learning_rate=float(t["learning_rate"]),
                           batch_size=int(t["batch_size"]), seed=self.seed)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, value = text.split("=", 1)
    try:
        parsed = json.loads(value)
    except ValueError:
        parsed = value
    return key.strip().split("."), parsed


def load_run_config(args) -> RunConfig:
    raw: dict = {}
    base_dir = Path.cwd()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base_dir = path.resolve().parent
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = _merge(DEFAULTS, raw)
    for item in getattr(args, "set", None) or []:
        keys, value = _parse_override(item)
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"override key {'.'.join(keys)} does not exist")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"override key {'.'.join(keys)} does not exist")
        node[keys[-1]] = value
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    out_dir = Path(args.out) if getattr(args, "out", None) else base_dir / cfg["output_dir"]
    rc = RunConfig(cfg, base_dir, out_dir)
    _validate(rc)
    return rc


def _validate(rc: RunConfig) -> None:
    pre = rc.raw["preprocess"]
    targets = pre.get("targets")
    if not targets:
        raise ConfigError("preprocess.targets: a non-empty target pollutant list is required")
    if not isinstance(targets, list) or any(t not in TARGET_POLLUTANTS for t in targets):
        raise ConfigError(f"preprocess.targets must be drawn from {', '.join(TARGET_POLLUTANTS)}")
    if len(set(targets)) != len(targets):
        raise ConfigError("preprocess.targets contains duplicates")
    try:
        if not 0.0 < rc.train_fraction < 1.0:
            raise ConfigError("preprocess.train_fraction must lie in (0, 1)")
        if rc.window < 1 or rc.stride < 1:
            raise ConfigError("preprocess.window and preprocess.stride must be positive")
        rc.model_config()
        tc = rc.raw["train"]
        if not float(tc["learning_rate"]) > 0.0:
            raise ConfigError(f"train.learning_rate must be positive, got {tc['learning_rate']}")
        rc.train_config()
        if int(rc.raw["report"]["repeats"]) < 1:
            raise ConfigError("report.repeats must be >= 1")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _inside(out_dir: Path, name: str) -> Path:
    p = (out_dir / name).resolve()
    if out_dir.resolve() not in p.parents:
        raise ConfigError(f"{name!r} would be written outside the output directory")
    return p


# ---------------------------------------------------------------- pipeline pieces

def _load_raw(rc: RunConfig):
    paths = [rc.data_path("noaa_csv"), rc.data_path("epa_csv")]
    if any(p is None for p in paths):
        raise ConfigError("data.noaa_csv and data.epa_csv are required")
    for p in paths:
        if not p.is_file():
            raise DataError(f"input file not found: {p}")
    try:
        tables = [ingest.parse_source_csv(p) for p in paths]
        return ingest.merge_tables(*tables)
    except IngestError as exc:
        raise DataError(str(exc)) from exc


def _frame(rc: RunConfig) -> pp.AlignedFrame:
    if rc.raw["data"].get("noaa_csv") is None and (rc.out_dir / "frame.csv").is_file():
        return pp.read_frame_csv(rc.out_dir / "frame.csv")
    raw = _load_raw(rc)
    try:
        return pp.build_frame(raw)
    except PreprocessError as exc:
        raise DataError(str(exc)) from exc


def _split(rc: RunConfig, frame):
    try:
        return pp.split_chronological(frame, rc.train_fraction, rc.window)
    except PreprocessError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    out = Path(args.out)
    noaa, epa = synth.write_fixture(out, n_days=args.days, seed=args.seed,
                                    dependence=args.dependence, noise=args.noise)
    cfg = _merge(DEFAULTS, {
        "data": {"noaa_csv": noaa.name, "epa_csv": epa.name},
        "output_dir": "run",
        "seed": args.seed,
        "preprocess": {"window": 128, "targets": ["o3_ppm", "co_ppm"]},
        "model": {"H": 32, "d_a": 16},
    })
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"wrote {noaa}, {epa} and {out / 'config.json'}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    rc = load_run_config(args)
    raw = _load_raw(rc)
    report = ingest.validate_schema(raw)
    for issue in report.issues:
        log.warning("validation: %s", issue)
    try:
        frame = pp.build_frame(raw)
    except PreprocessError as exc:
        raise DataError(str(exc)) from exc
    train_part, _ = _split(rc, frame)
    stats = pp.fit_stats(train_part)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    pp.write_frame_csv(frame, rc.out_dir / "frame.csv")
    pp.write_stats(stats, rc.out_dir / "stats.json")
    (rc.out_dir / "validation.json").write_text(dumps_17g(report.to_dict()) + "\n")
    print(f"wrote {rc.out_dir / 'frame.csv'} ({frame.n_days} days)")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = load_run_config(args)
    ckpt_path = _inside(rc.out_dir, args.checkpoint)
    frame = _frame(rc)
    train_part, _ = _split(rc, frame)
    stats = pp.fit_stats(train_part)
    try:
        dataset = pp.make_windows(pp.normalize_zscore(train_part, stats), rc.window, rc.stride,
                                  INPUT_FEATURES, rc.targets)
    except PreprocessError as exc:
        raise DataError(str(exc)) from exc
    model = init_weights(rc.model_config())
    report = train(model, dataset, rc.train_config())
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, stats, ckpt_path, INPUT_FEATURES, rc.targets,
                    training={"iterations_completed": len(report.epoch_losses),
                              "final_loss": report.epoch_losses[-1],
                              "train_windows": len(dataset)})
    losses = ckpt_path.with_suffix(".losses.csv")
    with losses.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mae"])
        for i, v in enumerate(report.epoch_losses):
            w.writerow([i + 1, f"{v:.17g}"])
    log.info("total training time %.1fs", sum(report.epoch_seconds))
    print(f"wrote {ckpt_path} and {losses}")
    return EXIT_OK


def cmd_report(args) -> int:
    rc = load_run_config(args)
    paths = [Path(p) for p in (args.checkpoint or [rc.out_dir / "checkpoint.json"])]
    loaded = []
    for p in paths:
        if not p.is_file():
            raise MismatchError(f"checkpoint not found: {p}")
        try:
            model, stats, meta = load_checkpoint(p)
        except CheckpointError as exc:
            raise MismatchError(f"{p}: {exc}") from exc
        targets = list(meta.get("target_columns") or [])
        if model.cfg.P != len(targets):
            raise MismatchError(f"{p}: model has {model.cfg.P} outputs but lists {len(targets)} targets")
        if model.cfg.T != rc.window or model.cfg.F != len(INPUT_FEATURES):
            raise MismatchError(f"{p}: window/feature shape does not match the configuration")
        if stats is None:
            raise MismatchError(f"{p}: checkpoint carries no normalization statistics")
        loaded.append((model, stats, targets))
    all_targets = [t for _, _, ts in loaded for t in ts]
    if sorted(all_targets) != sorted(rc.targets):
        raise MismatchError(
            f"checkpoint targets {all_targets} do not match configured targets {rc.targets}")

    frame = _frame(rc)
    _, test_part = _split(rc, frame)
    dates = test_part.dates()
    repeats = int(rc.raw["report"]["repeats"])
    pred_cols, truth_cols, names = [], [], []
    importances = []
    for model, stats, targets in loaded:
        if tuple(stats.columns) != tuple(frame.columns):
            raise MismatchError("checkpoint normalization columns do not match the data")
        test_n = pp.normalize_zscore(test_part, stats)
        pred_n = analysis.predict_series(model, test_n.select(INPUT_FEATURES), rc.window, rc.stride)
        tstats = stats.subset(targets)
        pred_cols.append(pp.denormalize_array(pred_n, tstats))
        truth_cols.append(test_part.select(targets))
        names += targets
        windows = pp.make_windows(test_n, rc.window, rc.stride, INPUT_FEATURES, targets)
        importances.append((targets, analysis.permutation_importance(model, windows, rc.seed, repeats)))

    pred = np.column_stack(pred_cols)
    truth = np.column_stack(truth_cols)
    metrics = analysis.compute_metrics({n: pred[:, i] for i, n in enumerate(names)},
                                       {n: truth[:, i] for i, n in enumerate(names)},
                                       (dates[0], dates[-1]))
    out = rc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    metrics.to_csv(out / "metrics.csv")
    metrics.to_json(out / "metrics.json")
    write_importance_csv(out / "importance.csv", importances)
    (out / "importance.json").write_text(dumps_17g(
        {"models": [{"targets": t, **rep.to_dict()} for t, rep in importances]}) + "\n")
    analysis.write_series_csv(out / "predictions.csv", dates, names, pred, truth)
    print(f"wrote metrics.csv, importance.csv and predictions.csv to {out}")
    return EXIT_OK


IMPORTANCE_HEAD = ("model_targets", "feature", "base_mae", "mean_shuffled_mae", "importance")


def write_importance_csv(path, importances) -> None:
    repeats = max(rep.repeats for _, rep in importances)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*IMPORTANCE_HEAD, *(f"repeat_{r + 1}" for r in range(repeats))])
        for targets, rep in importances:
            label = "+".join(analysis.LABELS.get(t, t) for t in targets)
            for f in rep.features:
                w.writerow([label, f.feature,
                            *(f"{v:.17g}" for v in (f.base_mae, f.mean_shuffled_mae,
                                                     f.importance, *f.shuffled_mae))])


# ---------------------------------------------------------------- entry point

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. train.learning_rate=0.01 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqforecast", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic NOAA/EPA fixture and config")
    p.add_argument("--out", required=True, help="directory for noaa.csv, epa.csv, config.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=2190)
    p.add_argument("--dependence", choices=("two", "temperature"), default="two",
                   help="pollutants depend on temperature+humidity or temperature only")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="write the gap-free daily frame and normalization stats")
    _common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write its checkpoint and loss table")
    _common(p)
    p.add_argument("--checkpoint", default="checkpoint.json",
                   help="checkpoint file name inside the output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="write metrics, importance and prediction CSVs")
    _common(p)
    p.add_argument("--checkpoint", action="append",
                   help="checkpoint path (repeatable; default <out>/checkpoint.json)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IngestError, PreprocessError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MismatchError, CheckpointError, ModelError) as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())

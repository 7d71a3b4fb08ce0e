"""Command-line entry point.

    telesto gen-data --out DIR [--config scenario.json] [--seed N] [--time-scale X]
    telesto train [--data DIR] --out DIR [--model telesto|gcn|gin] [--config train.json] ...
    telesto predict --checkpoint DIR --window window.csv
    telesto report REPORT.json [REPORT.json ...] [--out report.md] [--plots DIR]

Exit codes: 0 success, 2 configuration or usage error, 3 data or shape error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from telesto import __version__
from telesto.checkpoint import checkpoint_bounds, load_checkpoint, save_checkpoint
from telesto.errors import ConfigError, DataError, ShapeError, TelestoError
from telesto.graphs import WindowingConfig
from telesto.injector import ScenarioConfig, write_scenario
from telesto.report import load_report, plot_confusion, plot_loss_curves, render_markdown
from telesto.series import NormalizationBounds, normalize_array, read_dataset
from telesto.training import MODEL_KINDS, TrainConfig, build_model, history_csv, run_experiment

log = logging.getLogger("telesto")

DATA_DIR_ENV = "TELESTO_DATA_DIR"


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; route usage errors through the common handler instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _flags(args: argparse.Namespace, names: Sequence[str]) -> dict:
    """Flag values that were given explicitly (unset flags default to None)."""
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _out_dir(path: str | Path) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise ConfigError(f"parent of output directory does not exist: {path.parent}")
    path.mkdir(exist_ok=True)
    return path


def _dataset_path(arg: str | None) -> Path:
    root = os.environ.get(DATA_DIR_ENV)
    if arg is None:
        if not root:
            raise UsageError(f"no dataset given: pass --data or set {DATA_DIR_ENV}")
        return Path(root)
    path = Path(arg)
    if not path.exists() and root and not path.is_absolute():
        path = Path(root) / path
    return path


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _versions() -> dict:
    return {"telesto": __version__, "torch": torch.__version__, "numpy": np.__version__,
            "python": platform.python_version()}


def write_manifest(path: Path, command: str, config: Mapping, seeds, inputs, outputs, started: str) -> dict:
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "config": dict(config),
        "seeds": list(seeds),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _now(),
        "versions": _versions(),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    started = _now()
    data = _read_json(args.config)
    data.update(_flags(args, ["seed", "time_scale"]))
    cfg = ScenarioConfig.from_dict(data)
    out = _out_dir(args.out)
    schedule = write_scenario(cfg, out)
    groups = [g.name for g in cfg.groups]
    write_manifest(out / "manifest.json", "gen-data", cfg.to_dict(), [cfg.seed],
                   [args.config] if args.config else [],
                   [*groups, "schedule.json", "scenario.json"], started)
    print(f"wrote {len(groups)} group(s) and {len(schedule.records)} injections to {out}")
    return 0


def _train_settings(args: argparse.Namespace) -> tuple[TrainConfig, dict, WindowingConfig, str]:
    data = _read_json(args.config)
    extra = set(data) - {"train", "model", "windowing", "kind"}
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    train = dict(data.get("train", {}))
    train.update(_flags(args, ["seed", "workers", "folds", "runs", "epochs", "batch_size", "include_normal"]))
    cfg = TrainConfig.from_dict(train)
    try:
        windowing = WindowingConfig(**data.get("windowing", {}))
    except TypeError as exc:
        raise ConfigError(f"invalid windowing config: {exc}") from exc
    kind = args.model or data.get("kind", "telesto")
    if kind not in MODEL_KINDS:
        raise UsageError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    return cfg, dict(data.get("model", {})), windowing, kind


def cmd_train(args: argparse.Namespace) -> int:
    started = _now()
    cfg, overrides, windowing, kind = _train_settings(args)
    data_path = _dataset_path(args.data)
    dataset = read_dataset(data_path)
    out = _out_dir(args.out)

    experiment = run_experiment(dataset, kind, cfg, overrides, windowing)
    report = experiment.report
    outputs = ["report.json", "report.md"]
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "losses").mkdir(exist_ok=True)
    C = len(report["classes"])
    for res in experiment.runs:
        tag = f"fold{res.fold + 1}_run{res.run + 1}"
        model = build_model(kind, C, windowing.window_size, overrides)
        model.load_state_dict(res.state_dict)
        save_checkpoint(out / "checkpoints" / tag, model, report["classes"], experiment.bounds[res.fold],
                        extra={"fold": res.fold + 1, "run": res.run + 1, "seed": res.seed})
        (out / "losses" / f"{tag}.csv").write_text(history_csv(res.history))
        outputs += [f"checkpoints/{tag}", f"losses/{tag}.csv"]
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (out / "report.md").write_text(render_markdown([report]))
    write_manifest(out / "manifest.json", "train", report["config"],
                   [r.seed for r in experiment.runs], [data_path], outputs, started)
    m = report["mean"]
    print(f"{kind} on {dataset.name}: accuracy {m['accuracy']:.3f}, f1 {m['f1']:.3f} "
          f"({len(experiment.runs)} runs) -> {out}")
    return 0


def read_window(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """A window file is a CSV with one column per KPI (header row) and one row per time step.

    A leading ``timestamp`` column is ignored. Returns values as (d, w) and the names.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"window file not found: {path}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header row and at least one data row")
    header, body = rows[0], rows[1:]
    start = 1 if header and header[0] == "timestamp" else 0
    names = header[start:]
    if not names:
        raise DataError(f"{path}: no KPI columns")
    try:
        values = np.array([[float(v) for v in r[start:]] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from exc
    if values.ndim != 2 or values.shape[1] != len(names):
        raise ShapeError(f"{path}: ragged rows, expected {len(names)} values per row")
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite values")
    return values.T, names


def normalize_window(values: np.ndarray, names: Sequence[str], bounds: NormalizationBounds | None) -> np.ndarray:
    """Min-max normalize rows whose KPI has stored bounds; other rows are clipped to [0, 1]."""
    out = np.clip(values, 0.0, 1.0)
    if bounds is None:
        return out
    index = {n: i for i, n in enumerate(bounds.series_names)}
    known = [i for i, n in enumerate(names) if n in index]
    if known:
        cols = [index[names[i]] for i in known]
        sub = NormalizationBounds(bounds.mins[cols], bounds.maxs[cols], tuple(names[i] for i in known))
        out[known] = normalize_array(values[known], sub, axis=0)
    return out


def predict_window(model: torch.nn.Module, config: Mapping, values: np.ndarray, names: Sequence[str]) -> dict:
    w = config["window_size"]
    if values.shape[1] != w:
        raise ShapeError(f"window has {values.shape[1]} time steps, checkpoint expects {w}")
    x = normalize_window(values, names, checkpoint_bounds(config))
    with torch.no_grad():
        probs = torch.softmax(model(torch.as_tensor(x[None], dtype=torch.float32)), -1)[0].double().numpy()
    classes = config["class_names"]
    return {"probs": {c: float(p) for c, p in zip(classes, probs)}, "label": classes[int(np.argmax(probs))]}


def cmd_predict(args: argparse.Namespace) -> int:
    model, config = load_checkpoint(args.checkpoint)
    values, names = read_window(args.window)
    print(json.dumps(predict_window(model, config, values, names)))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    if not args.reports:
        raise UsageError("report: at least one report.json is required")
    reports = [load_report(p) for p in args.reports]
    text = render_markdown(reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.plots:
        plots = _out_dir(args.plots)
        for i, r in enumerate(reports):
            stem = f"{i + 1}_{r['model']}_{r['dataset']}"
            plot_loss_curves(r, plots / f"{stem}_loss.png")
            plot_confusion(r, plots / f"{stem}_confusion.png")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="telesto", description="Anomaly classification on KPI graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled scenario")
    p.add_argument("--config", help="scenario JSON (fields of ScenarioConfig)")
    p.add_argument("--out", required=True, help="output directory (parent must exist)")
    p.add_argument("--seed", type=int)
    p.add_argument("--time-scale", type=float, help="time compression factor")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="LOGO cross-validated training and evaluation")
    p.add_argument("--data", help=f"dataset directory (default: ${DATA_DIR_ENV})")
    p.add_argument("--out", required=True, help="output directory (parent must exist)")
    p.add_argument("--model", help="telesto, gcn or gin")
    p.add_argument("--config", help='JSON with optional "train", "model" and "windowing" sections')
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--include-normal", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one window with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", required=True, help="CSV, one column per KPI, one row per step")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render one or more report.json files as a table")
    p.add_argument("reports", nargs="*")
    p.add_argument("--out", help="write markdown here instead of stdout")
    p.add_argument("--plots", help="directory for loss-curve and confusion-matrix images")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; see telesto --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except TelestoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

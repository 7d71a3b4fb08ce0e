"""Leave-one-group-out training and evaluation.

The five injections of every anomaly are rotated through a 3/1/1
train/validation/test split; fold ``f`` tests on instance ``f``, validates on
instance ``f + 4`` and trains on ``f + 1 .. f + 3`` (all mod 5).
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from telesto.baselines import BaselineConfig, BaselineGNN
from telesto.errors import ConfigError, DataError, NumericalError
from telesto.graphs import WindowingConfig, build_graphs
from telesto.metrics import METRIC_NAMES, confusion_matrix, mean_scores, scores_from_confusion
from telesto.model import Telesto, TelestoConfig
from telesto.series import NORMAL, Dataset, NormalizationBounds, fit_bounds, label_intervals, normalize_array

log = logging.getLogger(__name__)

MODEL_KINDS = ("telesto", "gcn", "gin")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    epochs: int = 15
    batch_size: int = 128
    runs: int = 10
    folds: int = 5
    seed: int = 0
    include_normal: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError("lr and weight_decay must be >= 0, eps > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.runs < 1 or self.workers < 1:
            raise ConfigError("epochs, batch_size, runs and workers must be >= 1")
        if not 1 <= self.folds <= 5:
            raise ConfigError("folds must be in 1..5")

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown train config keys {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


# -- splitting ---------------------------------------------------------------

N_SPLITS = 5


@dataclass(frozen=True)
class Fold:
    index: int  # 0-based
    train: dict  # class -> tuple of instance indices
    val: dict
    test: dict

    def role(self, cls: str, instance: int) -> str | None:
        for name in ("train", "val", "test"):
            if instance in getattr(self, name).get(cls, ()):
                return name
        return None


def logo_split(instance_counts: Mapping[str, int], seed: int | None = None) -> list[Fold]:
    """Five rotating 3/1/1 folds over the injection instances of every class.

    Instance ``i`` goes to slot ``i mod 5``. With a ``seed`` the instance-to-slot
    mapping is shuffled per class first.
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    slots = {}
    for cls, n in instance_counts.items():
        if n < N_SPLITS:
            raise DataError(f"class {cls!r} has {n} injection instances, need >= {N_SPLITS}")
        order = np.arange(n) if rng is None else rng.permutation(n)
        slots[cls] = {s: tuple(int(i) for i in order if i % N_SPLITS == s) for s in range(N_SPLITS)}
    folds = []
    for f in range(N_SPLITS):
        roles = {"train": [(f + 1) % 5, (f + 2) % 5, (f + 3) % 5], "val": [(f + 4) % 5], "test": [f]}
        folds.append(Fold(f, **{
            role: {cls: tuple(sorted(i for s in ss for i in slots[cls][s])) for cls in slots}
            for role, ss in roles.items()
        }))
    return folds


@dataclass
class WindowTable:
    """All usable windows of one node with class indices and instance ids."""

    windows: np.ndarray  # (n, d, w) raw values
    labels: np.ndarray  # class index
    classes: tuple[str, ...]
    instance: np.ndarray  # injection instance (or normal block) index
    window_end_t: np.ndarray
    series_names: tuple[str, ...]

    def instance_counts(self) -> dict:
        return {
            c: int(self.instance[self.labels == k].max()) + 1 if np.any(self.labels == k) else 0
            for k, c in enumerate(self.classes)
        }


def sample_instances(labels: Sequence[str]) -> np.ndarray:
    """Per-sample injection instance: the k-th interval of a class in time order is k; -1 for normal."""
    inst = np.full(len(labels), -1, dtype=np.int64)
    seen: dict[str, int] = {}
    for a, b, cls in label_intervals(labels):
        inst[a : b + 1] = seen.get(cls, 0)
        seen[cls] = seen.get(cls, 0) + 1
    return inst


def window_table(dataset: Dataset, windowing: WindowingConfig = WindowingConfig(),
                 include_normal: bool = False) -> WindowTable:
    series = dataset.series
    classes = tuple(c for c in dataset.classes if c != NORMAL)
    if include_normal:
        classes = classes + (NORMAL,)
    index = {c: i for i, c in enumerate(classes)}
    graphs = build_graphs(series, windowing)
    inst = sample_instances(series.labels)
    w = windowing.window_size

    keep, labels, instances = [], [], []
    normal_pos = []
    for g_idx, g in enumerate(graphs):
        if g.label not in index:
            continue
        span = slice(g.window_end_t - w, g.window_end_t)
        if g.label == NORMAL:
            normal_pos.append(len(keep))
            instances.append(-1)
        else:
            own = inst[span][series.labels[span] == g.label]
            instances.append(int(np.bincount(own).argmax()))
        keep.append(g_idx)
        labels.append(index[g.label])
    instances = np.array(instances, dtype=np.int64)
    # normal windows: contiguous time blocks act as pseudo-instances
    for block, members in enumerate(np.array_split(np.array(normal_pos, dtype=np.int64), N_SPLITS)):
        instances[members] = block
    if not keep:
        raise DataError(f"{dataset.name}: no windows carry a class from {classes}")
    return WindowTable(
        np.stack([graphs[i].node_raw_windows for i in keep]).astype(np.float64),
        np.array(labels, dtype=np.int64),
        classes,
        instances,
        np.array([graphs[i].window_end_t for i in keep]),
        series.series_names,
    )


def fold_roles(table: WindowTable, fold: Fold) -> np.ndarray:
    roles = np.array(
        [fold.role(table.classes[c], int(i)) or "" for c, i in zip(table.labels, table.instance)],
        dtype=object,
    )
    return roles


def fold_bounds(dataset: Dataset, table: WindowTable, train_mask: np.ndarray,
                windowing: WindowingConfig) -> NormalizationBounds:
    """Bounds fitted on every sample covered by a training window."""
    covered = np.zeros(dataset.series.T, dtype=bool)
    for t in table.window_end_t[train_mask]:
        covered[t - windowing.window_size : t] = True
    return fit_bounds(dataset.series.select_columns(covered), dataset.bounds_overrides)


# -- models ------------------------------------------------------------------


def build_model(kind: str, num_classes: int, window_size: int, overrides: Mapping | None = None,
                generator: torch.Generator | None = None) -> nn.Module:
    overrides = dict(overrides or {})
    if kind == "telesto":
        return Telesto(TelestoConfig(num_classes=num_classes, window_size=window_size, **overrides), generator)
    if kind in ("gcn", "gin"):
        return BaselineGNN(BaselineConfig(kind, num_classes, window_size, **overrides), generator)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def model_config_dict(model: nn.Module) -> dict:
    return {"kind": model.kind, **model.config.to_dict()}


# -- training ----------------------------------------------------------------


def _batches(n: int, batch_size: int, generator: torch.Generator | None):
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                             eps=cfg.eps, weight_decay=cfg.weight_decay)


def dataset_loss(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch_size: int = 512):
    """Mean cross-entropy and accuracy in eval mode."""
    model.eval()
    total, correct = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(y), batch_size):
            logits = model(x[i : i + batch_size])
            total += F.cross_entropy(logits, y[i : i + batch_size], reduction="sum").item()
            correct += int((logits.argmax(-1) == y[i : i + batch_size]).sum())
    return total / len(y), correct / len(y)


def train(model: nn.Module, train_data, val_data, cfg: TrainConfig,
          generator: torch.Generator | None = None) -> list[dict]:
    """Mini-batch AdamW for ``cfg.epochs`` epochs; the last epoch's parameters are kept.

    Returns the per-epoch history of mean training loss and validation loss/accuracy.
    """
    x, y = train_data
    if len(y) == 0:
        raise DataError("empty training set")
    opt = make_optimizer(model, cfg)
    history = []
    for epoch in range(cfg.epochs):
        model.train()
        running, seen = 0.0, 0
        for idx in _batches(len(y), cfg.batch_size, generator):
            logits = model(x[idx], generator=generator)
            loss = F.cross_entropy(logits, y[idx])
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
            seen += len(idx)
        entry = {"epoch": epoch + 1, "train_loss": running / seen}
        if val_data is not None and len(val_data[1]):
            entry["val_loss"], entry["val_accuracy"] = dataset_loss(model, *val_data)
        log.debug("epoch %d %s", epoch + 1, entry)
        history.append(entry)
    model.eval()
    return history


def predict(model: nn.Module, x: torch.Tensor, batch_size: int = 512) -> np.ndarray:
    """Eval-mode argmax; ties go to the lowest class index."""
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(torch.softmax(model(x[i : i + batch_size]), -1).numpy())
    return np.concatenate(out).argmax(-1)


def evaluate(model: nn.Module, x: torch.Tensor, y, num_classes: int) -> dict:
    if len(y) == 0:
        raise DataError("empty test set")
    cm = confusion_matrix(np.asarray(y), predict(model, x), num_classes)
    return {**scores_from_confusion(cm), "confusion": cm.tolist()}


# -- experiments -------------------------------------------------------------


def run_seed(seed: int, fold: int, run: int) -> int:
    return int(np.random.SeedSequence([seed, fold, run]).generate_state(1)[0])


@dataclass
class RunResult:
    fold: int
    run: int
    seed: int
    metrics: dict
    history: list
    state_dict: dict = field(repr=False)


def _train_task(task: dict) -> RunResult:
    torch.set_num_threads(1)
    gen = torch.Generator().manual_seed(task["seed"])
    model = build_model(task["kind"], task["num_classes"], task["window_size"], task["overrides"], gen)
    as_t = lambda a: torch.as_tensor(a, dtype=torch.float32)
    train_data = (as_t(task["x_train"]), torch.as_tensor(task["y_train"]))
    val_data = (as_t(task["x_val"]), torch.as_tensor(task["y_val"]))
    history = train(model, train_data, val_data, task["cfg"], gen)
    metrics = evaluate(model, as_t(task["x_test"]), task["y_test"], task["num_classes"])
    return RunResult(task["fold"], task["run"], task["seed"], metrics, history, model.state_dict())


@dataclass
class Experiment:
    report: dict
    runs: list[RunResult]
    bounds: dict  # fold index -> NormalizationBounds


def run_experiment(dataset: Dataset, kind: str, cfg: TrainConfig = TrainConfig(),
                   model_overrides: Mapping | None = None,
                   windowing: WindowingConfig = WindowingConfig(),
                   on_result: Callable[[RunResult], None] | None = None) -> Experiment:
    """Train and evaluate ``cfg.runs`` models on each of the first ``cfg.folds`` LOGO folds."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    table = window_table(dataset, windowing, cfg.include_normal)
    folds = logo_split(table.instance_counts())[: cfg.folds]
    C = len(table.classes)
    # fail on bad overrides before any training
    build_model(kind, C, windowing.window_size, model_overrides)

    tasks, fold_info, bounds_by_fold = [], [], {}
    for fold in folds:
        roles = fold_roles(table, fold)
        masks = {r: roles == r for r in ("train", "val", "test")}
        bounds = fold_bounds(dataset, table, masks["train"], windowing)
        bounds_by_fold[fold.index] = bounds
        x = normalize_array(table.windows, bounds, axis=1).astype(np.float32)
        fold_info.append({
            "fold": fold.index + 1,
            "counts": {r: int(m.sum()) for r, m in masks.items()},
            "bounds": bounds.to_dict(),
        })
        for run in range(cfg.runs):
            tasks.append({
                "fold": fold.index, "run": run, "seed": run_seed(cfg.seed, fold.index, run),
                "kind": kind, "num_classes": C, "window_size": windowing.window_size,
                "overrides": dict(model_overrides or {}), "cfg": cfg,
                **{f"x_{r}": x[m] for r, m in masks.items()},
                **{f"y_{r}": table.labels[m] for r, m in masks.items()},
            })

    results = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            for res in pool.map(_train_task, tasks):
                results.append(res)
                if on_result:
                    on_result(res)
    else:
        for task in tasks:
            res = _train_task(task)
            log.info("fold %d run %d accuracy %.3f", res.fold + 1, res.run + 1, res.metrics["accuracy"])
            results.append(res)
            if on_result:
                on_result(res)

    report = {
        "model": kind,
        "dataset": dataset.name,
        "classes": list(table.classes),
        "series_names": list(table.series_names),
        "config": {
            "train": cfg.to_dict(),
            "model": model_config_dict(build_model(kind, C, windowing.window_size, model_overrides)),
            "windowing": asdict(windowing),
        },
        "folds": [],
    }
    for info in fold_info:
        runs = [r for r in results if r.fold == info["fold"] - 1]
        info["runs"] = [
            {"run": r.run + 1, "seed": r.seed,
             "metrics": {n: r.metrics[n] for n in METRIC_NAMES},
             "per_class_precision": r.metrics["per_class_precision"],
             "per_class_recall": r.metrics["per_class_recall"],
             "confusion": r.metrics["confusion"], "history": r.history}
            for r in runs
        ]
        info["mean"] = mean_scores([r["metrics"] for r in info["runs"]])
        report["folds"].append(info)
    report["mean"] = mean_scores([f["mean"] for f in report["folds"]])
    return Experiment(report, results, bounds_by_fold)


def history_csv(history: Sequence[Mapping]) -> str:
    cols = ["epoch", "train_loss", "val_loss", "val_accuracy"]
    lines = [",".join(cols)]
    for h in history:
        lines.append(",".join("" if h.get(c) is None else repr(h[c]) for c in cols))
    return "\n".join(lines) + "\n"

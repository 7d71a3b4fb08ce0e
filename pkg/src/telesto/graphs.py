"""Sliding-window conversion of multivariate series into labeled graphs.

Every window becomes one fully connected graph with one node per series. Nodes
keep their raw window so the feature filter stays a learnable part of the model.

Graph archive format (``*.tgraph``), all integers little-endian::

    8 bytes   magic b"TGRAPH01"
    8 bytes   uint64 length n of the manifest
    n bytes   UTF-8 JSON manifest
    ...       float32 arrays, in manifest order, at the listed byte offsets
              (offsets are relative to the end of the manifest)

The manifest holds ``windowing``, ``adjacency`` (always ``"full"``),
``series_names``, ``classes``, ``labels`` (indices into ``classes``),
``window_end_t`` and ``arrays`` (name, shape, offset). The ``windows`` array has
shape ``(d, w, num_graphs)``.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from telesto.errors import ConfigError, DataError
from telesto.series import NORMAL, MultivariateSeries

MAGIC = b"TGRAPH01"


@dataclass(frozen=True)
class WindowingConfig:
    window_size: int = 20
    stride: int = 1

    def __post_init__(self):
        if self.window_size < 1 or self.stride < 1:
            raise ConfigError(f"window_size and stride must be >= 1, got {self}")


def full_adjacency(n: int) -> np.ndarray:
    if n < 1:
        raise ConfigError(f"node count must be >= 1, got {n}")
    return np.ones((n, n), dtype=np.uint8)


@dataclass
class LabeledGraph:
    node_raw_windows: np.ndarray  # (d, w)
    label: str
    window_end_t: int  # 1-based index of the last sample in the window
    adjacency: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.adjacency is None:
            self.adjacency = full_adjacency(self.node_raw_windows.shape[0])

    @property
    def num_nodes(self) -> int:
        return self.node_raw_windows.shape[0]


def assign_label(window_labels: Sequence[str]) -> str:
    """Majority class of a window.

    Ties prefer any anomaly class over ``normal``, then the lexicographically
    smallest class name.
    """
    counts = Counter(window_labels)
    if not counts:
        raise DataError("empty window")
    top = max(counts.values())
    tied = [c for c, n in counts.items() if n == top]
    return min(tied, key=lambda c: (c == NORMAL, c))


def window_end_positions(T: int, cfg: WindowingConfig) -> np.ndarray:
    """1-based end indices ``w, w + stride, ... <= T``."""
    if T < cfg.window_size:
        raise DataError(f"series length {T} shorter than window size {cfg.window_size}")
    return np.arange(cfg.window_size, T + 1, cfg.stride)


def window_array(values: np.ndarray, cfg: WindowingConfig) -> np.ndarray:
    """All windows of a (d, T) array as a read-only (num_graphs, d, w) view."""
    T = values.shape[1]
    window_end_positions(T, cfg)
    view = sliding_window_view(values, cfg.window_size, axis=1)  # (d, T-w+1, w)
    return view[:, :: cfg.stride, :].transpose(1, 0, 2)


def build_graphs(
    series: MultivariateSeries, cfg: WindowingConfig = WindowingConfig(), strict: bool = False
) -> list[LabeledGraph]:
    """One graph per window. ``strict`` drops windows whose samples carry mixed labels."""
    ends = window_end_positions(series.T, cfg)
    windows = window_array(series.values, cfg)
    adjacency = full_adjacency(series.d)
    graphs = []
    w = cfg.window_size
    for t, win in zip(ends, windows):
        labels = series.labels[t - w : t]
        if strict and len(set(labels)) > 1:
            continue
        graphs.append(LabeledGraph(win, assign_label(labels), int(t), adjacency))
    return graphs


@dataclass
class GraphSet:
    """Stacked graphs of one node: ``windows`` is (num_graphs, d, w)."""

    windows: np.ndarray
    labels: list[str]
    window_end_t: np.ndarray
    windowing: WindowingConfig
    series_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledGraph:
        return LabeledGraph(self.windows[i], self.labels[i], int(self.window_end_t[i]))

    @classmethod
    def from_graphs(cls, graphs: Sequence[LabeledGraph], windowing: WindowingConfig,
                    series_names: Sequence[str] = ()) -> "GraphSet":
        if not graphs:
            raise DataError("no graphs to stack")
        return cls(
            np.stack([g.node_raw_windows for g in graphs]),
            [g.label for g in graphs],
            np.array([g.window_end_t for g in graphs]),
            windowing,
            tuple(series_names),
        )


def save_graph_archive(path: str | Path, graphs: GraphSet, classes: Sequence[str] | None = None) -> Path:
    path = Path(path)
    classes = list(classes) if classes is not None else sorted(set(graphs.labels))
    index = {c: i for i, c in enumerate(classes)}
    missing = set(graphs.labels) - set(index)
    if missing:
        raise DataError(f"labels {sorted(missing)} not in class list")
    windows = np.ascontiguousarray(graphs.windows.transpose(1, 2, 0), dtype="<f4")
    manifest = {
        "format": "tgraph/1",
        "windowing": {"window_size": graphs.windowing.window_size, "stride": graphs.windowing.stride},
        "adjacency": "full",
        "series_names": list(graphs.series_names),
        "classes": classes,
        "labels": [index[c] for c in graphs.labels],
        "window_end_t": [int(t) for t in graphs.window_end_t],
        "arrays": [{"name": "windows", "shape": list(windows.shape), "dtype": "<f4", "offset": 0}],
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(windows.tobytes())
    return path


def load_graph_archive(path: str | Path) -> tuple[GraphSet, list[str]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DataError(f"{path}: not a graph archive")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + n])
    body = data[16 + n :]
    spec = manifest["arrays"][0]
    count = int(np.prod(spec["shape"]))
    windows = np.frombuffer(body, dtype="<f4", count=count, offset=spec["offset"])
    windows = windows.reshape(spec["shape"]).transpose(2, 0, 1)
    classes = manifest["classes"]
    graphs = GraphSet(
        np.ascontiguousarray(windows),
        [classes[i] for i in manifest["labels"]],
        np.array(manifest["window_end_t"], dtype=np.int64),
        WindowingConfig(**manifest["windowing"]),
        tuple(manifest["series_names"]),
    )
    return graphs, classes

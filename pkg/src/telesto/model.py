"""The TELESTO graph classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from telesto.errors import ConfigError, ShapeError
from telesto.graphs import LabeledGraph
from telesto.layers import (
    EmbeddingHead,
    FeatureFilter,
    FFFBlock,
    GlobalAttentionPool,
    GraphTransformation,
    JumpingKnowledgeLSTM,
    adjacency_dropout,
    xavier_init_,
)


@dataclass(frozen=True)
class TelestoConfig:
    num_classes: int = 5
    window_size: int = 20
    conv_filters: int = 16
    pe_dim: int = 8
    hidden_dim: int = 64
    levels: int = 5
    tagcn_hops: int = 3
    gat_heads: int = 8
    jk_lstm_layers: int = 7
    adjacency_dropout_p: float = 0.5
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.hidden_dim % self.gat_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by gat_heads {self.gat_heads}")
        if self.levels < 1 or self.num_classes < 1 or self.window_size < 1:
            raise ConfigError("levels, num_classes and window_size must be >= 1")
        for p in (self.adjacency_dropout_p, self.dropout_p):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"probability {p} outside [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class Telesto(nn.Module):
    kind = "telesto"

    def __init__(self, config: TelestoConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        c = config
        self.feature_filter = FeatureFilter(c.window_size, c.conv_filters, c.pe_dim)
        self.project = nn.Linear(self.feature_filter.out_features, c.hidden_dim)
        self.transform = GraphTransformation(c.hidden_dim, c.levels, c.tagcn_hops, c.gat_heads, c.dropout_p)
        self.jk = JumpingKnowledgeLSTM(c.hidden_dim, c.jk_lstm_layers)
        self.fff = FFFBlock(c.hidden_dim, c.dropout_p)
        self.pool = GlobalAttentionPool(c.hidden_dim)
        self.head = EmbeddingHead(c.hidden_dim, c.num_classes)
        xavier_init_(self, generator)

    def node_features(self, windows, adj=None, generator=None):
        """Per-node representations after the FFF block, ``(B, d, hidden)``."""
        if windows.dim() != 3:
            raise ShapeError(f"expected (B, d, w) windows, got {tuple(windows.shape)}")
        B, d, _ = windows.shape
        if adj is None:
            adj = windows.new_ones(B, d, d)
        h = self.feature_filter(windows)
        adj = adjacency_dropout(adj, self.config.adjacency_dropout_p, self.training, generator)
        h = self.project(h)
        h = self.jk(self.transform(h, adj, generator))
        return self.fff(h, generator)

    def forward(self, windows: torch.Tensor, adj: torch.Tensor | None = None,
                generator: torch.Generator | None = None) -> torch.Tensor:
        """Class logits ``(B, C)`` for raw windows ``(B, d, w)``."""
        return self.head(self.pool(self.node_features(windows, adj, generator)))


def as_batch(graph: LabeledGraph, dtype=torch.float32):
    windows = torch.as_tensor(np.asarray(graph.node_raw_windows), dtype=dtype)[None]
    adj = torch.as_tensor(np.asarray(graph.adjacency), dtype=dtype)[None]
    return windows, adj


def predict_proba(model: nn.Module, graph: LabeledGraph, training: bool = False,
                  generator: torch.Generator | None = None) -> np.ndarray:
    """Class distribution for a single graph."""
    was_training = model.training
    model.train(training)
    try:
        dtype = next(model.parameters()).dtype
        windows, adj = as_batch(graph, dtype)
        with torch.no_grad():
            probs = torch.softmax(model(windows, adj, generator=generator), dim=-1)[0]
    finally:
        model.train(was_training)
    return probs.numpy()

"""GCN and GIN graph-classification baselines.

Both read the flattened raw window of each node, apply two graph layers with a
ReLU in between, sum-pool over nodes and classify with ``linear -> dropout -> linear``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from telesto.errors import ConfigError, ShapeError
from telesto.layers import dropout, symmetric_normalize, with_self_loops, xavier_init_

DEFAULT_HIDDEN = {"gcn": 32, "gin": 64}


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "gcn"
    num_classes: int = 5
    window_size: int = 20
    hidden_dim: int | None = None
    num_layers: int = 2
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.kind not in DEFAULT_HIDDEN:
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.hidden_dim is None:
            object.__setattr__(self, "hidden_dim", DEFAULT_HIDDEN[self.kind])
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def row_normalize(x: torch.Tensor) -> torch.Tensor:
    """Divide each feature vector by its sum (sums below 1 are left unscaled)."""
    return x / x.sum(-1, keepdim=True).clamp(min=1.0)


class GCNConv(nn.Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.lin = nn.Linear(in_features, out_features, bias=False)
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x, adj):
        if adj.shape[-1] != x.shape[-2]:
            raise ShapeError(f"adjacency {tuple(adj.shape)} incompatible with features {tuple(x.shape)}")
        return symmetric_normalize(with_self_loops(adj)) @ self.lin(x) + self.bias


class GINConv(nn.Module):
    """``MLP((1 + eps) h_i + sum_j a_ij h_j)`` on batch-normalized input, ``eps`` learnable."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.norm = nn.BatchNorm1d(in_features, eps=1e-5, momentum=0.1)
        self.eps = nn.Parameter(torch.zeros(1))
        self.mlp = nn.Sequential(
            nn.Linear(in_features, out_features), nn.ReLU(), nn.Linear(out_features, out_features)
        )

    def aggregate(self, x, adj):
        return (1 + self.eps) * x + adj @ x

    def forward(self, x, adj):
        if adj.shape[-1] != x.shape[-2]:
            raise ShapeError(f"adjacency {tuple(adj.shape)} incompatible with features {tuple(x.shape)}")
        B, d, f = x.shape
        x = self.norm(x.reshape(B * d, f)).reshape(B, d, f)
        return self.mlp(self.aggregate(x, adj))


class BaselineGNN(nn.Module):
    def __init__(self, config: BaselineConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.kind = config.kind
        conv = GCNConv if config.kind == "gcn" else GINConv
        dims = [config.window_size] + [config.hidden_dim] * config.num_layers
        self.convs = nn.ModuleList(conv(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.lin1 = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.lin2 = nn.Linear(config.hidden_dim, config.num_classes)
        xavier_init_(self, generator)

    def forward(self, windows, adj=None, generator=None):
        if windows.dim() != 3 or windows.shape[-1] != self.config.window_size:
            raise ShapeError(
                f"expected (B, d, {self.config.window_size}) windows, got {tuple(windows.shape)}"
            )
        B, d, _ = windows.shape
        if adj is None:
            adj = windows.new_ones(B, d, d)
        h = row_normalize(windows) if self.kind == "gcn" else windows
        for i, conv in enumerate(self.convs):
            h = conv(h, adj)
            if i < len(self.convs) - 1:
                h = F.relu(h)
        h = self.lin1(h.sum(1))
        h = dropout(h, self.config.dropout_p, self.training, generator)
        return self.lin2(h)


def GCN(num_classes: int = 5, window_size: int = 20, **kw) -> BaselineGNN:
    return BaselineGNN(BaselineConfig("gcn", num_classes, window_size, **kw))


def GIN(num_classes: int = 5, window_size: int = 20, **kw) -> BaselineGNN:
    return BaselineGNN(BaselineConfig("gin", num_classes, window_size, **kw))

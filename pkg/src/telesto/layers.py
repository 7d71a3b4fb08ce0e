"""Dense, batched graph layers.

Shapes: node features ``x`` are ``(B, d, F)``, adjacency ``adj`` is ``(B, d, d)``
with ``adj[b, i, j] = 1`` meaning node ``i`` receives from node ``j``. All graphs in
a batch share ``d``; parameter shapes never depend on ``d``.

Dropout takes an explicit ``torch.Generator`` so training runs are reproducible
without touching the global RNG.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from telesto.errors import ShapeError


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None = None):
    if not training or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


def adjacency_dropout(adj: torch.Tensor, p: float, training: bool,
                      generator: torch.Generator | None = None) -> torch.Tensor:
    """Zero each adjacency entry independently with probability ``p`` (no rescaling)."""
    if not training or p == 0.0:
        return adj
    keep = torch.rand(adj.shape, generator=generator, dtype=adj.dtype, device=adj.device) >= p
    return adj * keep


def positional_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal encoding, ``(length, dim)``: sin on even columns, cos on odd."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


def symmetric_normalize(adj: torch.Tensor) -> torch.Tensor:
    """``D^-1/2 A D^-1/2`` with row degrees; zero-degree nodes get zero rows and columns."""
    deg = adj.sum(-1)
    inv_sqrt = torch.where(deg > 0, deg.clamp(min=1e-12).rsqrt(), torch.zeros_like(deg))
    return inv_sqrt[..., :, None] * adj * inv_sqrt[..., None, :]


def with_self_loops(adj: torch.Tensor) -> torch.Tensor:
    eye = torch.eye(adj.shape[-1], dtype=adj.dtype, device=adj.device)
    return torch.maximum(adj, eye.expand_as(adj))


class FeatureFilter(nn.Module):
    """Per-series temporal features: positional encoding, size-3 convolution, batch norm.

    A raw window of length ``w`` is broadcast to ``pe_dim`` channels, the positional
    encoding is added, and ``n_filters`` zero-padded kernels of size 3 produce
    ``(n_filters, w)`` maps which are flattened to ``n_filters * w``.
    """

    def __init__(self, window: int, n_filters: int = 16, pe_dim: int = 8):
        super().__init__()
        self.window = window
        self.conv = nn.Conv1d(pe_dim, n_filters, kernel_size=3, padding=1)
        self.norm = nn.BatchNorm1d(n_filters, eps=1e-5, momentum=0.1)
        self.register_buffer("pe", positional_encoding(window, pe_dim).T.contiguous())

    @property
    def out_features(self) -> int:
        return self.conv.out_channels * self.window

    def lift(self, windows: torch.Tensor) -> torch.Tensor:
        """(n, w) raw windows -> (n, pe_dim, w) encoded conv input."""
        return windows[:, None, :] + self.pe.to(windows.dtype)

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        B, d, w = windows.shape
        if w != self.window:
            raise ShapeError(f"window length {w} does not match configured {self.window}")
        h = self.conv(self.lift(windows.reshape(B * d, w)))
        h = self.norm(h)
        return h.reshape(B, d, -1)


class TAGConv(nn.Module):
    """Topology-adaptive convolution ``sum_j Ahat^j X W_j + b`` for hops ``j = 0..k``."""

    def __init__(self, in_features: int, out_features: int, k: int = 3):
        super().__init__()
        self.k = k
        self.weight = nn.Parameter(torch.empty(k + 1, in_features, out_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        for w in self.weight:
            nn.init.xavier_uniform_(w, generator=generator)
        nn.init.zeros_(self.bias)

    def forward(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        if adj.shape[-1] != x.shape[-2] or adj.shape[-2] != adj.shape[-1]:
            raise ShapeError(f"adjacency {tuple(adj.shape)} incompatible with features {tuple(x.shape)}")
        a_hat = symmetric_normalize(adj)
        h = x
        out = h @ self.weight[0]
        for j in range(1, self.k + 1):
            h = a_hat @ h
            out = out + h @ self.weight[j]
        return out + self.bias


class GATConv(nn.Module):
    """Multi-head graph attention; head outputs (width ``features // heads``) are concatenated.

    Self-edges are always added to the attention mask so no node has an empty
    neighborhood, even after adjacency dropout.
    """

    def __init__(self, features: int, heads: int = 8, negative_slope: float = 0.2):
        super().__init__()
        if features % heads:
            raise ShapeError(f"features {features} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = features // heads
        self.negative_slope = negative_slope
        self.lin = nn.Linear(features, features, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, self.head_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, self.head_dim))
        self.bias = nn.Parameter(torch.zeros(features))
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        nn.init.xavier_uniform_(self.lin.weight, generator=generator)
        nn.init.xavier_uniform_(self.att_src, generator=generator)
        nn.init.xavier_uniform_(self.att_dst, generator=generator)
        nn.init.zeros_(self.bias)

    def attention(self, x: torch.Tensor, adj: torch.Tensor):
        """Return projected features ``(B, d, H, Fh)`` and coefficients ``(B, d, d, H)``."""
        B, d, _ = x.shape
        wh = self.lin(x).reshape(B, d, self.heads, self.head_dim)
        s_i = (wh * self.att_src).sum(-1)  # (B, d, H), target term
        s_j = (wh * self.att_dst).sum(-1)  # (B, d, H), neighbor term
        e = F.leaky_relu(s_i[:, :, None, :] + s_j[:, None, :, :], self.negative_slope)
        mask = with_self_loops(adj) > 0
        e = e.masked_fill(~mask[..., None], float("-inf"))
        return wh, torch.softmax(e, dim=2)

    def forward(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        if adj.shape[-1] != x.shape[-2]:
            raise ShapeError(f"adjacency {tuple(adj.shape)} incompatible with features {tuple(x.shape)}")
        wh, alpha = self.attention(x, adj)
        out = torch.einsum("bijh,bjhf->bihf", alpha, wh).reshape(x.shape[0], x.shape[1], -1)
        return F.elu(out + self.bias)


class SublayerConnection(nn.Module):
    """Pre-norm residual: ``x + dropout(f(layer_norm(x)))``."""

    def __init__(self, features: int, p: float = 0.5):
        super().__init__()
        self.norm = nn.LayerNorm(features)
        self.p = p

    def forward(self, x, fn, generator=None):
        return x + dropout(fn(self.norm(x)), self.p, self.training, generator)


class GraphTransformation(nn.Module):
    """Stacked TAGCN -> GAT levels.

    The TAGCN chain runs sequentially; each level's TAGCN output also feeds a GAT
    branch whose result is that level's output.
    """

    def __init__(self, features: int, levels: int = 5, k: int = 3, heads: int = 8, p: float = 0.5):
        super().__init__()
        if levels < 1:
            raise ShapeError("need at least one level")
        self.tagcn = nn.ModuleList(TAGConv(features, features, k) for _ in range(levels))
        self.gat = nn.ModuleList(GATConv(features, heads) for _ in range(levels))
        self.slc_tagcn = nn.ModuleList(SublayerConnection(features, p) for _ in range(levels))
        self.slc_gat = nn.ModuleList(SublayerConnection(features, p) for _ in range(levels))

    def forward(self, x, adj, generator=None) -> list[torch.Tensor]:
        outputs = []
        h = x
        for tagcn, gat, slc_t, slc_g in zip(self.tagcn, self.gat, self.slc_tagcn, self.slc_gat):
            h = slc_t(h, lambda z: F.elu(tagcn(z, adj)), generator)
            outputs.append(slc_g(h, lambda z: gat(z, adj), generator))
        return outputs


class JumpingKnowledgeLSTM(nn.Module):
    """LSTM-attention jumping knowledge.

    Each node's level outputs form a sequence read by a bidirectional LSTM stack;
    a linear layer scores each level from the LSTM states and the softmaxed scores
    weight a convex combination of the level outputs.
    """

    def __init__(self, features: int, num_layers: int = 7, lstm_hidden: int | None = None):
        super().__init__()
        lstm_hidden = lstm_hidden or max(1, features // 2)
        self.lstm = nn.LSTM(features, lstm_hidden, num_layers=num_layers,
                            bidirectional=True, batch_first=True)
        self.att = nn.Linear(2 * lstm_hidden, 1)

    def weights(self, stacked: torch.Tensor) -> torch.Tensor:
        """(n, L, F) level sequences -> (n, L) level weights."""
        states, _ = self.lstm(stacked)
        return torch.softmax(self.att(states).squeeze(-1), dim=-1)

    def forward(self, outputs: list[torch.Tensor], return_weights: bool = False):
        if not outputs:
            raise ShapeError("jumping knowledge needs at least one level output")
        stacked = torch.stack(outputs, dim=-2)  # (B, d, L, F)
        B, d, L, Fdim = stacked.shape
        seq = stacked.reshape(B * d, L, Fdim)
        alpha = self.weights(seq)
        out = (alpha[..., None] * seq).sum(1).reshape(B, d, Fdim)
        if return_weights:
            return out, alpha.reshape(B, d, L)
        return out


class FFFBlock(nn.Module):
    """Residual feed-forward block: dropout, linear, ELU, dropout, linear."""

    def __init__(self, features: int, p: float = 0.5):
        super().__init__()
        self.norm = nn.LayerNorm(features)
        self.lin1 = nn.Linear(features, features)
        self.lin2 = nn.Linear(features, features)
        self.p = p

    def forward(self, x, generator=None):
        h = self.norm(x)
        h = self.lin1(dropout(h, self.p, self.training, generator))
        h = F.elu(h)
        h = self.lin2(dropout(h, self.p, self.training, generator))
        return x + h


class GlobalAttentionPool(nn.Module):
    """Graph readout weighting node value-transforms by a softmax over a learned gate."""

    def __init__(self, features: int):
        super().__init__()
        self.gate = nn.Linear(features, 1)
        self.value = nn.Linear(features, features)

    def forward(self, x: torch.Tensor, return_scores: bool = False):
        scores = torch.softmax(self.gate(x).squeeze(-1), dim=-1)  # (B, d)
        emb = (scores[..., None] * self.value(x)).sum(1)
        if return_scores:
            return emb, scores
        return emb


class EmbeddingHead(nn.Module):
    """Ten size-9 filters over the graph embedding, batch norm, filter average, linear to logits."""

    def __init__(self, features: int, num_classes: int, filters: int = 10, kernel: int = 9):
        super().__init__()
        self.conv = nn.Conv1d(1, filters, kernel, padding=kernel // 2)
        self.norm = nn.BatchNorm1d(filters, eps=1e-5, momentum=0.1)
        self.out = nn.Linear(features, num_classes)

    def feature_maps(self, emb: torch.Tensor) -> torch.Tensor:
        """(B, F) -> (B, filters, F) after convolution and batch norm."""
        return self.norm(self.conv(emb[:, None, :]))

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.out(self.feature_maps(emb).mean(1))


def xavier_init_(module: nn.Module, generator: torch.Generator | None = None):
    """Xavier-uniform every weight tensor, zero every vector parameter, reset norm layers."""
    for m in module.modules():
        if isinstance(m, (nn.BatchNorm1d, nn.LayerNorm)):
            m.reset_parameters()
            continue
        if isinstance(m, (TAGConv, GATConv)):
            m.reset_parameters(generator)
            continue
        for p in m.parameters(recurse=False):
            if p.dim() >= 2:
                nn.init.xavier_uniform_(p, generator=generator)
            else:
                nn.init.zeros_(p)


def count_parameters(module: nn.Module) -> int:
    return sum(math.prod(p.shape) for p in module.parameters())

"""Transformer sequence encoder and GCN graph encoder.

Both consume padded batches: token ids ``(B, M)`` with a boolean mask, and
graph operators ``(B, M, M)`` whose padded rows/columns are zero.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import VOCAB_SIZE
from .errors import ConfigError, DegenerateMaskError, ShapeError
from .nn import INIT_STD, MLP, LayerNorm, Linear, Module, normal_param
from .rng import RngState
from .tensor import Tensor


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    if d % 2:
        raise ConfigError(f"positional encoding needs an even dimension, got {d}")
    pos = np.arange(max_len)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2) / d)
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


class MultiHeadSelfAttention(Module):
    def __init__(self, rng: RngState, d: int, heads: int, std: float = INIT_STD):
        if d % heads:
            raise ConfigError(f"d={d} is not divisible by heads={heads}")
        self.query = Linear(rng, d, d, std=std)
        self.key = Linear(rng, d, d, std=std)
        self.value = Linear(rng, d, d, std=std)
        self.out = Linear(rng, d, d, std=std)
        self.heads = heads

    def _split(self, x: Tensor) -> Tensor:
        b, m, d = x.shape
        return T.transpose(T.reshape(x, (b, m, self.heads, d // self.heads)), (0, 2, 1, 3))

    def attention_weights(self, x: Tensor, mask: np.ndarray) -> Tensor:
        q, k = self._split(self.query(x)), self._split(self.key(x))
        scores = T.matmul(q, k.T) * (1.0 / np.sqrt(q.shape[-1]))
        return T.softmax_masked(scores, mask[:, None, None, :])

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if x.ndim == 2:
            return T.reshape(self(T.reshape(x, (1,) + x.shape), np.asarray(mask)[None]), x.shape)
        b, m, d = x.shape
        weights = self.attention_weights(x, mask)
        ctx = T.matmul(weights, self._split(self.value(x)))
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, m, d))
        return self.out(ctx)


class EncoderLayer(Module):
    """Post-norm block: LN(x + MSA(x)) then LN(x + FFN(x)), FFN width 4d."""

    def __init__(self, rng: RngState, d: int, heads: int, slope: float, std: float = INIT_STD):
        self.attn = MultiHeadSelfAttention(rng, d, heads, std)
        self.norm1 = LayerNorm(d)
        self.ffn = MLP(rng, d, 4 * d, d, slope, std)
        self.norm2 = LayerNorm(d)

    def attention_block(self, x: Tensor, mask: np.ndarray) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise DegenerateMaskError("attention over a sequence with no real tokens")
        return self.norm1(x + self.attn(x, mask))

    def ffn_block(self, x: Tensor) -> Tensor:
        return self.norm2(x + self.ffn(x))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        return self.ffn_block(self.attention_block(x, mask))


class SequenceEncoder(Module):
    def __init__(self, rng: RngState, max_len: int, d: int, layers: int, heads: int,
                 slope: float, std: float = INIT_STD):
        if d % 2:
            raise ConfigError(f"model dimension must be even, got {d}")
        self.embedding = normal_param(rng, (VOCAB_SIZE, d), std)
        self.positions = sinusoidal_table(max_len, d)
        self.layers = [EncoderLayer(rng, d, heads, slope, std) for _ in range(layers)]

    def embed_with_positions(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.shape[-1] > len(self.positions):
            raise ShapeError(f"sequence length {ids.shape[-1]} exceeds table of {len(self.positions)}")
        return T.embedding(self.embedding, ids) + self.positions[: ids.shape[-1]]

    def __call__(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        x = self.embed_with_positions(ids)
        for layer in self.layers:
            x = layer(x, mask)
        return x


def gcn_layer(norm_adj, x, weight, slope: float) -> Tensor:
    """LeakyReLU(Â X W)."""
    norm_adj, x, weight = T.as_tensor(norm_adj), T.as_tensor(x), T.as_tensor(weight)
    if norm_adj.shape[-1] != norm_adj.shape[-2] or norm_adj.shape[-1] != x.shape[-2]:
        raise ShapeError(f"gcn_layer: adjacency {norm_adj.shape} incompatible with features {x.shape}")
    return T.leaky_relu(T.matmul(T.matmul(norm_adj, x), weight), slope)


class GraphEncoder(Module):
    """Node-id embedding followed by stacked GCN layers (or mean-aggregator SAGE)."""

    def __init__(self, rng: RngState, d: int, layers: int, slope: float, kind: str = "gcn",
                 std: float = INIT_STD):
        if layers < 1:
            raise ConfigError(f"graph encoder needs at least one layer, got {layers}")
        if kind not in ("gcn", "sage"):
            raise ConfigError(f"unknown graph encoder {kind!r}")
        self.embedding = normal_param(rng, (VOCAB_SIZE, d), std)
        self.weights = [_Weight(rng, d, std) for _ in range(layers)]
        if kind == "sage":
            self.neighbor_weights = [_Weight(rng, d, std) for _ in range(layers)]
        self.kind = kind
        self.slope = slope

    def __call__(self, ids: np.ndarray, norm_adj: np.ndarray, mean_adj: np.ndarray | None = None,
                 mask: np.ndarray | None = None) -> Tensor:
        x = T.embedding(self.embedding, ids)
        if self.kind == "gcn":
            for w in self.weights:
                x = gcn_layer(norm_adj, x, w.w, self.slope)
            return x
        node_mask = np.ones(np.shape(ids), bool) if mask is None else np.asarray(mask, bool)
        keep = node_mask[..., None].astype(float)
        for w_self, w_nb in zip(self.weights, self.neighbor_weights):
            agg = T.matmul(mean_adj, x)
            x = T.leaky_relu(T.matmul(x, w_self.w) + T.matmul(agg, w_nb.w), self.slope) * keep
        return x


class _Weight(Module):
    def __init__(self, rng: RngState, d: int, std: float):
        self.w = normal_param(rng, (d, d), std)

"""Differentiable layers: MLP, valid 1-D convolution, GRU, graph attention.

All layers are functional: they read (and lazily create) their weights in a
ParamStore under a caller-chosen name prefix, so the same code serves
construction, training and checkpoint reload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import ParamStore
from .tensor import Tensor


def linear(x: Tensor, store: ParamStore, prefix: str, in_dim: int, out_dim: int) -> Tensor:
    w = store.param(f"{prefix}.w", (in_dim, out_dim))
    b = store.param(f"{prefix}.b", (out_dim,))
    return T.add(T.matmul(x, w), b)


def mlp(x: Tensor, store: ParamStore, prefix: str, dims: tuple[int, ...],
        hidden_activation=T.tanh, final_activation=None) -> Tensor:
    """Dense chain through `dims`, e.g. (72, 64, 6) = two linear layers."""
    if len(dims) < 2:
        raise ValueError("mlp needs at least input and output dims")
    out = x
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        out = linear(out, store, f"{prefix}.l{i}", d_in, d_out)
        last = i == len(dims) - 2
        act = final_activation if last else hidden_activation
        if act is not None:
            out = act(out)
    return out


def conv1d(x: Tensor, store: ParamStore, prefix: str, in_channels: int,
           out_channels: int, kernel: int) -> Tensor:
    """Valid (no padding) 1-D convolution of a (C_in, T) tensor -> (C_out, T-K+1)."""
    c_in, steps = x.shape
    if c_in != in_channels:
        raise ValueError(f"expected {in_channels} input channels, got shape {x.shape}")
    if steps < kernel:
        raise ValueError(f"sequence length {steps} shorter than kernel {kernel}")
    w = store.param(f"{prefix}.w", (out_channels, in_channels, kernel))
    b = store.param(f"{prefix}.b", (out_channels,))
    out_steps = steps - kernel + 1
    acc = None
    for k in range(kernel):
        term = T.matmul(w[:, :, k], x[:, k : k + out_steps])
        acc = term if acc is None else T.add(acc, term)
    return T.add(acc, T.reshape(b, (out_channels, 1)))


def gru_step(x: Tensor, h_prev: Tensor, store: ParamStore, prefix: str,
             in_dim: int, hidden_dim: int) -> Tensor:
    """One GRU update h' = (1-z)*n + z*h with reset-gated candidate."""
    if x.shape != (in_dim,) or h_prev.shape != (hidden_dim,):
        raise ValueError(f"gru_step got x {x.shape}, h {h_prev.shape}; expected ({in_dim},), ({hidden_dim},)")
    xh = T.concat([x, h_prev])
    wz = store.param(f"{prefix}.wz", (in_dim + hidden_dim, hidden_dim))
    bz = store.param(f"{prefix}.bz", (hidden_dim,))
    wr = store.param(f"{prefix}.wr", (in_dim + hidden_dim, hidden_dim))
    br = store.param(f"{prefix}.br", (hidden_dim,))
    wxn = store.param(f"{prefix}.wxn", (in_dim, hidden_dim))
    whn = store.param(f"{prefix}.whn", (hidden_dim, hidden_dim))
    bn = store.param(f"{prefix}.bn", (hidden_dim,))
    z = T.sigmoid(T.add(T.matmul(xh, wz), bz))
    r = T.sigmoid(T.add(T.matmul(xh, wr), br))
    n = T.tanh(T.add(T.add(T.matmul(x, wxn), T.mul(r, T.matmul(h_prev, whn))), bn))
    one_minus_z = T.sub(1.0, z)
    return T.add(T.mul(one_minus_z, n), T.mul(z, h_prev))


@dataclass(frozen=True)
class GatLayerParams:
    """Shape of one graph-attention layer.

    `node_types` maps contiguous row blocks of the feature matrix to their
    projection weights; `edge_types` indexes the per-type attention vectors.
    Projection output is heads * head_dim; heads are concatenated unless
    `average_heads`, which yields head_dim output (used on the final layer).
    """

    in_dim: int
    heads: int
    head_dim: int
    node_types: tuple[str, ...]
    edge_types: tuple[str, ...]
    average_heads: bool = False

    @property
    def out_dim(self) -> int:
        return self.head_dim if self.average_heads else self.heads * self.head_dim


def gat_layer(
    feats: Tensor,
    type_blocks: list[tuple[str, int, int]],
    edge_src: np.ndarray,
    edge_dst: np.ndarray,
    edge_type: np.ndarray,
    store: ParamStore,
    prefix: str,
    params: GatLayerParams,
) -> Tensor:
    """One heterogeneous multi-head attention layer over typed nodes and edges.

    Scores are leaky_relu(a_src . Wh_u + a_dst . Wh_v) with per-edge-type
    attention vectors, normalized by softmax over each destination's
    incoming edges (edges must arrive sorted by (dst, src) so destinations
    form contiguous runs), then aggregated and passed through tanh.
    """
    n_nodes = feats.shape[0]
    edge_src = np.asarray(edge_src, dtype=np.int64)
    edge_dst = np.asarray(edge_dst, dtype=np.int64)
    edge_type = np.asarray(edge_type, dtype=np.int64)
    if len(edge_src) == 0:
        raise ValueError("graph has no edges")
    if edge_src.min() < 0 or edge_src.max() >= n_nodes or edge_dst.min() < 0 or edge_dst.max() >= n_nodes:
        raise ValueError("edge endpoint out of range (dangling edge)")
    order = np.lexsort((edge_src, edge_dst))
    if not np.array_equal(order, np.arange(len(order))):
        raise ValueError("edges must be sorted by (dst, src)")
    if edge_type.min() < 0 or edge_type.max() >= len(params.edge_types):
        raise ValueError("edge type index out of range")

    h, d = params.heads, params.head_dim
    covered = sorted((start, stop, name) for name, start, stop in type_blocks)
    if covered[0][0] != 0 or covered[-1][1] != n_nodes or any(
        a[1] != b[0] for a, b in zip(covered, covered[1:])
    ):
        raise ValueError("type blocks must partition the node rows")
    projected_blocks = []
    for start, stop, name in covered:
        if name not in params.node_types:
            raise ValueError(f"unknown node type {name!r}")
        w = store.param(f"{prefix}.proj.{name}", (params.in_dim, h * d))
        projected_blocks.append(T.matmul(feats[start:stop], w))
    proj = T.reshape(T.concat(projected_blocks, axis=0), (n_nodes, h, d))

    att_src = store.param(f"{prefix}.att_src", (len(params.edge_types), h, d))
    att_dst = store.param(f"{prefix}.att_dst", (len(params.edge_types), h, d))
    src_proj = T.gather(proj, edge_src)
    dst_proj = T.gather(proj, edge_dst)
    scores = T.add(
        T.tensor_sum(T.mul(src_proj, T.gather(att_src, edge_type)), axis=2),
        T.tensor_sum(T.mul(dst_proj, T.gather(att_dst, edge_type)), axis=2),
    )
    alpha = T.segment_softmax(T.leaky_relu(scores, 0.2), edge_dst)
    messages = T.mul(T.reshape(alpha, (len(edge_src), h, 1)), src_proj)
    mixed = T.segment_sum(messages, edge_dst, n_nodes)
    if params.average_heads:
        combined = T.tensor_mean(mixed, axis=1)
    else:
        combined = T.reshape(mixed, (n_nodes, h * d))
    return T.tanh(combined)

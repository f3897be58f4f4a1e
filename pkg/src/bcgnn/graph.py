"""Backbone convolutions and boundary-content graph construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import content_positions, interp_content
from .tensor import ParamStore, ShapeError, Tensor


@dataclass
class BoundaryContentGraph:
    start_nodes: Tensor  # [l_w, D_g]
    end_nodes: Tensor  # [l_w, D_g]
    edges: np.ndarray  # [E, 2] int, (i, j) sorted
    edge_features: Tensor  # [E, D_g]

    @property
    def starts(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def ends(self) -> np.ndarray:
        return self.edges[:, 1]

    @property
    def num_nodes(self) -> int:
        return self.start_nodes.shape[0]


def build_edge_set(l_w: int, d_max: int) -> np.ndarray:
    """All ``(i, j)`` with ``0 <= i < j <= l_w - 1`` and ``j - i <= d_max``, lexicographic."""
    if l_w < 2 or d_max < 1:
        raise ValueError(f"need l_w >= 2 and d_max >= 1, got l_w={l_w}, d_max={d_max}")
    i, j = np.triu_indices(l_w, k=1)
    keep = (j - i) <= d_max
    return np.stack([i[keep], j[keep]], axis=1).astype(np.intp)


def edge_count(l_w: int, d_max: int) -> int:
    d = min(d_max, l_w - 1)
    return d * l_w - d * (d + 1) // 2


def _conv_relu(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    return T.relu(T.conv1d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"]))


def base_forward(f_i: Tensor, params: ParamStore) -> Tensor:
    """F_b = relu(conv2(relu(conv1(F_i))))."""
    w = params["base.conv1.weight"]
    if f_i.ndim != 2 or f_i.shape[0] != w.shape[1]:
        raise ShapeError(f"base_forward: input {f_i.shape} does not match D_i={w.shape[1]}")
    return _conv_relu(_conv_relu(f_i, params, "base.conv1"), params, "base.conv2")


def gcm_branches(f_b: Tensor, params: ParamStore) -> tuple[Tensor, Tensor, Tensor]:
    return (
        _conv_relu(f_b, params, "gcm.start"),
        _conv_relu(f_b, params, "gcm.end"),
        _conv_relu(f_b, params, "gcm.content"),
    )


def edge_content_feature(f_c: Tensor, i: int, j: int, params: ParamStore, n: int) -> Tensor:
    """Content feature of one edge: relu(fc1(flatten(interp(F_c, i..j))))."""
    sampled = interp_content(f_c, i, j, n)
    flat = T.reshape(sampled, (sampled.shape[0] * n,))
    return T.relu(T.matmul(params["gcm.fc1.weight"], flat) + params["gcm.fc1.bias"])


def edge_content_features(f_c: Tensor, edges: np.ndarray, params: ParamStore, n: int) -> Tensor:
    """Batched ``edge_content_feature`` over all edges -> ``[E, D_g]``."""
    d_c = f_c.shape[0]
    e = len(edges)
    pos = np.concatenate([content_positions(i, j, n) for i, j in edges]) if e else np.zeros(0)
    sampled = T.interp_gather(f_c, pos)  # [D_c, E*N]
    per_edge = T.transpose(T.reshape(sampled, (d_c, e, n)), (1, 0, 2))
    flat = T.reshape(per_edge, (e, d_c * n))
    return T.relu(T.matmul(flat, T.transpose(params["gcm.fc1.weight"])) + params["gcm.fc1.bias"])


def build_graph(f_i: Tensor, params: ParamStore, edges: np.ndarray, n: int) -> BoundaryContentGraph:
    f_b = base_forward(f_i, params)
    f_s, f_e, f_c = gcm_branches(f_b, params)
    return BoundaryContentGraph(
        start_nodes=T.transpose(f_s),
        end_nodes=T.transpose(f_e),
        edges=edges,
        edge_features=edge_content_features(f_c, edges, params, n),
    )

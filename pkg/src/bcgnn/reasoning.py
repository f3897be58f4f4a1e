"""Graph reasoning: directed edge split, edge update, edge normalization, node convolution.

Node state is a pair ``(start, end)`` of ``[l_w, D_g]`` tensors. A start->end edge
(i, j) has head start node i and tail end node j; the end->start edge reverses it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import BoundaryContentGraph
from .tensor import NumericError, ParamStore, ShapeError, Tensor

NORM_EPS = 1e-6

Nodes = tuple[Tensor, Tensor]


@dataclass
class DirectedEdgeSet:
    pairs: np.ndarray  # [E, 2]
    s2e: Tensor  # [E, D_g]
    e2s: Tensor  # [E, D_g]; the same object as s2e when undirected

    @property
    def directed(self) -> bool:
        return self.s2e is not self.e2s


def split_directed(g: BoundaryContentGraph, directed: bool = True) -> DirectedEdgeSet:
    """Both directions start from the undirected content feature."""
    f = g.edge_features
    return DirectedEdgeSet(g.edges, f, f if not directed else T.mul(f, 1.0))


def _check_square(theta: Tensor, d: int, name: str) -> None:
    if theta.shape != (d, d):
        raise ShapeError(f"{name}: expected [{d}, {d}] matrix, got {theta.shape}")


def edge_update(nodes: Nodes, edges: DirectedEdgeSet, theta_s2e: Tensor, theta_e2s: Tensor | None = None) -> DirectedEdgeSet:
    """relu(theta x (d * f_s,i * f_e,j) + d) for both directions.

    With an undirected edge set, ``theta_s2e`` is the shared matrix and
    ``theta_e2s`` is ignored.
    """
    start, end = nodes
    d_g = start.shape[1]
    if edges.s2e.shape[1] != d_g or end.shape[1] != d_g:
        raise ShapeError(f"edge_update: edge dim {edges.s2e.shape[1]} / node dims {start.shape[1]}, {end.shape[1]} disagree")
    _check_square(theta_s2e, d_g, "theta_s2e")
    ii, jj = edges.pairs[:, 0], edges.pairs[:, 1]
    both = T.mul(T.take(start, ii), T.take(end, jj))

    def step(d: Tensor, theta: Tensor) -> Tensor:
        return T.relu(T.matmul(T.mul(d, both), T.transpose(theta)) + d)

    new_s2e = step(edges.s2e, theta_s2e)
    if not edges.directed:
        return DirectedEdgeSet(edges.pairs, new_s2e, new_s2e)
    if theta_e2s is None:
        raise ShapeError("edge_update: directed edges need theta_e2s")
    _check_square(theta_e2s, d_g, "theta_e2s")
    return DirectedEdgeSet(edges.pairs, new_s2e, step(edges.e2s, theta_e2s))


def _normalize(values: Tensor, heads: np.ndarray, num_heads: int, eps: float) -> Tensor:
    if np.any(values.data < 0):
        raise NumericError("normalize_edges: negative edge entry; edge features must be nonnegative")
    totals = T.take(T.segment_sum(values, heads, num_heads), heads)
    # max(total, eps): heads with real mass sum to exactly 1, empty heads stay 0
    live = (totals.data >= eps).astype(totals.data.dtype)
    return T.div(values, T.mul(totals, live) + eps * (1 - live))


def normalize_edges(edges: DirectedEdgeSet, num_nodes: int, eps: float = NORM_EPS) -> DirectedEdgeSet:
    """Per head node and feature dimension, divide by max(sum over that head's outgoing edges, eps).

    s2e edges are grouped by their start node, e2s edges by their end node.
    """
    ii, jj = edges.pairs[:, 0], edges.pairs[:, 1]
    s2e = _normalize(edges.s2e, ii, num_nodes, eps)
    e2s = _normalize(edges.e2s, jj, num_nodes, eps)
    return DirectedEdgeSet(edges.pairs, s2e, e2s)


def node_update(nodes: Nodes, norm_edges: DirectedEdgeSet, theta_start: Tensor, theta_end: Tensor) -> Nodes:
    """n_t <- relu(theta_node x sum_h (e_(h,t) * n_h) + n_t).

    End nodes gather from start nodes over s2e edges (theta_end); start nodes
    gather from end nodes over e2s edges (theta_start). A node with no incoming
    edge gets relu(n_t).
    """
    start, end = nodes
    d_g = start.shape[1]
    _check_square(theta_start, d_g, "theta_start")
    _check_square(theta_end, d_g, "theta_end")
    ii, jj = norm_edges.pairs[:, 0], norm_edges.pairs[:, 1]
    n_start, n_end = start.shape[0], end.shape[0]
    to_end = T.segment_sum(T.mul(norm_edges.s2e, T.take(start, ii)), jj, n_end)
    to_start = T.segment_sum(T.mul(norm_edges.e2s, T.take(end, jj)), ii, n_start)
    new_end = T.relu(T.matmul(to_end, T.transpose(theta_end)) + end)
    new_start = T.relu(T.matmul(to_start, T.transpose(theta_start)) + start)
    return new_start, new_end


def cosine_edges(nodes: Nodes, pairs: np.ndarray, eps: float = 1e-8) -> Tensor:
    """Scalar GCN-style edge weights relu(cos(f_s,i, f_e,j)) as an ``[E, 1]`` tensor."""
    start, end = nodes
    a = T.take(start, pairs[:, 0])
    b = T.take(end, pairs[:, 1])
    dot = T.sum(T.mul(a, b), axis=1, keepdims=True)
    na = T.sqrt(T.sum(T.mul(a, a), axis=1, keepdims=True) + eps)
    nb = T.sqrt(T.sum(T.mul(b, b), axis=1, keepdims=True) + eps)
    return T.relu(T.div(dot, T.mul(na, nb)))


def grb(
    nodes: Nodes,
    edges: DirectedEdgeSet,
    params: ParamStore,
    prefix: str,
    edge_updating: bool = True,
    gcn_baseline: bool = False,
) -> tuple[Nodes, DirectedEdgeSet]:
    """One reasoning block. Returns updated nodes and the (unnormalized) updated edges."""
    num_nodes = nodes[0].shape[0]
    if gcn_baseline:
        w = cosine_edges(nodes, edges.pairs)
        weights = normalize_edges(DirectedEdgeSet(edges.pairs, w, w), num_nodes)
        new_nodes = node_update(nodes, weights, params[f"{prefix}.theta_start"], params[f"{prefix}.theta_end"])
        return new_nodes, edges
    if edge_updating:
        theta_e2s = params[f"{prefix}.theta_e2s"] if edges.directed else None
        edges = edge_update(nodes, edges, params[f"{prefix}.theta_s2e"], theta_e2s)
    weights = normalize_edges(edges, num_nodes)
    new_nodes = node_update(nodes, weights, params[f"{prefix}.theta_start"], params[f"{prefix}.theta_end"])
    return new_nodes, edges


def grm(
    nodes: Nodes,
    edges: DirectedEdgeSet,
    params: ParamStore,
    edge_updating: bool = True,
    gcn_baseline: bool = False,
    blocks: int = 2,
) -> tuple[Nodes, DirectedEdgeSet]:
    for b in range(blocks):
        nodes, edges = grb(nodes, edges, params, f"grm.block{b}", edge_updating, gcn_baseline)
    return nodes, edges

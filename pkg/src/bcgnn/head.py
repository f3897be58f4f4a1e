"""Output module: boundary probabilities and content confidence per edge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .reasoning import DirectedEdgeSet, Nodes
from .tensor import ParamStore, ShapeError, Tensor


@dataclass(frozen=True)
class CandidateProposal:
    t_s: int
    t_e: int
    p_s: float
    p_e: float
    p_c: float


@dataclass
class HeadOutput:
    """Differentiable head outputs; ``start_prob[i]`` is shared by every edge starting at i."""

    pairs: np.ndarray
    start_prob: Tensor  # [l_w]
    end_prob: Tensor  # [l_w]
    content_prob: Tensor  # [E]

    def proposals(self) -> list[CandidateProposal]:
        ps, pe, pc = self.start_prob.data, self.end_prob.data, self.content_prob.data
        return [
            CandidateProposal(int(i), int(j), float(ps[i]), float(pe[j]), float(pc[k]))
            for k, (i, j) in enumerate(self.pairs)
        ]


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"output head: feature dim {x.shape[-1]} != weight length {weight.shape[0]}")
    return T.sigmoid(T.matmul(x, weight) + bias)


def score_heads(nodes: Nodes, edges: DirectedEdgeSet, params: ParamStore) -> HeadOutput:
    start, end = nodes
    p_s = _linear(start, params["head.start.weight"], params["head.start.bias"])
    p_e = _linear(end, params["head.end.weight"], params["head.end.bias"])
    both = T.concat([edges.s2e, edges.e2s], axis=1)
    p_c = _linear(both, params["head.content.weight"], params["head.content.bias"])
    return HeadOutput(edges.pairs, p_s, p_e, p_c)


def score_candidates(nodes: Nodes, edges: DirectedEdgeSet, params: ParamStore) -> list[CandidateProposal]:
    return score_heads(nodes, edges, params).proposals()

"""Boundary-content graph network: parameter layout and the full forward pass for one window."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import build_edge_set, build_graph
from .head import HeadOutput, score_heads
from .reasoning import grm, split_directed
from .tensor import ParamStore, ShapeError, Tensor


@dataclass
class ModelConfig:
    d_i: int = 8
    d_b: int = 32
    d_g: int = 32
    d_c: int = 32
    l_w: int = 32
    d_max: int = 0  # 0 means l_w - 1 (no duration cap)
    n_samples: int = 16
    kernel: int = 3
    directed: bool = True
    edge_update: bool = True
    gcn_baseline: bool = False

    @property
    def max_duration(self) -> int:
        return self.d_max if self.d_max > 0 else self.l_w - 1

    def validate(self) -> None:
        for name in ("d_i", "d_b", "d_g", "d_c"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.l_w < 2:
            raise ValueError("l_w must be >= 2")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be a positive odd integer")

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Seeded uniform(+-1/sqrt(fan_in)) initialization of every trainable tensor."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    p = ParamStore()
    k = cfg.kernel

    def conv(name: str, d_out: int, d_in: int):
        p.init_uniform(f"{name}.weight", (d_out, d_in, k), d_in * k, rng)
        p.init_uniform(f"{name}.bias", (d_out,), d_in * k, rng)

    conv("base.conv1", cfg.d_b, cfg.d_i)
    conv("base.conv2", cfg.d_b, cfg.d_b)
    conv("gcm.start", cfg.d_g, cfg.d_b)
    conv("gcm.end", cfg.d_g, cfg.d_b)
    conv("gcm.content", cfg.d_c, cfg.d_b)
    fan = cfg.d_c * cfg.n_samples
    p.init_uniform("gcm.fc1.weight", (cfg.d_g, fan), fan, rng)
    p.init_uniform("gcm.fc1.bias", (cfg.d_g,), fan, rng)

    for b in range(2):
        pre = f"grm.block{b}"
        if cfg.edge_update and not cfg.gcn_baseline:
            p.init_uniform(f"{pre}.theta_s2e", (cfg.d_g, cfg.d_g), cfg.d_g, rng)
            if cfg.directed:
                p.init_uniform(f"{pre}.theta_e2s", (cfg.d_g, cfg.d_g), cfg.d_g, rng)
        p.init_uniform(f"{pre}.theta_start", (cfg.d_g, cfg.d_g), cfg.d_g, rng)
        p.init_uniform(f"{pre}.theta_end", (cfg.d_g, cfg.d_g), cfg.d_g, rng)

    p.init_uniform("head.start.weight", (cfg.d_g,), cfg.d_g, rng)
    p.init_uniform("head.start.bias", (), cfg.d_g, rng)
    p.init_uniform("head.end.weight", (cfg.d_g,), cfg.d_g, rng)
    p.init_uniform("head.end.bias", (), cfg.d_g, rng)
    p.init_uniform("head.content.weight", (2 * cfg.d_g,), 2 * cfg.d_g, rng)
    p.init_uniform("head.content.bias", (), 2 * cfg.d_g, rng)
    return p


class BCGNN:
    """Forward pass over one observation window ``[D_i, l_w]``."""

    def __init__(self, cfg: ModelConfig, params: ParamStore | None = None, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self.edges = build_edge_set(cfg.l_w, cfg.max_duration)

    def forward(self, features) -> HeadOutput:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.shape != (self.cfg.d_i, self.cfg.l_w):
            raise ShapeError(f"window features {x.shape} != expected ({self.cfg.d_i}, {self.cfg.l_w})")
        g = build_graph(x, self.params, self.edges, self.cfg.n_samples)
        directed = self.cfg.directed and not self.cfg.gcn_baseline
        edges = split_directed(g, directed=directed)
        nodes, edges = grm(
            (g.start_nodes, g.end_nodes),
            edges,
            self.params,
            edge_updating=self.cfg.edge_update,
            gcn_baseline=self.cfg.gcn_baseline,
        )
        return score_heads(nodes, edges, self.params)

    __call__ = forward

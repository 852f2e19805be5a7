"""Finite-difference check of the full training loss."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tape as tp
from .graph import TRAINABLE, GraphConfig, fixed_adjacency
from .loss import kmax_bce_logits
from .model import ModelConfig, ModelParams, branch_configs, forward, init_params


@dataclass
class GradcheckConfig:
    T: int = 8
    D: int = 16
    dims: list = field(default_factory=lambda: [16, 8, 4, 1])
    graph: GraphConfig = field(default_factory=lambda: GraphConfig(embed_dim=16))
    residual: bool = True
    dropout: float = 0.6


def _fixed_graphs(params: ModelParams, batch):
    # csim_a/jsim_a are gradient-stopped, so finite differences must see them frozen too
    if params.config.graph.variant in TRAINABLE or not params.config.graph.uses_feature_graph:
        return [None] * len(batch)
    variant = params.config.graph.variant
    return [fixed_adjacency(forward(x, params, debug=True).intermediates[0], variant) for x, _ in batch]


def _loss_fn(cfg: ModelConfig, batch, seed, fixed):
    def loss_fn(tape, arrays):
        params = ModelParams(cfg, arrays)
        total = None
        for j, (x, y) in enumerate(batch):
            rng = np.random.default_rng([seed, j])
            out = forward(x, params, training=True, rng=rng, tape=tape, feature_adjacency=fixed[j])
            term = tp.scale(kmax_bce_logits(out.logits, y).node, 1.0 / len(batch))
            total = term if total is None else tp.add(total, term)
        return total

    return loss_fn


def gradcheck(config: GradcheckConfig = None, seed: int = 0, tolerance: float = 1e-4, h: float = 1e-6) -> tp.GradReport:
    """Check tape gradients of the k-max loss on one normal and one abnormal random video.

    Runs in double precision with dropout active (masks fixed by ``seed``).
    Late fusion checks both branches; their entries are prefixed by mode.
    """
    config = config or GradcheckConfig()
    mcfg = ModelConfig(
        input_dim=config.D,
        dims=list(config.dims),
        graph=replace(config.graph),
        residual=config.residual,
        dropout=config.dropout,
        T=config.T,
        precision="double",
    ).validate()
    rng = np.random.default_rng(seed)
    batch = [(rng.standard_normal((config.T, config.D)), y) for y in (0, 1)]
    rel, absolute = {}, {}
    branches = branch_configs(mcfg)
    for bcfg in branches:
        params = init_params(bcfg, seed)
        fixed = _fixed_graphs(params, batch)
        rep = tp.check_gradients(_loss_fn(bcfg, batch, seed, fixed), params.arrays, tolerance, h)
        prefix = f"{bcfg.graph.mode}/" if len(branches) > 1 else ""
        rel.update({prefix + k: v for k, v in rep.max_rel_error.items()})
        absolute.update({prefix + k: v for k, v in rep.max_abs_error.items()})
    return tp.GradReport(rel, absolute, tolerance)

"""Stochastic graph views: feature-dimension masking and edge dropping.

Randomness comes from Philox generators keyed by (root seed, epoch, stream),
so each epoch's pair of views is reproducible from one root seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AttributedGraph, ConfigError, Edge


@dataclass(frozen=True)
class AugmentConfig:
    p_v: float = 0.1
    p_e: float = 0.2
    seed: int = 0

    def __post_init__(self):
        _check_prob("p_v", self.p_v)
        _check_prob("p_e", self.p_e)


def _check_prob(name: str, p: float) -> None:
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"{name} must lie in [0, 1], got {p}")


def stream(root_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a position in the (seed, epoch, view, ...) tree."""
    ss = np.random.SeedSequence([int(root_seed), *map(int, path)])
    return np.random.Generator(np.random.Philox(ss))


def mask_attributes(x: np.ndarray, p_v: float, rng: np.random.Generator) -> np.ndarray:
    """Zero whole feature columns; one Bernoulli(1 - p_v) mask shared by every node."""
    _check_prob("p_v", p_v)
    keep = rng.random(x.shape[1]) >= p_v
    return x * keep[None, :]


def drop_edges(edges: tuple[Edge, ...], p_e: float, rng: np.random.Generator) -> tuple[Edge, ...]:
    _check_prob("p_e", p_e)
    if not edges:
        return ()
    keep = rng.random(len(edges)) >= p_e
    return tuple(e for e, k in zip(edges, keep) if k)


def augment_view(g: AttributedGraph, cfg: AugmentConfig, rng: np.random.Generator) -> tuple[np.ndarray, tuple[Edge, ...]]:
    """One draw t ~ T: (masked features, surviving edges).

    Mask and edge draws use separate child generators so changing p_v never
    shifts which edges survive.
    """
    mask_rng, edge_rng = rng.spawn(2)
    return mask_attributes(g.features, cfg.p_v, mask_rng), drop_edges(g.edges, cfg.p_e, edge_rng)

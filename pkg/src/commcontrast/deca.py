"""Dense community aggregation: similarities, soft assignments and density objectives.

Community densities d(k) need a discrete partition, so they are always taken
from the hard (argmax) assignment of the current step and enter the
differentiable loss as constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import ndtensor as nd
from .graph import ConfigError
from .ndtensor import NumericError, Tensor

logger = logging.getLogger(__name__)

SimilarityName = Literal["cosine", "rbf"]


@dataclass(frozen=True)
class Similarity:
    """Exponent-cosine (``cosine``) or Gaussian RBF (``rbf``) similarity with sensitivity tau."""

    kind: SimilarityName = "cosine"
    tau: float = 0.4

    def __post_init__(self):
        if self.kind not in ("cosine", "rbf"):
            raise ConfigError(f"unknown similarity kind {self.kind!r}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


def similarity(x1, x2, sim: Similarity) -> float:
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x1.shape != x2.shape:
        raise nd.DimensionError(f"similarity: vectors of length {x1.size} and {x2.size}")
    if sim.kind == "cosine":
        n1, n2 = np.linalg.norm(x1), np.linalg.norm(x2)
        if n1 == 0 or n2 == 0:
            raise NumericError("cosine similarity is undefined for a zero vector")
        return float(np.exp(x1 @ x2 / (n1 * n2) / sim.tau))
    return float(np.exp(-np.sum((x1 - x2) ** 2) / sim.tau**2))


def pairwise_sq_dist(x: Tensor, y: Tensor) -> Tensor:
    """||x_i - y_j||^2 as an N x M tensor."""
    return nd.row_sq_norm(x) + nd.transpose(nd.row_sq_norm(y)) - nd.scale(x @ nd.transpose(y), 2.0)


def _check_nonzero_rows(t: Tensor, what: str) -> None:
    if np.any(np.all(t.data == 0.0, axis=1)):
        raise NumericError(f"cosine similarity is undefined: {what} has an all-zero row")


def log_similarity(x: Tensor, y: Tensor, sim: Similarity) -> Tensor:
    """log delta(x_i, y_j) for every pair, N x M."""
    x, y = nd._wrap(x), nd._wrap(y)
    if x.shape[1] != y.shape[1]:
        raise nd.DimensionError(f"similarity: row dimensions differ, {x.shape} vs {y.shape}")
    if sim.kind == "cosine":
        _check_nonzero_rows(x, "left operand")
        _check_nonzero_rows(y, "right operand")
        cos = nd.l2_normalize_rows(x) @ nd.transpose(nd.l2_normalize_rows(y))
        return nd.scale(cos, 1.0 / sim.tau)
    return nd.scale(pairwise_sq_dist(x, y), -1.0 / sim.tau**2)


def assignment_matrix(z: Tensor, centroids: Tensor, sim: Similarity) -> Tensor:
    """Row-normalized similarities to every centroid; rows sum to one.

    Computed as a softmax over log-similarities, which equals delta / sum(delta)
    without underflow for far-away RBF centroids.
    """
    return nd.softmax_rows(log_similarity(z, centroids, sim))


def hard_assignment(r) -> np.ndarray:
    """argmax per row; ties go to the lowest community index."""
    r = r.data if isinstance(r, Tensor) else np.asarray(r)
    return np.argmax(r, axis=1)


def edge_density(adj: np.ndarray, hard: np.ndarray, k: int) -> float:
    """Ordered nonzero entries inside community k over |C_k|(|C_k| - 1); 0 for |C_k| <= 1."""
    members = np.flatnonzero(np.asarray(hard) == k)
    size = members.size
    if size <= 1:
        return 0.0
    sub = adj[np.ix_(members, members)]
    return float(np.count_nonzero(sub)) / (size * (size - 1))


def community_densities(adj: np.ndarray, hard: np.ndarray, num_communities: int) -> np.ndarray:
    hard = np.asarray(hard)
    dens = np.array([edge_density(adj, hard, k) for k in range(num_communities)])
    empty = [k for k in range(num_communities) if not np.any(hard == k)]
    if empty:
        logger.debug("empty communities: %s", empty)
    return dens


def intra_density_naive(adj: np.ndarray, r: np.ndarray, hard: np.ndarray) -> float:
    """Intra-community density by explicit summation over (i, j, k)."""
    r = np.asarray(r)
    n, num_k = r.shape
    dens = community_densities(adj, hard, num_k)
    total = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(num_k):
                total += (adj[i, j] - dens[k]) * r[i, k] * r[j, k]
    return total / n


def inter_density_naive(adj: np.ndarray, r: np.ndarray) -> float:
    """Inter-community density by explicit summation over (i, j, k1 != k2)."""
    r = np.asarray(r)
    n, num_k = r.shape
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(n):
            if adj[i, j] == 0:
                continue
            for k1 in range(num_k):
                for k2 in range(num_k):
                    if k1 != k2:
                        total += adj[i, j] * r[i, k1] * r[j, k2]
    return total / (n * (n - 1))


Extension = Literal["ones", "identity"]


def extended_adjacency(adj: np.ndarray, max_density: float, extension: Extension = "ones") -> np.ndarray:
    """A minus the largest community density.

    ``ones`` subtracts it from every entry, which makes the resulting intra term
    a lower bound of the naive one. ``identity`` subtracts it from the diagonal
    only; kept for comparison, it is not a lower bound in general.
    """
    n = adj.shape[0]
    if extension == "ones":
        return adj - max_density * np.ones((n, n))
    if extension == "identity":
        return adj - max_density * np.eye(n)
    raise ConfigError(f"unknown extension {extension!r}")


def deca_terms(adj: np.ndarray, r: Tensor, hard: np.ndarray | None = None, extension: Extension = "ones") -> tuple[Tensor, Tensor]:
    """Vectorized (inter density, intra lower bound) via the community density matrices."""
    r = nd._wrap(r)
    n, num_k = r.shape
    if hard is None:
        hard = hard_assignment(r)
    max_d = float(community_densities(adj, hard, num_k).max()) if num_k else 0.0
    f = nd.transpose(r) @ (Tensor(adj) @ r)
    f_ext = nd.transpose(r) @ (Tensor(extended_adjacency(adj, max_d, extension)) @ r)
    if n >= 2:
        inter = nd.scale(nd.sub(nd.sum(f), nd.trace(f)), 1.0 / (n * (n - 1)))
    else:
        inter = nd.scale(nd.trace(f), 0.0)
    intra = nd.scale(nd.trace(f_ext), 1.0 / n)
    return inter, intra


def deca_loss(adj: np.ndarray, r: Tensor, hard: np.ndarray | None = None, lambda_w: float = 1.0, extension: Extension = "ones") -> Tensor:
    """lambda_w * D_inter - D_intra (vectorized, with the lower-bound intra term)."""
    if lambda_w < 0:
        raise ConfigError(f"lambda_w must be non-negative, got {lambda_w}")
    inter, intra = deca_terms(adj, r, hard, extension)
    return nd.sub(nd.scale(inter, lambda_w), intra)


def deca_loss_two_views(r1: Tensor, r2: Tensor, adj1: np.ndarray, adj2: np.ndarray, lambda_w: float = 1.0, extension: Extension = "ones") -> Tensor:
    l1 = deca_loss(adj1, r1, None, lambda_w, extension)
    l2 = deca_loss(adj2, r2, None, lambda_w, extension)
    return nd.scale(nd.add(l1, l2), 0.5)


def modularity(adj: np.ndarray, hard) -> float:
    adj = np.asarray(adj, dtype=np.float64)
    two_m = adj.sum()
    if two_m == 0:
        raise ValueError("modularity is undefined for a graph without edges")
    deg = adj.sum(axis=1)
    hard = np.asarray(hard)
    same = hard[:, None] == hard[None, :]
    return float(((adj - np.outer(deg, deg) / two_m) * same).sum() / two_m)

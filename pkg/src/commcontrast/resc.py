"""Contrastive objectives (node, reweighted community cross-contrast), alpha-decay
combination, and the single-view and multiplex training loops."""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import ndtensor as nd
from .augment import AugmentConfig, augment_view, stream
from .deca import (
    Similarity,
    assignment_matrix,
    community_densities,
    deca_loss,
    hard_assignment,
    log_similarity,
    pairwise_sq_dist,
)
from .encoder import EncoderDims, encode, glorot, init_params, project
from .graph import AttributedGraph, ConfigError, MultiplexGraph, adjacency_matrix, normalized_adjacency
from .ndtensor import NumericError, Tensor

logger = logging.getLogger(__name__)

LOSS_TERMS = ("node", "deca", "com")


@dataclass
class TrainConfig:
    """Every training and evaluation knob. Keys double as the config-file schema."""

    epochs: int = 300
    hidden_dim: int = 128
    representation_dim: int = 64
    learning_rate: float = 0.01
    activation: str = "prelu"
    eta: float = 500.0
    tau: float = 0.4
    lambda_w: float = 1.0
    gamma: float = 8e-5
    p_v: float = 0.1
    p_e: float = 0.2
    num_communities: int | None = None
    similarity: str = "cosine"
    seed: int = 0
    train_fraction: float = 0.1
    eval_seeds: int = 5
    loss_terms: list[str] = field(default_factory=lambda: list(LOSS_TERMS))
    alpha_fixed: float | None = None
    view_pairs: str = "unordered"
    extension: str = "ones"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.lambda_w < 0:
            raise ConfigError("lambda_w must be non-negative")
        for name in ("p_v", "p_e"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.num_communities is not None and self.num_communities < 1:
            raise ConfigError("num_communities must be >= 1")
        if self.eval_seeds < 1:
            raise ConfigError("eval_seeds must be >= 1")
        bad = [t for t in self.loss_terms if t not in LOSS_TERMS]
        if bad or not self.loss_terms:
            raise ConfigError(f"loss_terms must be a non-empty subset of {LOSS_TERMS}, got {self.loss_terms}")
        if self.alpha_fixed is not None and not 0.0 <= self.alpha_fixed <= 1.0:
            raise ConfigError("alpha_fixed must lie in [0, 1]")
        if self.view_pairs not in ("unordered", "ordered"):
            raise ConfigError("view_pairs must be 'unordered' or 'ordered'")
        if self.extension not in ("ones", "identity"):
            raise ConfigError("extension must be 'ones' or 'identity'")
        Similarity(self.similarity, self.tau)  # type: ignore[arg-type]
        EncoderDims(1, self.hidden_dim, self.representation_dim, self.activation)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def sim(self) -> Similarity:
        return Similarity(self.similarity, self.tau)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# objectives


def info_nce(z1: Tensor, z2: Tensor, sim: Similarity) -> Tensor:
    """-(1/N) sum_i log[delta(z1_i, z2_i) / sum_j delta(z1_i, z2_j)]."""
    s = log_similarity(z1, z2, sim)
    return nd.neg(nd.mean(nd.sub(nd.diag(s), nd.logsumexp_rows(s))))


def node_contrast_loss(z1: Tensor, z2: Tensor, sim: Similarity) -> Tensor:
    """Symmetric cross-view InfoNCE; negatives come from the other view only."""
    z1, z2 = nd._wrap(z1), nd._wrap(z2)
    if z1.shape != z2.shape:
        raise nd.DimensionError(f"node contrast: views have shapes {z1.shape} and {z2.shape}")
    s = log_similarity(z1, z2, sim)
    pos = nd.diag(s)
    i12 = nd.neg(nd.mean(nd.sub(pos, nd.logsumexp_rows(s))))
    i21 = nd.neg(nd.mean(nd.sub(pos, nd.logsumexp_rows(nd.transpose(s)))))
    return nd.scale(nd.add(i12, i21), 0.5)


def rbf_weight(z, phi, gamma: float) -> float:
    z = np.asarray(z, dtype=np.float64).ravel()
    phi = np.asarray(phi, dtype=np.float64).ravel()
    return float(np.exp(-gamma * np.sum((z - phi) ** 2)))


def community_contrast(z: Tensor, centroids: Tensor, sim: Similarity, gamma: float) -> Tensor:
    """One direction of the community cross-contrast.

    Node i's positive is its most similar centroid k_i; every other centroid is
    a negative scaled by exp(-gamma ||z_i - phi_k||^2). The log-weight is added
    to the log-similarity so the denominator is a single logsumexp.
    """
    z, centroids = nd._wrap(z), nd._wrap(centroids)
    num_k = centroids.shape[0]
    if num_k == 1:
        logger.warning("community contrast with a single community has no negatives; loss is 0")
        return nd.scale(nd.sum(z), 0.0)
    logs = log_similarity(z, centroids, sim)
    k_i = np.argmax(logs.data, axis=1)
    onehot = np.zeros(logs.shape)
    onehot[np.arange(logs.shape[0]), k_i] = 1.0
    log_w = nd.mul(nd.scale(pairwise_sq_dist(z, centroids), -gamma), Tensor(1.0 - onehot))
    pos = nd.row_sum(nd.mul(logs, Tensor(onehot)))
    return nd.neg(nd.mean(nd.sub(pos, nd.logsumexp_rows(nd.add(logs, log_w)))))


def community_contrast_loss(z1: Tensor, z2: Tensor, phi1: Tensor, phi2: Tensor, sim: Similarity, gamma: float) -> Tensor:
    """Each view's nodes against the other view's centroids, averaged."""
    return nd.scale(nd.add(community_contrast(z1, phi2, sim, gamma), community_contrast(z2, phi1, sim, gamma)), 0.5)


def alpha(t: float, eta: float) -> float:
    if eta <= 0:
        raise ConfigError("eta must be positive")
    if t < 0:
        raise ConfigError("t must be non-negative")
    return math.exp(-t / eta)


def joint_loss(l_node: Tensor, l_deca: Tensor, l_com: Tensor, t: float, eta: float, *, terms: Iterable[str] = LOSS_TERMS, alpha_value: float | None = None) -> Tensor:
    """L_node + a L_DeCA + (1 - a) L_com, with a = exp(-t / eta) unless pinned.

    Terms missing from ``terms`` get weight zero.
    """
    a = alpha(t, eta) if alpha_value is None else alpha_value
    terms = set(terms)
    w_node = 1.0 if "node" in terms else 0.0
    w_deca = a if "deca" in terms else 0.0
    w_com = (1.0 - a) if "com" in terms else 0.0
    return nd.add(nd.add(nd.scale(l_node, w_node), nd.scale(l_deca, w_deca)), nd.scale(l_com, w_com))


# ---------------------------------------------------------------------------
# training


class TrainingDiverged(NumericError):
    def __init__(self, epoch: int, components: dict[str, float]):
        super().__init__(f"non-finite loss at epoch {epoch}: {components}")
        self.epoch = epoch
        self.components = components


@dataclass
class EpochRecord:
    epoch: int
    l_node: float
    l_deca: float
    l_com: float
    alpha: float
    total: float
    ed: list[float]
    ch: list[float] | None
    wall_clock: float = 0.0

    def to_json(self, include_timing: bool = False) -> str:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: list[EpochRecord]
    num_communities: int
    algorithm: str
    pairs: list[tuple[int, int]] = field(default_factory=list)


def _num_communities(cfg: TrainConfig, num_classes: int | None) -> int:
    if cfg.num_communities is not None:
        return cfg.num_communities
    if num_classes is None:
        raise ConfigError("num_communities is required when the dataset has no labels")
    return num_classes


def init_model(in_dim: int, num_views: int, num_k: int, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Encoder/projector weights plus one K x D centroid matrix per view (phi0, phi1, ...)."""
    dims = EncoderDims(in_dim, cfg.hidden_dim, cfg.representation_dim, cfg.activation)
    params = init_params(dims, cfg.seed)
    for r in range(num_views):
        params[f"phi{r}"] = glorot(stream(cfg.seed, 0, r), num_k, cfg.representation_dim)
    return params


def _class_entropy(hard: np.ndarray, labels: np.ndarray, num_k: int) -> float:
    from .evalkit import class_entropy_score

    return class_entropy_score(hard, labels, num_k)


def _diagnostics(adj: np.ndarray, hards: list[np.ndarray], labels, num_k: int) -> tuple[list[float], list[float] | None]:
    ed = [float(community_densities(adj, h, num_k).mean()) for h in hards]
    ch = None if labels is None else [_class_entropy(h, labels, num_k) for h in hards]
    return ed, ch


class _EpochLogger:
    def __init__(self, path: str | Path | None, include_timing: bool = False):
        self.records: list[EpochRecord] = []
        self.fh = open(path, "w", encoding="utf-8", newline="\n") if path is not None else None
        self.include_timing = include_timing

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)
        if self.fh is not None:
            self.fh.write(rec.to_json(self.include_timing) + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def _check_finite(epoch: int, **components: float) -> None:
    if not all(math.isfinite(v) for v in components.values()):
        raise TrainingDiverged(epoch, components)


def _alpha_for(cfg: TrainConfig, t: int) -> float:
    return cfg.alpha_fixed if cfg.alpha_fixed is not None else alpha(t, cfg.eta)


def train_single(
    g: AttributedGraph,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Augment twice, encode, project, and step on the joint objective each epoch."""
    num_k = _num_communities(cfg, g.num_classes)
    n = g.num_nodes
    sim = cfg.sim
    aug = AugmentConfig(cfg.p_v, cfg.p_e, cfg.seed)
    params = init_model(g.features.shape[1], 2, num_k, cfg)
    state = nd.AdamState(lr=cfg.learning_rate)
    adj = g.adjacency()
    logger_ = _EpochLogger(log_path)
    try:
        for t in range(cfg.epochs):
            start = time.perf_counter()
            leaves = nd.leaves_from(params)
            projected, assigns, adjs = [], [], []
            for v in (1, 2):
                x_v, e_v = augment_view(g, aug, stream(cfg.seed, t + 1, v))
                z = encode(Tensor(x_v), normalized_adjacency(e_v, n), leaves, cfg.activation)
                p = project(z, leaves, cfg.activation)
                projected.append(p)
                assigns.append(assignment_matrix(p, leaves[f"phi{v - 1}"], sim))
                adjs.append(adjacency_matrix(e_v, n))
            l_node = node_contrast_loss(projected[0], projected[1], sim)
            l_deca = nd.scale(
                nd.add(
                    deca_loss(adjs[0], assigns[0], None, cfg.lambda_w, cfg.extension),  # type: ignore[arg-type]
                    deca_loss(adjs[1], assigns[1], None, cfg.lambda_w, cfg.extension),  # type: ignore[arg-type]
                ),
                0.5,
            )
            l_com = community_contrast_loss(projected[0], projected[1], leaves["phi0"], leaves["phi1"], sim, cfg.gamma)
            a = _alpha_for(cfg, t)
            total = joint_loss(l_node, l_deca, l_com, t, cfg.eta, terms=cfg.loss_terms, alpha_value=a)
            comps = dict(l_node=l_node.item(), l_deca=l_deca.item(), l_com=l_com.item(), total=total.item())
            _check_finite(t, **comps)
            nd.backward(total)
            params = nd.adam_step(state, params, nd.collect_grads(leaves))
            hards = [hard_assignment(r) for r in assigns]
            ed, ch = _diagnostics(adj, hards, g.labels, num_k)
            rec = EpochRecord(t, comps["l_node"], comps["l_deca"], comps["l_com"], a, comps["total"], ed, ch, time.perf_counter() - start)
            logger_.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        logger_.close()
    return TrainResult(params, logger_.records, num_k, "single", [(0, 1)])


def view_pairs(num_views: int, policy: str = "unordered") -> list[tuple[int, int]]:
    if policy == "ordered":
        return list(itertools.permutations(range(num_views), 2))
    return list(itertools.combinations(range(num_views), 2))


def train_multiplex(
    mg: MultiplexGraph,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """No augmentation; every pair of views contributes the three objectives, summed."""
    if mg.num_views < 2:
        raise ConfigError("train_multiplex needs at least 2 views; use train_single for one view")
    num_k = _num_communities(cfg, mg.num_classes)
    n = mg.num_nodes
    sim = cfg.sim
    pairs = view_pairs(mg.num_views, cfg.view_pairs)
    params = init_model(mg.features.shape[1], mg.num_views, num_k, cfg)
    state = nd.AdamState(lr=cfg.learning_rate)
    adjs = [adjacency_matrix(e, n) for e in mg.views]
    norms = [normalized_adjacency(e, n) for e in mg.views]
    x = Tensor(mg.features)
    logger_ = _EpochLogger(log_path)
    try:
        for t in range(cfg.epochs):
            start = time.perf_counter()
            leaves = nd.leaves_from(params)
            projected = [project(encode(x, a_n, leaves, cfg.activation), leaves, cfg.activation) for a_n in norms]
            assigns = [assignment_matrix(p, leaves[f"phi{r}"], sim) for r, p in enumerate(projected)]
            deca_terms = [deca_loss(adjs[r], assigns[r], None, cfg.lambda_w, cfg.extension) for r in range(mg.num_views)]  # type: ignore[arg-type]
            a = _alpha_for(cfg, t)
            totals, nodes, decas, coms = [], [], [], []
            for i, j in pairs:
                l_node = node_contrast_loss(projected[i], projected[j], sim)
                l_deca = nd.scale(nd.add(deca_terms[i], deca_terms[j]), 0.5)
                l_com = community_contrast_loss(projected[i], projected[j], leaves[f"phi{i}"], leaves[f"phi{j}"], sim, cfg.gamma)
                totals.append(joint_loss(l_node, l_deca, l_com, t, cfg.eta, terms=cfg.loss_terms, alpha_value=a))
                nodes.append(l_node.item())
                decas.append(l_deca.item())
                coms.append(l_com.item())
            total = nd.stack_sum(totals)
            comps = dict(l_node=float(np.sum(nodes)), l_deca=float(np.sum(decas)), l_com=float(np.sum(coms)), total=total.item())
            _check_finite(t, **comps)
            nd.backward(total)
            params = nd.adam_step(state, params, nd.collect_grads(leaves))
            hards = [hard_assignment(r) for r in assigns]
            ed = [float(community_densities(adjs[r], h, num_k).mean()) for r, h in enumerate(hards)]
            ch = None if mg.labels is None else [_class_entropy(h, mg.labels, num_k) for h in hards]
            rec = EpochRecord(t, comps["l_node"], comps["l_deca"], comps["l_com"], a, comps["total"], ed, ch, time.perf_counter() - start)
            logger_.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        logger_.close()
    return TrainResult(params, logger_.records, num_k, "multiplex", pairs)


def train(mg: MultiplexGraph, cfg: TrainConfig, log_path=None, on_epoch=None) -> TrainResult:
    """Route one-view datasets to the augmented loop and the rest to the multiplex loop."""
    if mg.num_views == 1:
        return train_single(mg.view(0), cfg, log_path, on_epoch)
    return train_multiplex(mg, cfg, log_path, on_epoch)


# ---------------------------------------------------------------------------
# inference helpers


def embed(g: AttributedGraph, params: dict[str, np.ndarray], cfg: TrainConfig) -> np.ndarray:
    """Pre-projection representations of the un-augmented graph."""
    leaves = {k: Tensor(v) for k, v in params.items()}
    return encode(Tensor(g.features), normalized_adjacency(g.edges, g.num_nodes), leaves, cfg.activation).numpy()


def communities(g: AttributedGraph, params: dict[str, np.ndarray], cfg: TrainConfig, view: int = 0) -> np.ndarray:
    """Hard community assignment of the un-augmented graph against centroid set ``view``."""
    leaves = {k: Tensor(v) for k, v in params.items()}
    z = encode(Tensor(g.features), normalized_adjacency(g.edges, g.num_nodes), leaves, cfg.activation)
    p = project(z, leaves, cfg.activation)
    return hard_assignment(assignment_matrix(p, leaves[f"phi{view}"], cfg.sim))

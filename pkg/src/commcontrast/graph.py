"""Graph data model, dataset directory I/O, GCN normalization and an SBM generator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ndtensor import Tensor

Edge = tuple[int, int]


class GraphFormatError(ValueError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ConfigError(ValueError):
    pass


def _canonical_edges(edges, n: int, *, path=None) -> tuple[Edge, ...]:
    seen: set[Edge] = set()
    out = []
    for pos, (u, v) in enumerate(edges):
        u, v = int(u), int(v)
        line = pos + 1 if path is not None else None
        if u == v:
            raise GraphFormatError(f"self-loop ({u}, {v})", path, line)
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edge ({u}, {v}) out of range for {n} nodes", path, line)
        key = (u, v) if u < v else (v, u)
        if key in seen:
            raise GraphFormatError(f"duplicate edge ({u}, {v})", path, line)
        seen.add(key)
        out.append(key)
    return tuple(sorted(out))


@dataclass(frozen=True)
class AttributedGraph:
    """Undirected single-view graph with node attributes and optional labels.

    Edges are stored once as (u, v) with u < v, sorted.
    """

    num_nodes: int
    edges: tuple[Edge, ...]
    features: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise GraphFormatError(f"features must be {self.num_nodes} x F, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "edges", _canonical_edges(self.edges, self.num_nodes))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (self.num_nodes,):
                raise GraphFormatError(f"labels must have length {self.num_nodes}, got {labels.shape}")
            k = self.num_classes if self.num_classes is not None else int(labels.max()) + 1
            if labels.min() < 0 or labels.max() >= k:
                raise GraphFormatError(f"labels must lie in [0, {k})")
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "num_classes", k)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        return adjacency_matrix(self.edges, self.num_nodes)

    def with_edges(self, edges) -> AttributedGraph:
        return AttributedGraph(self.num_nodes, tuple(edges), self.features, self.labels, self.num_classes)


@dataclass(frozen=True)
class MultiplexGraph:
    """Several edge sets (views) over one node set with shared attributes."""

    num_nodes: int
    views: tuple[tuple[Edge, ...], ...]
    features: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        if len(self.views) < 1:
            raise GraphFormatError("a multiplex graph needs at least one view")
        checked = [self.view(r) for r in range(len(self.views))]
        object.__setattr__(self, "views", tuple(g.edges for g in checked))
        object.__setattr__(self, "features", checked[0].features)
        object.__setattr__(self, "labels", checked[0].labels)
        object.__setattr__(self, "num_classes", checked[0].num_classes)

    @property
    def num_views(self) -> int:
        return len(self.views)

    def view(self, r: int) -> AttributedGraph:
        return AttributedGraph(self.num_nodes, self.views[r], self.features, self.labels, self.num_classes)

    @classmethod
    def from_graph(cls, g: AttributedGraph) -> MultiplexGraph:
        return cls(g.num_nodes, (g.edges,), g.features, g.labels, g.num_classes)

    def __eq__(self, other):
        if not isinstance(other, MultiplexGraph):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels)
        )
        return (
            self.num_nodes == other.num_nodes
            and self.views == other.views
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and same_labels
        )

    __hash__ = None  # type: ignore[assignment]


def adjacency_matrix(edges: Sequence[Edge], n: int) -> np.ndarray:
    """Raw 0/1 adjacency with both (i, j) and (j, i) set and a zero diagonal."""
    a = np.zeros((n, n))
    if edges:
        idx = np.asarray(edges, dtype=np.int64)
        a[idx[:, 0], idx[:, 1]] = 1.0
        a[idx[:, 1], idx[:, 0]] = 1.0
    return a


def normalized_adjacency(edges: Sequence[Edge], n: int) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 as a constant tensor."""
    a_hat = adjacency_matrix(edges, n) + np.eye(n)
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return Tensor(a_hat * inv_sqrt[:, None] * inv_sqrt[None, :])


# ---------------------------------------------------------------------------
# dataset directory format


def save_dataset(g: AttributedGraph | MultiplexGraph, directory: str | Path) -> Path:
    if isinstance(g, AttributedGraph):
        g = MultiplexGraph.from_graph(g)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": g.num_nodes,
        "num_views": g.num_views,
        "feature_dim": int(g.features.shape[1]),
        "num_classes": g.num_classes,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    with open(d / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    if g.labels is not None:
        with open(d / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{int(y)}\n" for y in g.labels)
    for r, edges in enumerate(g.views):
        with open(d / f"edges_{r}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{u}\t{v}\n" for u, v in edges)
    return d


def _require(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset file: {path}")
    return path


def _parse_int(tok: str, path: Path, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise GraphFormatError(f"non-integer field {tok!r}", path, line) from None


def load_dataset(directory: str | Path) -> MultiplexGraph:
    d = Path(directory)
    meta_path = _require(d / "meta.json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"invalid JSON: {exc}", meta_path) from None
    for key in ("num_nodes", "num_views", "feature_dim"):
        if key not in meta:
            raise GraphFormatError(f"missing field {key!r}", meta_path)
    n, num_views, fdim = int(meta["num_nodes"]), int(meta["num_views"]), int(meta["feature_dim"])
    num_classes = meta.get("num_classes")

    feat_path = _require(d / "features.csv")
    rows = []
    with open(feat_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != fdim:
                raise GraphFormatError(f"expected {fdim} columns, found {len(parts)}", feat_path, lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise GraphFormatError("non-numeric feature value", feat_path, lineno) from None
    if len(rows) != n:
        raise GraphFormatError(f"expected {n} feature rows, found {len(rows)}", feat_path)
    features = np.array(rows, dtype=np.float64).reshape(n, fdim)

    labels = None
    label_path = d / "labels.csv"
    if label_path.is_file():
        vals = []
        with open(label_path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if raw:
                    vals.append(_parse_int(raw, label_path, lineno))
        if len(vals) != n:
            raise GraphFormatError(f"expected {n} labels, found {len(vals)}", label_path)
        labels = np.array(vals, dtype=np.int64)
        if num_classes is not None and (labels.min() < 0 or labels.max() >= num_classes):
            raise GraphFormatError(f"labels must lie in [0, {num_classes})", label_path)

    views = []
    for r in range(num_views):
        path = _require(d / f"edges_{r}.tsv")
        edges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.rstrip("\n")
                if not raw:
                    continue
                parts = raw.split("\t")
                if len(parts) != 2:
                    raise GraphFormatError("expected 'u<TAB>v'", path, lineno)
                u, v = _parse_int(parts[0], path, lineno), _parse_int(parts[1], path, lineno)
                edges.append((u, v))
        # validate with line numbers before canonicalizing
        _canonical_edges(edges, n, path=path)
        views.append(tuple(edges))
    return MultiplexGraph(n, tuple(views), features, labels, num_classes)


def dataset_fingerprint(directory: str | Path) -> str:
    """sha256 over the dataset files, in a fixed order."""
    d = Path(directory)
    h = hashlib.sha256()
    for path in sorted(p for p in d.iterdir() if p.is_file() and p.name != "blocks.csv"):
        h.update(path.name.encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# stochastic block model


@dataclass
class SbmConfig:
    block_sizes: list[int] = field(default_factory=lambda: [50, 50, 50, 50])
    p_in: float = 0.3
    p_out: float = 0.02
    feature_dim: int = 16
    signal: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if not self.block_sizes or any(int(b) <= 0 for b in self.block_sizes):
            raise ConfigError(f"block sizes must be positive, got {self.block_sizes}")
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise ConfigError(f"need 0 <= p_out <= p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if not (0.0 <= self.signal <= 1.0):
            raise ConfigError(f"signal strength must be in [0, 1], got {self.signal}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.signal > 0 and self.feature_dim < len(self.block_sizes):
            raise ConfigError(
                f"feature_dim={self.feature_dim} is smaller than the number of blocks ({len(self.block_sizes)})"
            )

    @classmethod
    def from_dict(cls, d: dict) -> SbmConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SBM config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.block_sizes = [int(b) for b in cfg.block_sizes]
        return cfg


def sbm_generate(cfg: SbmConfig) -> AttributedGraph:
    """Sample a planted-partition graph.

    Every unordered pair is an independent Bernoulli draw (p_in inside a block,
    p_out across). Features are ``signal * tiled_one_hot(block) +
    (1 - signal) * U[0, 1)`` where the one-hot over B blocks is tiled along the
    feature axis (column j carries block j mod B).
    """
    cfg.validate()
    rng = np.random.Generator(np.random.Philox(key=int(cfg.seed)))
    sizes = [int(b) for b in cfg.block_sizes]
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    n = len(blocks)
    iu, ju = np.triu_indices(n, k=1)
    same = blocks[iu] == blocks[ju]
    prob = np.where(same, cfg.p_in, cfg.p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = tuple(zip(iu[keep].tolist(), ju[keep].tolist()))
    onehot = (np.arange(cfg.feature_dim)[None, :] % len(sizes) == blocks[:, None]).astype(np.float64)
    noise = rng.random((n, cfg.feature_dim))
    features = cfg.signal * onehot + (1.0 - cfg.signal) * noise
    return AttributedGraph(n, edges, features, blocks, len(sizes))

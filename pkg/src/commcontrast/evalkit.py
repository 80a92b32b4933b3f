"""Downstream evaluation: linear probe, K-means, NMI/ARI, community diagnostics, fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .deca import community_densities


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    train_fraction: float
    seed: int


def random_split(n: int, train_fraction: float, seed: int) -> Split:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    perm = rng.permutation(n)
    n_train = min(max(1, int(round(train_fraction * n))), n - 1)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:]), train_fraction, seed)


@dataclass
class LinearProbe:
    """Softmax regression on frozen embeddings."""

    num_classes: int
    steps: int = 500
    lr: float = 0.01
    l2: float = 1e-4
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def fit(self, z: np.ndarray, y: np.ndarray) -> LinearProbe:
        z = np.asarray(z, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if np.unique(y).size < 2:
            raise ValueError("the training split contains a single class")
        n, d = z.shape
        c = self.num_classes
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y] = 1.0
        w, b = np.zeros((d, c)), np.zeros((1, c))
        # Adam, matching the optimizer used for the encoder
        mw, vw, mb, vb = np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b)
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, self.steps + 1):
            p = _softmax(z @ w + b)
            g = (p - onehot) / n
            gw = z.T @ g + self.l2 * w
            gb = g.sum(axis=0, keepdims=True)
            mw = b1 * mw + (1 - b1) * gw
            vw = b2 * vw + (1 - b2) * gw**2
            mb = b1 * mb + (1 - b1) * gb
            vb = b2 * vb + (1 - b2) * gb**2
            corr1, corr2 = 1 - b1**t, 1 - b2**t
            w = w - self.lr * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
            b = b - self.lr * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
        self.weight, self.bias = w, b
        return self

    def predict_proba(self, z: np.ndarray) -> np.ndarray:
        if self.weight is None:
            raise RuntimeError("probe is not fitted")
        return _softmax(np.asarray(z, dtype=np.float64) @ self.weight + self.bias)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def probe_fit_predict(z: np.ndarray, train_labels: np.ndarray, split: Split, num_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fit on ``split.train`` and return (predictions, max-softmax confidence) for ``split.test``.

    Only the training nodes' labels are passed in, so test labels never reach the probe.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_labels.shape[0] != split.train.shape[0]:
        raise ValueError("train_labels must align with split.train")
    c = num_classes if num_classes is not None else int(train_labels.max()) + 1
    z = np.asarray(z, dtype=np.float64)
    probe = LinearProbe(c).fit(z[split.train], train_labels)
    proba = probe.predict_proba(z[split.test])
    return proba.argmax(axis=1), proba.max(axis=1)


def f1_scores(pred, truth) -> tuple[float, float]:
    """(micro-F1, macro-F1). Macro averages over every label seen in either input."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.size == 0:
        raise ValueError("f1 of empty input")
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    classes = np.union1d(pred, truth)
    f1s = []
    for c in classes:
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    micro = float(np.mean(pred == truth))
    return micro, float(np.mean(f1s))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans(z: np.ndarray, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by inertia.

    Returns (labels, inertia).
    """
    x = np.asarray(z, dtype=np.float64)
    n = x.shape[0]
    if k > n:
        raise ValueError(f"K={k} exceeds the number of points ({n})")
    if k < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeans_pp(x, k, rng)
        labels = None
        for _ in range(max_iter):
            new_labels = _sq_dists(x, centers).argmin(axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for j in range(k):
                members = x[labels == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
                else:
                    # re-seed an empty cluster at the point farthest from its center
                    far = _sq_dists(x, centers)[np.arange(n), labels].argmax()
                    centers[j] = x[far]
        labels = _sq_dists(x, centers).argmin(axis=1)
        inertia = float(_sq_dists(x, centers)[np.arange(n), labels].sum())
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return best_labels, best_inertia


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    return table


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, labels) -> float:
    """2 I(pred; labels) / (H(pred) + H(labels)), natural log. 1.0 when both are trivial."""
    table = _contingency(np.asarray(pred), np.asarray(labels))
    n = table.sum()
    h_pred, h_true = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if h_pred + h_true == 0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return max(0.0, 2.0 * mi / (h_pred + h_true))


def ari(pred, labels) -> float:
    table = _contingency(np.asarray(pred), np.asarray(labels))
    n = table.sum()

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def clustering_scores(pred, labels) -> tuple[float, float]:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError("pred and labels must have equal length")
    if pred.size < 2:
        raise ValueError("clustering scores need at least two points")
    return nmi(pred, labels), ari(pred, labels)


def edge_density_score(adj: np.ndarray, hard, num_communities: int) -> float:
    return float(community_densities(adj, np.asarray(hard), num_communities).mean())


def class_entropy_score(hard, labels, num_communities: int) -> float:
    """Mean over communities of the label entropy (natural log); empty communities count 0."""
    hard, labels = np.asarray(hard), np.asarray(labels)
    total = 0.0
    for k in range(num_communities):
        members = labels[hard == k]
        if members.size:
            total += _entropy(np.bincount(members).astype(np.float64))
    return total / num_communities


def fuse_predictions(per_view: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Per node, the prediction of the most confident view (lowest view index on ties)."""
    if not per_view:
        raise ValueError("no views to fuse")
    shapes = {np.shape(a) for view in per_view for a in view}
    if len(shapes) != 1 or len(next(iter(shapes))) != 1:
        raise ValueError("all views must cover the same node set")
    preds = np.stack([np.asarray(p) for p, _ in per_view])
    confs = np.stack([np.asarray(c, dtype=np.float64) for _, c in per_view])
    best = confs.argmax(axis=0)
    return preds[best, np.arange(preds.shape[1])]


def random_partition(n: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.integers(0, k, size=n)

"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every tensor is a 2-D float64 array. Operations record their parents and a
closure computing the parents' gradient contributions; ``backward`` walks the
tape in reverse topological order. Broadcasting is limited to the 2-D cases
the models need (row vectors, column vectors and 1x1 scalars).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-12

_ids = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


def _as_2d(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got array of shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        self.data = _as_2d(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def tensor(value, requires_grad: bool = False) -> Tensor:
    return Tensor(value, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _backward=backward_fn if needs else None, op=op)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, int]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None
    return shape  # type: ignore[return-value]


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape} (inner dimensions differ)")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    a = _wrap(a)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    """Elementwise a / (b + 1e-12)."""
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data + EPS
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / bd**2, b.shape)

    return _make(out, (a, b), bw, "div")


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    """Natural log with an additive floor: log(a + 1e-12)."""
    a = _wrap(a)
    shifted = a.data + EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(shifted)
    return _make(out, (a,), lambda g: (g / shifted,), "log")


def sum(a) -> Tensor:  # noqa: A001
    a = _wrap(a)
    shape = a.shape
    return _make(a.data.sum().reshape(1, 1), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    n = a.data.size
    return _make(a.data.mean().reshape(1, 1), (a,), lambda g: (np.full(shape, g[0, 0] / n),), "mean")


def row_sum(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return _make(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "row_sum")


def row_mean(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    m = shape[1]
    return _make(a.data.mean(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g / m, shape).copy(),), "row_mean")


def col_sum(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return _make(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "col_sum")


def trace(a) -> Tensor:
    a = _wrap(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"trace: matrix must be square, got {a.shape}")
    n = a.shape[0]
    return _make(np.trace(a.data).reshape(1, 1), (a,), lambda g: (np.eye(n) * g[0, 0],), "trace")


def diag(a) -> Tensor:
    """Diagonal of a square matrix as an N x 1 column."""
    a = _wrap(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"diag: matrix must be square, got {a.shape}")
    return _make(np.diag(a.data).reshape(-1, 1).copy(), (a,), lambda g: (np.diagflat(g),), "diag")


def row_sq_norm(a) -> Tensor:
    """Squared L2 norm of each row, N x 1."""
    a = _wrap(a)
    ad = a.data
    return _make((ad**2).sum(axis=1, keepdims=True), (a,), lambda g: (2.0 * g * ad,), "row_sq_norm")


def l2_normalize_rows(a) -> Tensor:
    """Rows divided by (their L2 norm + 1e-12)."""
    a = _wrap(a)
    ad = a.data
    norm = np.sqrt((ad**2).sum(axis=1, keepdims=True))
    den = norm + EPS
    out = ad / den

    def bw(g):
        # d(x/(|x|+e)) = g/den - x (x.g) / (|x| den^2)
        dot = (g * ad).sum(axis=1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return (g / den - ad * dot / (safe * den**2),)

    return _make(out, (a,), bw, "l2_normalize_rows")


def softmax_rows(a) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (a,), bw, "softmax_rows")


def logsumexp_rows(a) -> Tensor:
    """Stable log(sum(exp(row))) per row, N x 1."""
    a = _wrap(a)
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)
    p = e / s
    return _make(out, (a,), lambda g: (g * p,), "logsumexp_rows")


def normalize_rows_sum(a) -> Tensor:
    """Each row divided by (its sum + 1e-12)."""
    a = _wrap(a)
    ad = a.data
    s = ad.sum(axis=1, keepdims=True) + EPS
    out = ad / s

    def bw(g):
        return (g / s - (g * ad).sum(axis=1, keepdims=True) / s**2,)

    return _make(out, (a,), bw, "normalize_rows_sum")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = (a.data > 0).astype(np.float64)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _wrap(a)
    factor = np.where(a.data > 0, 1.0, float(slope))
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def prelu(a, slope) -> Tensor:
    """max(0, x) + slope * min(0, x) with a learnable 1x1 slope."""
    a, slope = _wrap(a), _wrap(slope)
    if slope.shape != (1, 1):
        raise DimensionError(f"prelu: slope must be 1x1, got {slope.shape}")
    ad = a.data
    neg_part = np.minimum(ad, 0.0)
    pos = (ad > 0).astype(np.float64)
    s = slope.data[0, 0]
    out = np.maximum(ad, 0.0) + s * neg_part

    def bw(g):
        return g * (pos + s * (1.0 - pos)), np.array([[(g * neg_part).sum()]])

    return _make(out, (a, slope), bw, "prelu")


def identity(a) -> Tensor:
    return _wrap(a)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def _first_non_finite(root: Tensor) -> Tensor:
    """Earliest tape node with a non-finite value whose inputs are all finite."""
    for node in _topo_order(root):
        if not np.isfinite(node.data).all() and all(np.isfinite(p.data).all() for p in node._parents):
            return node
    return root


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Returns a mapping from node id to the accumulated gradient of the leaves.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        culprit = _first_non_finite(loss)
        raise NumericError(f"loss is not finite ({loss.data[0, 0]}); first produced by primitive '{culprit.op}'")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves[node.node_id] = node.grad
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.isfinite(pg).all():
                raise NumericError(f"non-finite gradient produced by primitive '{node.op}'")
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    return leaves


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(err <= self.tol for err in self.max_rel_error.values())


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` receives a dict of leaf tensors and must return a scalar tensor.
    Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor keeps
    entries whose true gradient is zero from dividing by rounding noise.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    out = f(leaves)
    backward(out)
    report: dict[str, float] = {}
    for name, base in params.items():
        base = np.array(base, dtype=np.float64)
        analytic = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(base)
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1.0, -1.0):
                pert = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
                pert[name][idx] += sign * h
                val = f({k: Tensor(v) for k, v in pert.items()}).item()
                if not np.isfinite(val):
                    raise NumericError(f"f is not finite at perturbed point {name}{idx}")
                vals.append(val)
            numeric[idx] = (vals[0] - vals[1]) / (2 * h)
        scale_ = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = np.abs(analytic - numeric) / scale_
        report[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(report, tol)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update. Returns new parameter arrays; inputs are not modified."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad for '{name}' has shape {g.shape}, param has {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise DimensionError(f"adam_step: moment for '{name}' has shape {m.shape}, param has {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


def leaves_from(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}


def stack_sum(terms: Iterable[Tensor]) -> Tensor:
    total = None
    for t in terms:
        total = t if total is None else add(total, t)
    if total is None:
        return Tensor(0.0)
    return total

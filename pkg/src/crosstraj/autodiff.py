"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Every operation records a backward rule on the output tensor; calling
``backward()`` on a scalar loss walks the graph once in reverse topological
order and accumulates gradients into every tensor with ``requires_grad``.
All math happens in 64-bit floats; any op producing NaN/Inf raises
:class:`NonFiniteError` immediately instead of letting it propagate.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 array participating in the compute graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Accumulate gradients of this scalar into all upstream tensors."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite result in op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(grad):
        if a.requires_grad:
            a._accum(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(grad, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(grad):
        if a.requires_grad:
            a._accum(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-grad, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(grad):
        if a.requires_grad:
            a._accum(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(grad * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(grad):
        if a.requires_grad:
            a._accum(grad @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ grad)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        pieces = np.split(grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(g)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward, "concat")


def getitem(x, key) -> Tensor:
    x = _wrap(x)

    def backward(grad):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, key, grad)
            x._accum(full)

    return _make(np.array(x.data[key]), (x,), backward, "getitem")


def rows(x, idx) -> Tensor:
    """Gather rows ``x[idx]``; backward scatter-adds into the source rows."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(grad):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, idx, grad)
            x._accum(full)

    return _make(x.data[idx], (x,), backward, "rows")


def group_sum(x, groups, num_groups: int) -> Tensor:
    """Scatter-add rows of ``x`` into ``num_groups`` buckets (transpose of rows)."""
    x = _wrap(x)
    groups = np.asarray(groups, dtype=np.int64)
    out = np.zeros((num_groups,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(out, groups, x.data)

    def backward(grad):
        if x.requires_grad:
            x._accum(grad[groups])

    return _make(out, (x,), backward, "group_sum")


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.data.shape

    def backward(grad):
        if x.requires_grad:
            x._accum(grad.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def tsum(x, axis=None) -> Tensor:
    x = _wrap(x)

    def backward(grad):
        if x.requires_grad:
            if axis is None:
                x._accum(np.broadcast_to(grad, x.data.shape).copy())
            else:
                x._accum(np.broadcast_to(np.expand_dims(grad, axis), x.data.shape).copy())

    return _make(np.sum(x.data, axis=axis), (x,), backward, "sum")


def tmean(x, axis=None) -> Tensor:
    x = _wrap(x)
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(grad):
        if x.requires_grad:
            if axis is None:
                x._accum(np.broadcast_to(grad / count, x.data.shape).copy())
            else:
                x._accum(np.broadcast_to(np.expand_dims(grad, axis) / count, x.data.shape).copy())

    return _make(np.mean(x.data, axis=axis), (x,), backward, "mean")


# ---------------------------------------------------------------------------
# elementwise


def square(x) -> Tensor:
    x = _wrap(x)

    def backward(grad):
        if x.requires_grad:
            x._accum(grad * 2.0 * x.data)

    return _make(x.data * x.data, (x,), backward, "square")


def exp(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def backward(grad):
        if x.requires_grad:
            x._accum(grad * out_data)

    return _make(out_data, (x,), backward, "exp")


def log(x) -> Tensor:
    x = _wrap(x)

    def backward(grad):
        if x.requires_grad:
            x._accum(grad / x.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)
    return _make(out_data, (x,), backward, "log")


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out_data = np.where(x.data >= 0,
                        1.0 / (1.0 + np.exp(-np.abs(x.data))),
                        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(grad):
        if x.requires_grad:
            x._accum(grad * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward, "sigmoid")


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = _wrap(x)
    out_data = np.logaddexp(0.0, x.data)
    sig = np.where(x.data >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(x.data))),
                   np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(grad):
        if x.requires_grad:
            x._accum(grad * sig)

    return _make(out_data, (x,), backward, "softplus")


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0

    def backward(grad):
        if x.requires_grad:
            x._accum(grad * mask)

    return _make(np.maximum(x.data, 0.0), (x,), backward, "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0

    def backward(grad):
        if x.requires_grad:
            x._accum(grad * np.where(mask, 1.0, slope))

    return _make(np.where(mask, x.data, slope * x.data), (x,), backward, "leaky_relu")


# ---------------------------------------------------------------------------
# structured ops


def neighborhood_softmax(scores, groups, num_groups: int) -> Tensor:
    """Softmax of ``scores`` within buckets given by ``groups``.

    Each bucket's entries are exponentiated relative to the bucket max and
    normalized to sum to one; a single-member bucket yields exactly 1.0.
    """
    scores = _wrap(scores)
    groups = np.asarray(groups, dtype=np.int64)
    if scores.data.ndim != 1:
        raise ValueError("neighborhood_softmax expects 1-D scores")
    gmax = np.full(num_groups, -np.inf)
    np.maximum.at(gmax, groups, scores.data)
    shifted = np.exp(scores.data - gmax[groups])
    denom = np.zeros(num_groups)
    np.add.at(denom, groups, shifted)
    alpha = shifted / denom[groups]

    def backward(grad):
        if scores.requires_grad:
            inner = np.zeros(num_groups)
            np.add.at(inner, groups, grad * alpha)
            scores._accum(alpha * (grad - inner[groups]))

    return _make(alpha, (scores,), backward, "neighborhood_softmax")


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine similarity of two (n, d) tensors.

    Rows where either vector has zero norm yield 0 with zero gradient
    (the cosine is undefined there).
    """
    a, b = _wrap(a), _wrap(b)
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    ok = (na > 0) & (nb > 0)
    sa = np.where(na > 0, na, 1.0)
    sb = np.where(nb > 0, nb, 1.0)
    dot = np.sum(a.data * b.data, axis=1)
    cos = np.where(ok, dot / (sa * sb), 0.0)

    def backward(grad):
        g = np.where(ok, grad, 0.0)[:, None]
        if a.requires_grad:
            da = (b.data / (sa * sb)[:, None]
                  - a.data * (cos / np.where(ok, sa * sa, 1.0))[:, None])
            a._accum(g * np.where(ok[:, None], da, 0.0))
        if b.requires_grad:
            db = (a.data / (sa * sb)[:, None]
                  - b.data * (cos / np.where(ok, sb * sb, 1.0))[:, None])
            b._accum(g * np.where(ok[:, None], db, 0.0))

    return _make(cos, (a, b), backward, "cosine_similarity")


def l2_normalize(x) -> Tensor:
    """Scale each row of an (n, d) tensor to unit norm; zero rows pass through."""
    x = _wrap(x)
    norm = np.linalg.norm(x.data, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    y = x.data / safe[:, None]

    def backward(grad):
        if x.requires_grad:
            inner = np.sum(grad * y, axis=1)
            x._accum((grad - y * inner[:, None]) / safe[:, None])

    return _make(y, (x,), backward, "l2_normalize")


def grad_reverse(x, scale: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the gradient by ``-scale``."""
    x = _wrap(x)

    def backward(grad):
        if x.requires_grad:
            x._accum(-scale * grad)

    return _make(x.data.copy(), (x,), backward, "grad_reverse")


# ---------------------------------------------------------------------------
# losses built from the primitives


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy from raw logits, stable for large magnitudes.

    Uses softplus(u) - t*u, which equals -(t*log(sig(u)) + (1-t)*log(1-sig(u))).
    """
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.float64)
    return tmean(softplus(logits) - mul(logits, t))


# ---------------------------------------------------------------------------
# parameters, initialization, optimizer


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def linear_params(rng: np.random.Generator, prefix: str, n_in: int, n_out: int) -> dict[str, Tensor]:
    return {
        f"{prefix}.W": Tensor(glorot_uniform(rng, n_in, n_out), requires_grad=True),
        f"{prefix}.b": Tensor(np.zeros(n_out), requires_grad=True),
    }


def linear(params: dict[str, Tensor], prefix: str, x) -> Tensor:
    return add(matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


class Adam:
    """Standard Adam over a named parameter dict; deterministic."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: Adam) -> None:
    """One Adam update from an explicit gradient dict (shapes must match)."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        p.grad = np.asarray(g, dtype=np.float64)
    state.step()
    state.zero_grad()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    """Write parameters as canonical JSON (sorted keys, row-major values).

    Byte-stable: identical parameters always serialize to identical bytes.
    """
    payload = {
        "meta": meta or {},
        "params": {
            name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    params = {}
    for name, rec in payload["params"].items():
        arr = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        params[name] = Tensor(arr, requires_grad=True)
    return params, payload.get("meta", {})

"""Dense float64 tensors with reverse-mode gradients.

The op set is deliberately closed: matmul, weighted sparse aggregation,
bias add, relu/sigmoid, row softmax, elementwise arithmetic, concat,
gather/pick, dropout. That is everything the edge encoder, the weighted
GCN and the loss functions need, and nothing else. Every op records its
inputs on the implicit tape (the parent graph of the output tensor);
``backward`` replays that graph once in reverse topological order.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (evaluation mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A numpy array plus the bookkeeping needed for backprop."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def parameter(value, name=None):
    """Leaf tensor that receives gradients."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn):
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(parent, grad):
    if parent.grad is None:
        parent.grad = np.array(grad, dtype=np.float64)  # own a fresh buffer
    else:
        parent.grad += grad


# ---------------------------------------------------------------------------
# elementwise and matrix ops


def add(a, b):
    """Elementwise add; also supports (n,m) + (m,) bias rows."""
    a, b = as_tensor(a), as_tensor(b)
    val = a.value + b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, g if a.value.shape == g.shape else _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accum(b, g if b.value.shape == g.shape else _unbroadcast(g, b.value.shape))

    return _make(val, (a, b), backward)


def _unbroadcast(g, shape):
    # reduce a broadcasted gradient back to the original shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    val = a.value - b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accum(b, -_unbroadcast(g, b.value.shape))

    return _make(val, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    val = a.value * b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(val, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    val = a.value / b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(val, (a, b), backward)


def scale(a, c):
    """Multiply by a python float."""
    a = as_tensor(a)
    c = float(c)
    val = a.value * c

    def backward(g):
        if a.requires_grad:
            _accum(a, g * c)

    return _make(val, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[-1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    val = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return _make(val, (a, b), backward)


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    val = np.where(mask, a.value, 0.0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(val, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    # stable two-branch form
    val = np.empty_like(a.value)
    pos = a.value >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    ez = np.exp(a.value[~pos])
    val[~pos] = ez / (1.0 + ez)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * val * (1.0 - val))

    return _make(val, (a,), backward)


def log(a):
    a = as_tensor(a)
    val = np.log(a.value)

    def backward(g):
        if a.requires_grad:
            _accum(a, g / a.value)

    return _make(val, (a,), backward)


def exp(a):
    a = as_tensor(a)
    val = np.exp(a.value)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * val)

    return _make(val, (a,), backward)


def power(a, p):
    """Elementwise a**p for float p (entries must stay in the domain)."""
    a = as_tensor(a)
    p = float(p)
    val = np.power(a.value, p)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * p * np.power(a.value, p - 1.0))

    return _make(val, (a,), backward)


def absolute(a):
    a = as_tensor(a)
    val = np.abs(a.value)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * np.sign(a.value))

    return _make(val, (a,), backward)


def clamp_min(a, c):
    """max(a, c); the gradient passes only where a > c."""
    a = as_tensor(a)
    c = float(c)
    mask = a.value > c
    val = np.where(mask, a.value, c)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(val, (a,), backward)


def clamp_max(a, c):
    a = as_tensor(a)
    c = float(c)
    mask = a.value < c
    val = np.where(mask, a.value, c)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(val, (a,), backward)


def row_softmax(a):
    """Softmax over the last axis, numerically shifted per row."""
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * val).sum(axis=-1, keepdims=True)
            _accum(a, (g - inner) * val)

    return _make(val, (a,), backward)


def log_row_softmax(a):
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    val = shifted - lse

    def backward(g):
        if a.requires_grad:
            _accum(a, g - np.exp(val) * g.sum(axis=-1, keepdims=True))

    return _make(val, (a,), backward)


def sum_all(a):
    a = as_tensor(a)
    val = np.asarray(a.value.sum())

    def backward(g):
        if a.requires_grad:
            _accum(a, np.broadcast_to(g, a.value.shape).copy())

    return _make(val, (a,), backward)


def mean_all(a):
    a = as_tensor(a)
    n = a.value.size
    val = np.asarray(a.value.mean())

    def backward(g):
        if a.requires_grad:
            _accum(a, np.broadcast_to(g / n, a.value.shape).copy())

    return _make(val, (a,), backward)


def row_sum(a):
    """Sum over the last axis: (n, m) -> (n,)."""
    a = as_tensor(a)
    val = a.value.sum(axis=-1)

    def backward(g):
        if a.requires_grad:
            _accum(a, np.repeat(g[..., None], a.value.shape[-1], axis=-1))

    return _make(val, (a,), backward)


def flatten(a):
    """Reshape to a 1-D vector."""
    a = as_tensor(a)
    val = a.value.reshape(-1)

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.value.shape))

    return _make(val, (a,), backward)


def concat_cols(a, b):
    a, b = as_tensor(a), as_tensor(b)
    val = np.concatenate([a.value, b.value], axis=1)
    na = a.value.shape[1]

    def backward(g):
        if a.requires_grad:
            _accum(a, g[:, :na])
        if b.requires_grad:
            _accum(b, g[:, na:])

    return _make(val, (a, b), backward)


def gather_rows(a, idx):
    """Rows a[idx]; duplicate indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    val = a.value[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.value)
            np.add.at(acc, idx, g)
            _accum(a, acc)

    return _make(val, (a,), backward)


def pick(a, rows, cols):
    """Entries a[rows[i], cols[i]] as a vector."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    val = a.value[rows, cols]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.value)
            np.add.at(acc, (rows, cols), g)
            _accum(a, acc)

    return _make(val, (a,), backward)


def dropout(a, rate, rng):
    """Inverted dropout; a no-op when rate == 0."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    keep = rng.random(a.value.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    val = a.value * keep * factor

    def backward(g):
        if a.requires_grad:
            _accum(a, g * keep * factor)

    return _make(val, (a,), backward)


# ---------------------------------------------------------------------------
# graph-structured ops (the "sparse aggregate" primitives)


def _segment_rows(idx, vals, num_rows):
    """Sum (E, H) value rows into an (num_rows, H) array (bincount scatter)."""
    h = vals.shape[1]
    flat = np.bincount((idx[:, None] * h + np.arange(h)).ravel(),
                       weights=vals.ravel(), minlength=num_rows * h)
    return flat.reshape(num_rows, h)


def edge_incident_sum(w, edge_u, edge_v, num_nodes):
    """out[n] = sum of w_e over edges incident to n (both endpoints)."""
    w = as_tensor(w)
    edge_u = np.asarray(edge_u, dtype=np.int64)
    edge_v = np.asarray(edge_v, dtype=np.int64)
    both = np.concatenate([edge_u, edge_v])
    val = np.bincount(both, weights=np.concatenate([w.value, w.value]),
                      minlength=num_nodes)

    def backward(g):
        if w.requires_grad:
            _accum(w, g[edge_u] + g[edge_v])

    return _make(val, (w,), backward)


def edge_aggregate(w, edge_u, edge_v, x):
    """Symmetric weighted neighbor sum: out[u] += w_e * x[v] and vice versa.

    ``w`` may be a plain ndarray when the weights are fixed (no gradient).
    """
    w_t = w if isinstance(w, Tensor) else Tensor(w)
    x = as_tensor(x)
    edge_u = np.asarray(edge_u, dtype=np.int64)
    edge_v = np.asarray(edge_v, dtype=np.int64)
    wv = w_t.value
    both = np.concatenate([edge_u, edge_v])
    flip = np.concatenate([edge_v, edge_u])
    wv2 = np.concatenate([wv, wv])
    val = _segment_rows(both, wv2[:, None] * x.value[flip], x.value.shape[0])

    def backward(g):
        if x.requires_grad:
            _accum(x, _segment_rows(flip, wv2[:, None] * g[both], x.value.shape[0]))
        if w_t.requires_grad:
            gw = (g[edge_u] * x.value[edge_v]).sum(axis=1)
            gw += (g[edge_v] * x.value[edge_u]).sum(axis=1)
            _accum(w_t, gw)

    return _make(val, (w_t, x), backward)


def row_scale(x, s):
    """x * s[:, None] for a per-row scale vector s."""
    x, s = as_tensor(x), as_tensor(s)
    val = x.value * s.value[:, None]

    def backward(g):
        if x.requires_grad:
            _accum(x, g * s.value[:, None])
        if s.requires_grad:
            _accum(s, (g * x.value).sum(axis=1))

    return _make(val, (x, s), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Populate .grad on every tensor reachable from ``loss``.

    ``loss`` must be a scalar produced by recorded ops.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if loss._backward is None and not loss.requires_grad:
        raise ValueError("loss is detached from the tape; nothing to differentiate")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# optimizer and initialization


class Adam:
    """Standard Adam with bias correction over a list of named parameters."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient for parameter {p.name or i}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def glorot_uniform(rng, fan_in, fan_out):
    """Glorot/Xavier uniform init, seeded by the caller's generator."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))

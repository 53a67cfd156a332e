"""Minimal reverse-mode autodiff on numpy arrays, plus the Adam optimizer.

A Tape records one forward pass; record order is topological order, so the
backward sweep is a single reverse pass that visits each node once. Ops
work identically with tape=None (inference), producing bitwise-equal
values. Shapes are always explicit; the only broadcast is add_bias.

Training runs in float32, gradient checks in float64 (finite differences
are unreliable at single precision).
"""

from __future__ import annotations

import numpy as np

# global toggle; tests keep it on, training may disable for speed
CHECK_FINITE = True


class Tape:
    """Ordered record of operations: parent node ids + pullback closures."""

    def __init__(self):
        self._parents = []
        self._pullbacks = []

    def __len__(self):
        return len(self._parents)

    def emit(self, parents, pullback):
        """Register a node; parents are node ids, pullback maps dL/dout -> dL/dparents."""
        self._parents.append(parents)
        self._pullbacks.append(pullback)
        return len(self._parents) - 1

    def leaf(self, data, dtype=None):
        """Record a leaf tensor (parameter or constant wanting gradient)."""
        return Tensor(data, tape=self, dtype=dtype)

    def backward(self, loss):
        """Gradients of a scalar loss w.r.t. every node that feeds it.

        Returns {node_id: ndarray}; leaves appear with their accumulated
        gradient, unreachable nodes are absent.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.ndim != 0:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads = [None] * len(self._parents)
        grads[loss.nid] = np.ones((), dtype=loss.data.dtype)
        for nid in range(loss.nid, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            pullback = self._pullbacks[nid]
            if pullback is None:
                continue
            for parent, pg in zip(self._parents[nid], pullback(g)):
                if pg is None:
                    continue
                # functional accumulation: pullbacks may alias their output
                # arrays (e.g. add returns (g, g)), so never mutate in place
                grads[parent] = pg if grads[parent] is None else grads[parent] + pg
        return {nid: g for nid, g in enumerate(grads) if g is not None}


class Tensor:
    """A numpy array, optionally tracked on a Tape via its node id."""

    __slots__ = ("data", "tape", "nid")

    def __init__(self, data, tape=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.tape = tape
        self.nid = tape.emit((), None) if tape is not None else -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape={'on' if self.tape else 'off'})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def make_node(data, parents, pullback):
    """Build an op result; records on the parents' tape when present.

    `parents` are Tensors; the pullback receives dL/dout and must return
    one gradient (or None) per parent with that parent's shape.
    """
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    out = Tensor.__new__(Tensor)
    out.data = data
    tape = _tape_of(*parents)
    out.tape = tape
    if tape is None:
        out.nid = -1
        return out
    ids, keep = [], []
    for i, p in enumerate(parents):
        if p.tape is not None:
            ids.append(p.nid)
            keep.append(i)

    def tape_pullback(g):
        all_grads = pullback(g)
        return [all_grads[i] for i in keep]

    out.nid = tape.emit(tuple(ids), tape_pullback)
    return out


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    return make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return make_node(a.data * np.asarray(c, dtype=a.data.dtype), (a,), lambda g: (g * c,))


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)
    return make_node(out, (a,), lambda g: (g * (a.data > 0),))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


# ---------------------------------------------------------------------------
# linear algebra / shape ops


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    return make_node(a.data @ b.data, (a, b),
                     lambda g: (g @ b.data.T, a.data.T @ g))


def add_bias(a, bias):
    """Row-broadcast bias add: (m,n) + (n,) -> (m,n)."""
    a, bias = _as_tensor(a), _as_tensor(bias)
    if a.data.ndim != 2 or bias.data.shape != (a.data.shape[1],):
        raise ValueError(f"add_bias: shapes {a.data.shape} and {bias.data.shape}")
    return make_node(a.data + bias.data, (a, bias),
                     lambda g: (g, g.sum(axis=0)))


def concat_cols(*tensors):
    """Column-concatenate (m,k_i) tensors into (m, sum k_i)."""
    ts = [_as_tensor(t) for t in tensors]
    rows = {t.data.shape[0] for t in ts}
    if any(t.data.ndim != 2 for t in ts) or len(rows) != 1:
        raise ValueError(f"concat_cols: shapes {[t.data.shape for t in ts]}")
    widths = [t.data.shape[1] for t in ts]
    splits = np.cumsum(widths)[:-1]
    return make_node(np.hstack([t.data for t in ts]), tuple(ts),
                     lambda g: tuple(np.hsplit(g, splits)))


def reduce_max_rows(a):
    """Column-wise max of an (m,n) tensor -> (n,).

    The gradient flows only to the argmax row per column; ties resolve to
    the lowest row index.
    """
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"reduce_max_rows: need (m,n), got {a.data.shape}")
    idx = a.data.argmax(axis=0)
    out = a.data[idx, np.arange(a.data.shape[1])]

    def pullback(g):
        ga = np.zeros_like(a.data)
        ga[idx, np.arange(a.data.shape[1])] = g
        return (ga,)

    return make_node(out, (a,), pullback)


def reduce_sum(a):
    a = _as_tensor(a)
    return make_node(a.data.sum(), (a,),
                     lambda g: (np.broadcast_to(g, a.data.shape),))


def mean(a):
    a = _as_tensor(a)
    n = a.data.size
    return make_node(a.data.mean(), (a,),
                     lambda g: (np.broadcast_to(g / n, a.data.shape),))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def repeat_row(v, m):
    """Tile a (n,) vector into an (m,n) matrix; gradient sums over rows."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ValueError(f"repeat_row: need (n,), got {v.data.shape}")
    out = np.tile(v.data, (m, 1))
    return make_node(out, (v,), lambda g: (g.sum(axis=0),))


def repeat_rows(a, k):
    """Repeat each row of (r,c) k times -> (r*k, c); gradient sums per source row."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"repeat_rows: need (r,c), got {a.data.shape}")
    r, c = a.data.shape
    out = np.repeat(a.data, k, axis=0)
    return make_node(out, (a,), lambda g: (g.reshape(r, k, c).sum(axis=1),))


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}


def adam_step(params, grads, state):
    """One Adam update with bias correction; mutates params in place.

    `params` and `grads` are name -> ndarray; names missing from grads are
    treated as zero gradient.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = 0.0
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state

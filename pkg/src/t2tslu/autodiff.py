"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the op set needed by the encoder/decoder stack: matmul,
elementwise nonlinearities, softmax, concat/stack/slice, embedding lookup,
dropout, max-pooling over time and the Adam optimizer.  Gradients are
verified against central finite differences (see ``grad_check``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# float32 for training/inference, float64 for gradient checking.
DEFAULT_DTYPE = np.float32

PROB_CLAMP = 1e-12


class ShapeError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A numpy array plus a backward closure on the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, dtype=None):
        if isinstance(data, (np.ndarray, np.generic)):
            # preserve the dtype of op outputs unless explicitly overridden
            data = np.asarray(data)
            if dtype is not None and data.dtype != dtype:
                data = data.astype(dtype)
        else:
            data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = data
        self.grad = None
        self.requires_grad = (requires_grad or any(p.requires_grad for p in parents)) \
            and (_grad_enabled or not parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse accumulation from this (scalar) tensor through the graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.shape}")
        # iterative topological order (sequences make recursive DFS fragile)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # light operator sugar; heavy ops are module functions below
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={'yes' if self.requires_grad else 'no'})"


def tensor(data, dtype=None):
    return Tensor(data, dtype=dtype)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data, parents=(a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(g)
        out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a scalar (0-d) tensor."""
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, parents=(a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                ga = g * b.data
                a._accum(ga if a.shape == out.shape else np.sum(ga).reshape(a.shape))
            if b.requires_grad:
                gb = g * a.data
                b._accum(gb if b.shape == out.shape else np.sum(gb).reshape(b.shape))
        out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * c)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from e
    out = Tensor(data, parents=(a, b))
    if out.requires_grad:
        an, bn = a.data.ndim, b.data.ndim

        def backward(g):
            if an == 2 and bn == 2:
                if a.requires_grad:
                    a._accum(g @ b.data.T)
                if b.requires_grad:
                    b._accum(a.data.T @ g)
            elif an == 2 and bn == 1:
                if a.requires_grad:
                    a._accum(np.outer(g, b.data))
                if b.requires_grad:
                    b._accum(a.data.T @ g)
            elif an == 1 and bn == 2:
                if a.requires_grad:
                    a._accum(b.data @ g)
                if b.requires_grad:
                    b._accum(np.outer(a.data, g))
            else:  # dot product
                if a.requires_grad:
                    a._accum(g * b.data)
                if b.requires_grad:
                    b._accum(g * a.data)
        out._backward = backward
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("dot", a, b)
    return matmul(a, b)


def concat(tensors) -> Tensor:
    tensors = list(tensors)
    for t in tensors:
        if t.data.ndim != 1:
            raise ShapeError(f"concat: expected 1-D tensors, got shape {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors]), parents=tuple(tensors))
    if out.requires_grad:
        offsets = np.cumsum([0] + [t.data.size for t in tensors])

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accum(g[lo:hi])
        out._backward = backward
    return out


def stack(tensors) -> Tensor:
    """Stack equal-length 1-D tensors into a 2-D (rows) tensor."""
    tensors = list(tensors)
    out = Tensor(np.stack([t.data for t in tensors]), parents=tuple(tensors))
    if out.requires_grad:
        def backward(g):
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accum(g[i])
        out._backward = backward
    return out


def slice1d(a: Tensor, lo: int, hi: int) -> Tensor:
    out = Tensor(a.data[lo:hi], parents=(a,))
    if out.requires_grad:
        def backward(g):
            full = np.zeros_like(a.data)
            full[lo:hi] = g
            a._accum(full)
        out._backward = backward
    return out


def gather(a: Tensor, indices) -> Tensor:
    """Select entries of a 1-D tensor; scalar index yields a 0-d tensor."""
    idx = np.asarray(indices)
    out = Tensor(a.data[idx], parents=(a,))
    if out.requires_grad:
        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)
        out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    # numerically stable two-branch form
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y.astype(a.dtype), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * y * (1.0 - y))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * (1.0 - y * y))
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * y)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g / a.data)
    return out


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data >= floor
    out = Tensor(np.maximum(a.data, floor), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * mask)
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=-1, keepdims=True)
    out = Tensor(y, parents=(a,))
    if out.requires_grad:
        def backward(g):
            s = np.sum(g * y, axis=-1, keepdims=True)
            a._accum(y * (g - s))
        out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(np.full_like(a.data, float(g)))
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a 2-D tensor."""
    n = a.shape[0]
    out = Tensor(np.mean(a.data, axis=0), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(np.tile(g / n, (n, 1)))
    return out


def max_pool_over_time(a: Tensor) -> Tensor:
    """Per-dimension max over axis 0 (time) of a 2-D (time, dim) tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"max_pool_over_time: expected 2-D input, got {a.shape}")
    argmax = np.argmax(a.data, axis=0)
    out = Tensor(a.data[argmax, np.arange(a.shape[1])], parents=(a,))
    if out.requires_grad:
        def backward(g):
            full = np.zeros_like(a.data)
            full[argmax, np.arange(a.shape[1])] = g
            a._accum(full)
        out._backward = backward
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of an embedding matrix; gradient is scatter-added into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[idx], parents=(table,))
    if out.requires_grad:
        def backward(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            table._accum(full)
        out._backward = backward
    return out


def dropout(a: Tensor, keep_prob: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or keep_prob == 1."""
    if not training or keep_prob >= 1.0:
        return a
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    mask = (rng.random(a.shape) < keep_prob).astype(a.dtype) / keep_prob
    out = Tensor(a.data * mask, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * mask)
    return out


def cross_entropy_from_probs(probs: Tensor, index: int) -> Tensor:
    """-log p[index], with the probability clamped at PROB_CLAMP."""
    return scale(log(clamp_min(gather(probs, int(index)), PROB_CLAMP)), -1.0)


class ParamStore:
    """Named trainable parameters."""

    def __init__(self, dtype=None):
        self.dtype = dtype or DEFAULT_DTYPE
        self._params: dict[str, Tensor] = {}

    def param(self, name: str, shape, init="uniform", rng: np.random.Generator | None = None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if isinstance(init, str) and init == "uniform":
            if rng is None:
                raise ValueError("uniform init needs an rng")
            data = rng.uniform(-0.1, 0.1, size=shape)
        elif isinstance(init, str) and init == "zeros":
            data = np.zeros(shape)
        else:
            data = np.asarray(init)
            if data.shape != tuple(shape):
                raise ShapeError(f"param {name}: init shape {data.shape} != {tuple(shape)}")
        t = Tensor(data.astype(self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in state.items():
            t = self._params[k]
            v = np.asarray(v)
            if v.shape != t.data.shape:
                raise ShapeError(f"param {k}: shape mismatch {v.shape} vs {t.data.shape}")
            t.data = v.astype(self.dtype)


class Adam:
    """Adam with bias correction over a ParamStore."""

    def __init__(self, params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self._v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Global-norm gradient clipping; returns the pre-clip norm."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= factor
    return norm


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked_elements: int
    worst: list = field(default_factory=list)  # (param, flat index, analytic, numeric, rel err)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(loss_fn, params: ParamStore, step=1e-5, max_elements=10000,
               seed=0, n_worst=5) -> GradCheckReport:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the graph from the current parameter values on
    every call and be deterministic (dropout off).  Parameters should be
    float64.  Above max_elements total, a seeded random subsample of
    elements is checked.  Has no side effects on parameter values.
    """
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    params.zero_grad()

    coords = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    if len(coords) > max_elements:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_elements, replace=False)
        coords = [coords[i] for i in pick]

    entries = []
    for name, i in coords:
        p = params[name]
        flat = p.data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(loss_fn().data)
        flat[i] = orig - step
        f_minus = float(loss_fn().data)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2 * step)
        a = float(analytic[name].reshape(-1)[i])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
        entries.append((name, i, a, numeric, rel))

    entries.sort(key=lambda e: -e[4])
    max_rel = entries[0][4] if entries else 0.0
    return GradCheckReport(max_rel_error=max_rel, checked_elements=len(entries),
                           worst=entries[:n_worst])


def lstm_params(store: ParamStore, prefix: str, input_dim: int, hidden_dim: int,
                rng: np.random.Generator):
    """Create fused LSTM weights; forget-gate bias initialized to +1."""
    w = store.param(f"{prefix}.W", (4 * hidden_dim, input_dim + hidden_dim), rng=rng)
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim:2 * hidden_dim] = 1.0  # forget gate
    bias = store.param(f"{prefix}.b", (4 * hidden_dim,), init=b)
    return w, bias


def lstm_step(w: Tensor, b: Tensor, x: Tensor, h: Tensor, c: Tensor):
    """One LSTM cell step; gate order in the fused weights is i, f, g, o."""
    hidden = h.shape[0]
    if x.shape[0] + hidden != w.shape[1]:
        raise ShapeError(f"lstm_step: input {x.shape} + hidden {h.shape} "
                         f"incompatible with weights {w.shape}")
    z = add(matmul(w, concat([x, h])), b)
    i = sigmoid(slice1d(z, 0, hidden))
    f = sigmoid(slice1d(z, hidden, 2 * hidden))
    g = tanh(slice1d(z, 2 * hidden, 3 * hidden))
    o = sigmoid(slice1d(z, 3 * hidden, 4 * hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new

"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive computes its forward value with numpy and, when any input
participates in differentiation, records a pullback closure linking the
output to its parents.  backward() walks that record in reverse
topological order, accumulates gradients into the `.grad` buffers of
requires_grad leaves, and releases the recorded graph.

All data is float64.  Stochastic primitives (dropout) take an explicit
numpy Generator; there is no ambient randomness.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_pullback", "_op", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._pullback = None
        self._op = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; wraps scalars/arrays as constant tensors
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def param(data):
    """Convenience constructor for trainable leaves."""
    return Tensor(data, requires_grad=True)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _make(data, op, parents, pullback):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._pullback = pullback
        out._op = op
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def pullback(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data + b.data, "add", (a, b), pullback)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def pullback(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data - b.data, "sub", (a, b), pullback)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def pullback(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, "mul", (a, b), pullback)


def neg(a):
    a = as_tensor(a)

    def pullback(g):
        return (-g,)

    return _make(-a.data, "neg", (a,), pullback)


def sigmoid(x):
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def pullback(g):
        return (g * y * (1.0 - y),)

    return _make(y, "sigmoid", (x,), pullback)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def pullback(g):
        return (g * (1.0 - y * y),)

    return _make(y, "tanh", (x,), pullback)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def pullback(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), "relu", (x,), pullback)


def gelu(x):
    """Exact GELU, x * Phi(x) with the Gaussian CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def pullback(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _make(x.data * cdf, "gelu", (x,), pullback)


def huber(x, beta):
    """Elementwise smooth-L1 kernel: quadratic below beta, linear above."""
    x = as_tensor(x)
    if beta <= 0:
        raise ContractError(f"huber: beta must be positive, got {beta}")
    a = np.abs(x.data)
    y = np.where(a < beta, 0.5 * x.data * x.data / beta, a - 0.5 * beta)

    def pullback(g):
        return (g * np.clip(x.data / beta, -1.0, 1.0),)

    return _make(y, "huber", (x,), pullback)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def pullback(g):
        ga = gb = None
        if a.ndim == 2 and b.ndim == 2:
            if a.requires_grad:
                ga = g @ b.data.T
            if b.requires_grad:
                gb = a.data.T @ g
        elif a.ndim == 1 and b.ndim == 2:
            if a.requires_grad:
                ga = b.data @ g
            if b.requires_grad:
                gb = np.outer(a.data, g)
        elif a.ndim == 2 and b.ndim == 1:
            if a.requires_grad:
                ga = np.outer(g, b.data)
            if b.requires_grad:
                gb = a.data.T @ g
        else:
            if a.requires_grad:
                ga = g * b.data
            if b.requires_grad:
                gb = g * a.data
        return ga, gb

    return _make(out, "matmul", (a, b), pullback)


def affine(x, w, b):
    """x @ w + b for x of shape (n_in,) or (batch, n_in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError("affine", x.shape, w.shape, b.shape)
    out = x.data @ w.data + b.data

    def pullback(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = g @ w.data.T
        if w.requires_grad:
            gw = x.data.T @ g if x.ndim == 2 else np.outer(x.data, g)
        if b.requires_grad:
            gb = g.sum(axis=0) if g.ndim == 2 else g
        return gx, gw, gb

    return _make(out, "affine", (x, w, b), pullback)


def conv1d(x, kernels, stride=1):
    """Valid-padding cross-correlation along the last axis.

    Accepted shapes: x (L,) with kernels (K,); x (c_in, L) with kernels
    (c_out, c_in, K); or batched x (B, c_in, L).  With stride s the output
    length is (L - K)//s + 1.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if stride < 1:
        raise ContractError(f"conv1d: stride must be >= 1, got {stride}")
    vector_in = x.ndim == 1
    batched_in = x.ndim == 3
    if vector_in:
        if kernels.ndim != 1:
            raise ShapeError("conv1d", x.shape, kernels.shape)
        xd = x.data[None, None, :]
        kd = kernels.data[None, None, :]
    elif x.ndim == 2:
        if kernels.ndim != 3 or kernels.shape[1] != x.shape[0]:
            raise ShapeError("conv1d", x.shape, kernels.shape)
        xd = x.data[None, :, :]
        kd = kernels.data
    elif batched_in:
        if kernels.ndim != 3 or kernels.shape[1] != x.shape[1]:
            raise ShapeError("conv1d", x.shape, kernels.shape)
        xd = x.data
        kd = kernels.data
    else:
        raise ShapeError("conv1d", x.shape, kernels.shape)

    B, c_in, L = xd.shape
    c_out, _, K = kd.shape
    if L < K:
        raise ShapeError("conv1d", x.shape, kernels.shape)
    L_out = (L - K) // stride + 1
    span = stride * (L_out - 1) + 1

    # im2col: one large matmul instead of K strided ones
    windows = np.lib.stride_tricks.sliding_window_view(xd, K, axis=2)[:, :, ::stride, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(B * L_out, c_in * K)
    kmat = kd.reshape(c_out, c_in * K)
    out = (cols @ kmat.T).reshape(B, L_out, c_out).transpose(0, 2, 1)

    def pullback(g):
        gflat = g.reshape(B, c_out, L_out).transpose(0, 2, 1).reshape(B * L_out, c_out)
        gx = gk = None
        if kernels.requires_grad:
            gk = (gflat.T @ cols).reshape(kernels.shape)
        if x.requires_grad:
            gwin = (gflat @ kmat).reshape(B, L_out, c_in, K).transpose(0, 2, 1, 3)
            gxd = np.zeros_like(xd)
            for k in range(K):
                gxd[:, :, k : k + span : stride] += gwin[:, :, :, k]
            gx = gxd.reshape(x.shape)
        return gx, gk

    if vector_in:
        out_shaped = out[0, 0]
    elif batched_in:
        out_shaped = out
    else:
        out_shaped = out[0]
    return _make(out_shaped, "conv1d", (x, kernels), pullback)


def batchnorm1d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-8):
    """Per-channel batch normalization over (B, C) or (B, C, L) input.

    In training mode the batch statistics normalize and the running
    buffers (plain non-grad tensors) are updated in place; in eval mode
    the op is the deterministic affine map given by the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 3):
        raise ShapeError("batchnorm1d", x.shape, gamma.shape)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("batchnorm1d", x.shape, gamma.shape, beta.shape)
    axes = (0,) if x.ndim == 2 else (0, 2)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1)
    n = x.data.shape[0] if x.ndim == 2 else x.data.shape[0] * x.data.shape[2]

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mu
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * unbiased
    else:
        mu = running_mean.data
        var = running_var.data

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def pullback(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=axes)
        if beta.requires_grad:
            gb = g.sum(axis=axes)
        if x.requires_grad:
            scale = (gamma.data * inv_std).reshape(bshape)
            if training:
                g_mean = g.mean(axis=axes).reshape(bshape)
                gx_hat_mean = (g * xhat).mean(axis=axes).reshape(bshape)
                gx = scale * (g - g_mean - xhat * gx_hat_mean)
            else:
                gx = scale * g
        return gx, gg, gb

    return _make(out, "batchnorm1d", (x, gamma, beta), pullback)


def dropout(x, rate, training, rng=None):
    """Inverted dropout: survivors scaled by 1/(1-rate) so E[out] = x."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def pullback(g):
        return (g * mask,)

    return _make(x.data * mask, "dropout", (x,), pullback)


# ---------------------------------------------------------------------------
# shape / reduction primitives


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def pullback(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, "sum", (x,), pullback)


def mean_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        count = x.data.shape[axis]

    def pullback(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy() / count,)

    return _make(out, "mean", (x,), pullback)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def pullback(g):
        return (g.reshape(x.shape),)

    return _make(out, "reshape", (x,), pullback)


def flatten(x, from_axis=0):
    """Collapse all axes from `from_axis` on into one."""
    x = as_tensor(x)
    head = x.shape[:from_axis]
    return reshape(x, head + (-1,))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def pullback(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return tuple(grads)

    return _make(out, "concat", tensors, pullback)


def _is_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis
               for p in parts)


def slice_(x, key):
    """Basic or advanced indexing; gradient scatters back into the source.

    Basic keys address each element at most once, so a plain indexed add
    suffices; advanced (array) keys may repeat indices and use add.at.
    """
    x = as_tensor(x)
    out = x.data[key]
    basic = _is_basic_key(key)

    def pullback(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[key] += g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _make(out, "slice", (x,), pullback)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss):
    """Populate .grad on every requires_grad leaf reachable from `loss`.

    Gradients accumulate (+=) across fan-out and across repeated backward
    calls on fresh graphs.  The recorded graph is released afterwards.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward: loss must be a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not require grad")
    if loss._consumed:
        raise ContractError("backward: tape already cleared for this loss")

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._pullback is None:
            # requires_grad leaf
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._pullback(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            # never accumulate in place: pullbacks may hand out views or
            # the same buffer for several parents
            grads[id(p)] = pg if acc is None else acc + pg

    for node in order:
        if node._pullback is not None:
            node._pullback = None
            node._parents = ()
            node._consumed = True


def grad_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f must be a deterministic scalar-valued function of one Tensor.
    Error is max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    x = as_tensor(x)
    x.requires_grad = True
    x.zero_grad()
    backward(f(x))
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x.data)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(x.data)).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))

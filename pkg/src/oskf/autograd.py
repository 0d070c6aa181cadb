"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the primitives the refiner needs are provided. Every op records a
closure mapping the output gradient to the gradients of its inputs;
``Tensor.backward`` walks the graph in reverse topological order.

All data is float64.
"""

import numpy as np


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 1000
    __array_ufunc__ = None  # make ndarray binops defer to the reflected Tensor ops

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        tracked = False
        for p in parents:
            if p.requires_grad:
                tracked = True
                break
        self.requires_grad = bool(requires_grad) or tracked
        self._parents = parents if tracked else ()
        self._backward = backward if tracked else None

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def numpy(self):
        return self.data

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x):
    return x if type(x) is Tensor else Tensor(x)


def data_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- binary ops
#
# Operands may be Tensors or plain numpy constants; constants are not
# wrapped and get no gradient.

def _lift(x):
    return x.data if type(x) is Tensor else x


def _node(out, parents, backward):
    """Build an op output; ``parents`` are the Tensor operands only.

    When no parent is tracked the plain array is returned, so untracked
    forward passes run at numpy speed.
    """
    for p in parents:
        if p.requires_grad:
            return Tensor(out, parents=parents, backward=backward)
    return out


def add(a, b):
    ta, tb = type(a) is Tensor, type(b) is Tensor
    out = _lift(a) + _lift(b)
    if ta and tb:
        return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    t = a if ta else b
    return _node(out, (t,), lambda g: (_unbroadcast(g, t.shape),))


def sub(a, b):
    ta, tb = type(a) is Tensor, type(b) is Tensor
    out = _lift(a) - _lift(b)
    if ta and tb:
        return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    if ta:
        return _node(out, (a,), lambda g: (_unbroadcast(g, a.shape),))
    return _node(out, (b,), lambda g: (_unbroadcast(-g, b.shape),))


def mul(a, b):
    ta, tb = type(a) is Tensor, type(b) is Tensor
    ad, bd = _lift(a), _lift(b)
    out = ad * bd
    if ta and tb:
        def backward(g):
            ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
            return ga, gb

        return _node(out, (a, b), backward)
    if ta:
        return _node(out, (a,), lambda g: (_unbroadcast(g * bd, a.shape),))
    return _node(out, (b,), lambda g: (_unbroadcast(g * ad, b.shape),))


def div(a, b):
    ta, tb = type(a) is Tensor, type(b) is Tensor
    ad, bd = _lift(a), _lift(b)
    out = ad / bd
    if ta and tb:
        def backward(g):
            ga = _unbroadcast(g / bd, a.shape) if a.requires_grad else None
            gb = _unbroadcast(-g * out / bd, b.shape) if b.requires_grad else None
            return ga, gb

        return _node(out, (a, b), backward)
    if ta:
        return _node(out, (a,), lambda g: (_unbroadcast(g / bd, a.shape),))
    return _node(out, (b,), lambda g: (_unbroadcast(-g * out / bd, b.shape),))


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        A = ad[None, :] if ad.ndim == 1 else ad
        B = bd[:, None] if bd.ndim == 1 else bd
        G = g
        if ad.ndim == 1:
            G = G[..., None, :]
        if bd.ndim == 1:
            G = G[..., None]
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(G @ np.swapaxes(B, -1, -2), A.shape).reshape(ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(A, -1, -2) @ G, B.shape).reshape(bd.shape)
        return ga, gb

    return _node(out, (a, b), backward)


# ---------------------------------------------------------------- reductions

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        return (_expand(g, a.shape, axis, keepdims),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _has_array_index(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in idx)


def getitem(a, idx):
    a = as_tensor(a)
    fancy = _has_array_index(idx)

    def backward(g):
        z = np.zeros(a.shape)
        if fancy:
            np.add.at(z, idx, g)
        else:
            z[idx] += g
        return (z,)

    return _node(a.data[idx], (a,), backward)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _node(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    out = np.stack([t.data for t in tensors], axis=axis)
    return _node(out, tuple(tensors), backward)


# ---------------------------------------------------------------- elementwise

def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sin(a):
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a):
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(out, (a,), lambda g: (g * sig,))


def absolute(a):
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------- fused ops

def linear(x, w, b=None):
    """``x @ w + b`` for a 2-D weight ``w`` and any leading shape of ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, (x, w) if b is None else (x, w, b), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xc = x.data - x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _node(out, (x, gain, bias), backward)


def _cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def cross(a, b):
    """Cross product over the last axis (length 3)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(_cross(bd, g), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_cross(g, ad), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(_cross(ad, bd), (a, b), backward)


def norm(a, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * a.data / n,)

    return _node(n if keepdims else np.squeeze(n, axis=axis), (a,), backward)


# ---------------------------------------------------------------- sampling

_DX = np.array([0, 1, 0, 1])
_DY = np.array([0, 0, 1, 1])

def grid_sample(level, x, y):
    """Bilinear lookup with zero padding.

    ``level`` has shape (B, H, W, C); ``x`` and ``y`` share a shape
    (B, ...) and hold continuous cell indices, cell ``i`` being centred at
    ``i``. Returns (B, ..., C). Differentiable in the coordinates and, when
    ``level`` is a tracked Tensor, in the map values.
    """
    level = as_tensor(level)
    x, y = as_tensor(x), as_tensor(y)
    L = level.data
    nb, h, w, C = L.shape
    flat = L.reshape(-1, C)
    # outside [-1, size] every corner is padding, so clipping changes nothing
    xd = np.minimum(np.maximum(x.data, -2.0), w + 1.0)
    yd = np.minimum(np.maximum(y.data, -2.0), h + 1.0)
    x0f = np.floor(xd)
    y0f = np.floor(yd)
    fx = xd - x0f
    fy = yd - y0f
    # corner axis first, ordered (0,0), (1,0), (0,1), (1,1) as (dx, dy)
    xi = x0f.astype(np.intp) + _DX.reshape((4,) + (1,) * xd.ndim)
    yi = y0f.astype(np.intp) + _DY.reshape((4,) + (1,) * xd.ndim)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    base = (np.arange(nb) * (h * w)).reshape((nb,) + (1,) * (xd.ndim - 1))
    idx = base + np.where(valid, yi * w + xi, 0)
    vals = flat[idx]  # (4, B, ..., C)
    wx = np.stack([1.0 - fx, fx, 1.0 - fx, fx]) * valid
    wy = np.stack([1.0 - fy, 1.0 - fy, fy, fy]) * valid
    wgt = wx * wy
    out = (wgt[..., None] * vals).sum(axis=0)

    def backward(g):
        gv = (g * vals).sum(axis=-1)
        sx = _DX.reshape((4,) + (1,) * xd.ndim) * 2.0 - 1.0
        sy = _DY.reshape((4,) + (1,) * xd.ndim) * 2.0 - 1.0
        inside_x = (x.data > -2.0) & (x.data < w + 1.0)
        inside_y = (y.data > -2.0) & (y.data < h + 1.0)
        gx = (sx * wy * gv).sum(axis=0) * inside_x
        gy = (sy * wx * gv).sum(axis=0) * inside_y
        glevel = None
        if level.requires_grad:
            gflat = np.zeros(flat.shape)
            np.add.at(gflat, idx.reshape(-1), (wgt[..., None] * g).reshape(-1, C))
            glevel = gflat.reshape(L.shape)
        return glevel, gx, gy

    return _node(out, (level, x, y), backward)

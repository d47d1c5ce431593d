"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the handful of operations needed by a small convolutional
encoder-decoder and the nested-class losses are provided.  There is no
general broadcasting: binary ops take operands of identical shape or a
Python scalar.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


class Tensor:
    """A node in the differentiation graph.

    ``grad`` stays ``None`` until a backward pass reaches the node.  Calling
    :meth:`backward` twice without :meth:`zero_grad` accumulates.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, values, requires_grad=False, _parents=(), op=""):
        self.values = np.array(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.values

    def item(self):
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values, parents, op):
    requires = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=requires, _parents=parents if requires else (), op=op)


def backward(root):
    """Populate ``grad`` on every ancestor of ``root`` that requires it.

    Gradients add onto whatever ``grad`` already holds.
    """
    if root.values.size != 1:
        raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
    order = []
    seen = set()
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

    grads = {id(root): np.ones_like(root.values)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        node._accumulate(g)
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# -- pointwise ---------------------------------------------------------------


def _check_same(a, b, name):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    if not isinstance(b, Tensor):
        if not isinstance(a, Tensor):
            return Tensor(a + b)
        out = _make(a.values + b, (a,), "add")
        out._backward = lambda g: (g,)
        return out
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same(a, b, "add")
    out = _make(a.values + b.values, (a, b), "add")
    out._backward = lambda g: (g, g)
    return out


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -b)
    if not isinstance(a, Tensor):
        return add(scale(b, -1.0), a)
    _check_same(a, b, "sub")
    out = _make(a.values - b.values, (a, b), "sub")
    out._backward = lambda g: (g, -g)
    return out


def mul(a, b):
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            return scale(a, float(b))
        b = Tensor(b)
    if not isinstance(a, Tensor):
        return mul(b, a)
    _check_same(a, b, "mul")
    out = _make(a.values * b.values, (a, b), "mul")
    out._backward = lambda g: (g * b.values, g * a.values)
    return out


def scale(a, k):
    out = _make(a.values * k, (a,), "scale")
    out._backward = lambda g: (g * k,)
    return out


def square(a):
    out = _make(a.values * a.values, (a,), "square")
    out._backward = lambda g: (2.0 * a.values * g,)
    return out


def absolute(a):
    out = _make(np.abs(a.values), (a,), "abs")
    # subgradient 0 at the origin
    out._backward = lambda g: (g * np.sign(a.values),)
    return out


def clamp_min(a, lo):
    """max(a, lo); the gradient flows only where ``a > lo``."""
    mask = a.values > lo
    out = _make(np.where(mask, a.values, lo), (a,), "clamp_min")
    out._backward = lambda g: (g * mask,)
    return out


def relu(a):
    return _relabel(clamp_min(a, 0.0), "relu")


def _relabel(t, op):
    t.op = op
    return t


def log(a):
    out = _make(np.log(a.values), (a,), "log")
    out._backward = lambda g: (g / a.values,)
    return out


def exp(a):
    v = np.exp(a.values)
    out = _make(v, (a,), "exp")
    out._backward = lambda g: (g * v,)
    return out


def sigmoid_array(x):
    """Overflow-free logistic function on a numpy array."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    s = sigmoid_array(a.values)
    out = _make(s, (a,), "sigmoid")
    out._backward = lambda g: (g * s * (1.0 - s),)
    return out


def tensor_sum(a):
    out = _make(np.array(a.values.sum()), (a,), "sum")
    out._backward = lambda g: (np.full(a.shape, float(g)),)
    return out


def mean(a):
    n = a.values.size
    out = _make(np.array(a.values.mean()), (a,), "mean")
    out._backward = lambda g: (np.full(a.shape, float(g) / n),)
    return out


def reshape(a, shape):
    out = _make(a.values.reshape(shape), (a,), "reshape")
    out._backward = lambda g: (g.reshape(a.shape),)
    return out


def log_softmax(a, axis=1):
    """Numerically stable log-softmax along ``axis``."""
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    v = shifted - lse
    out = _make(v, (a,), "log_softmax")

    def _bw(g):
        p = np.exp(v)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    out._backward = _bw
    return out


# -- image ops ---------------------------------------------------------------


def _im2col(xp, kh, kw, Ho, Wo):
    """Padded ``[B,C,H',W']`` -> columns ``[C*kh*kw, B*Ho*Wo]``."""
    B, C = xp.shape[:2]
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((C, kh, kw, B, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + Ho, j:j + Wo]
    return cols.reshape(C * kh * kw, B * Ho * Wo)


def _pad(x, ph, pw):
    if not (ph or pw):
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x, kernel, bias, padding="same"):
    """2-D cross-correlation of ``x[B,Cin,H,W]`` with ``kernel[Cout,Cin,kh,kw]``."""
    if x.values.ndim != 4 or kernel.values.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    B, Cin, H, W = x.shape
    Cout, Ck, kh, kw = kernel.shape
    if Ck != Cin:
        raise ShapeError(f"conv2d: input {x.shape} has {Cin} channels but kernel {kernel.shape} expects {Ck}")
    if bias.shape != (Cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: same padding needs odd kernel sizes, got kernel {kernel.shape}")
        ph, pw = kh // 2, kw // 2
        Ho, Wo = H, W
    elif padding == "valid":
        ph = pw = 0
        Ho, Wo = H - kh + 1, W - kw + 1
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"conv2d: kernel {kernel.shape} larger than input {x.shape}")
    else:
        raise ValueError(f"unknown padding {padding!r}")

    cols = _im2col(_pad(x.values, ph, pw), kh, kw, Ho, Wo)
    kmat = kernel.values.reshape(Cout, -1)
    y = kmat @ cols
    y += bias.values[:, None]
    out_values = y.reshape(Cout, B, Ho, Wo).transpose(1, 0, 2, 3)
    out = _make(np.ascontiguousarray(out_values), (x, kernel, bias), "conv2d")

    def _bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(Cout, B * Ho * Wo)
        gk = (gm @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gb = gm.sum(axis=1) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            # input gradient = full correlation of g with the flipped, transposed kernel
            flipped = kernel.values[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(Cin, -1)
            gcols = _im2col(_pad(g, kh - 1 - ph, kw - 1 - pw), kh, kw, H, W)
            gx = np.ascontiguousarray((flipped @ gcols).reshape(Cin, B, H, W).transpose(1, 0, 2, 3))
        return gx, gk, gb

    out._backward = _bw
    return out


def max_pool2(x):
    """2x2 max pooling with stride 2; ties route the gradient to the first maximum."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2: spatial dims must be even, got {x.shape}")
    win = x.values.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    v = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = _make(v, (x,), "max_pool2")

    def _bw(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    out._backward = _bw
    return out


def upsample2(x):
    """Nearest-neighbour upsampling by a factor of two."""
    B, C, H, W = x.shape
    v = np.repeat(np.repeat(x.values, 2, axis=2), 2, axis=3)
    out = _make(v, (x,), "upsample2")
    out._backward = lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)
    return out


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} are incompatible")
    ca = a.shape[1]
    out = _make(np.concatenate([a.values, b.values], axis=1), (a, b), "concat")
    out._backward = lambda g: (g[:, :ca], g[:, ca:])
    return out

"""A minimal reverse-mode differentiable tensor and the layers the GAN needs.

Arrays are NHWC. Every op records its parents and a closure that maps the
output gradient to parent gradients; ``Tensor.backward`` replays them in
reverse topological order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LRELU_SLOPE = 0.1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, parents=(a, b),
                  backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data - b.data, parents=(a, b),
                  backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, parents=(a, b),
                  backward=lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(a):
    return Tensor(a.data**2, parents=(a,), backward=lambda g: (2 * a.data * g,))


def absolute(a):
    return Tensor(np.abs(a.data), parents=(a,), backward=lambda g: (np.sign(a.data) * g,))


def mean(a):
    n = a.data.size
    return Tensor(a.data.mean(), parents=(a,),
                  backward=lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),))


def lrelu(x, slope=LRELU_SLOPE):
    """x for x > 0, slope * x otherwise."""
    x = as_tensor(x)
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)
    return Tensor(out, parents=(x,), backward=lambda g: (np.where(positive, g, slope * g),))


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor(out, parents=(x,), backward=lambda g: (g * out * (1 - out),))


# -- structural --------------------------------------------------------------

def concat_channels(a, b):
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape}")
    ca = a.shape[-1]
    return Tensor(np.concatenate([a.data, b.data], axis=-1), parents=(a, b),
                  backward=lambda g: (g[..., :ca], g[..., ca:]))


def avgpool(x, k):
    """Non-overlapping k x k average pooling (stride k)."""
    n, h, w, c = x.shape
    if h % k or w % k:
        raise ValueError(f"spatial size {h}x{w} not divisible by {k}")
    out = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def backward(g):
        g = np.repeat(np.repeat(g, k, axis=1), k, axis=2)
        return (g / (k * k),)

    return Tensor(out, parents=(x,), backward=backward)


def avgpool2(x):
    return avgpool(x, 2)


def avgpool_8x8(x):
    return avgpool(x, 8)


def flatten(x):
    shape = x.shape
    return Tensor(x.data.reshape(shape[0], -1), parents=(x,), backward=lambda g: (g.reshape(shape),))


def _up_axis(x, axis):
    """Double ``x`` along ``axis``: half-pixel centres, taps (0.75, 0.25), edges clamped."""
    x = np.moveaxis(x, axis, 0)
    xp = np.concatenate([x[:1], x, x[-1:]], axis=0)
    out = np.empty((2 * x.shape[0],) + x.shape[1:], dtype=x.dtype)
    out[0::2] = 0.75 * x + 0.25 * xp[:-2]
    out[1::2] = 0.75 * x + 0.25 * xp[2:]
    return np.moveaxis(out, 0, axis)


def _up_axis_adjoint(g, axis):
    g = np.moveaxis(g, axis, 0)
    even, odd = g[0::2], g[1::2]
    n = even.shape[0]
    gp = np.zeros((n + 2,) + even.shape[1:], dtype=g.dtype)
    gp[1:-1] = 0.75 * (even + odd)
    gp[:-2] += 0.25 * even
    gp[2:] += 0.25 * odd
    gx = gp[1:-1]
    # the clamped pad samples are copies of the edge samples
    gx[0] += gp[0]
    gx[-1] += gp[-1]
    return np.moveaxis(gx, 0, axis)


def bilinear_up2(x):
    """2x bilinear up-sampling in both spatial dimensions."""
    out = _up_axis(_up_axis(x.data, 1), 2)
    return Tensor(out, parents=(x,), backward=lambda g: (_up_axis_adjoint(_up_axis_adjoint(g, 2), 1),))


# -- linear layers -----------------------------------------------------------

def _im2col(xpad, k, stride, ho, wo):
    # (n, ho, wo, k, k, c) window view, copied once in (tap, channel) order
    win = sliding_window_view(xpad, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d(x, weight, bias=None, stride=1):
    """Zero-padded ('same') convolution, weight shape (k, k, c_in, c_out), k odd.

    With stride 2 the output is half the input size (even inputs).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    k, k2, cin, cout = weight.shape
    n, h, w, c = x.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square and odd, got {weight.shape}")
    if c != cin:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    p = k // 2
    ho, wo = (h + 2 * p - k) // stride + 1, (w + 2 * p - k) // stride + 1
    xpad = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    needs_grad = x.requires_grad or weight.requires_grad or (bias is not None and as_tensor(bias).requires_grad)
    if not needs_grad:
        # shift-and-accumulate keeps memory at the output size for large inference tiles
        out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x.data, weight.data))
        for i in range(k):
            for j in range(k):
                out += xpad[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] @ weight.data[i, j]
        if bias is not None:
            out += as_tensor(bias).data
        return Tensor(out)
    cols = _im2col(xpad, k, stride, ho, wo).reshape(-1, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gmat = g.astype(out.dtype, copy=False).reshape(-1, cout)
        gw = (cols.T @ gmat).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            # one contiguous matmul per tap; slicing a full column gradient is much slower
            g4 = gmat.reshape(n, ho, wo, cout)
            gpad = np.zeros_like(xpad)
            for i in range(k):
                for j in range(k):
                    gpad[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g4 @ weight.data[i, j].T
            gx = gpad[:, p:p + h, p:p + w, :] if p else gpad
        grads = (gx, gw)
        if bias is not None:
            grads += (gmat.sum(axis=0),)
        return grads

    return Tensor(out, parents=parents, backward=backward)


def fully_connected(x, weight, bias=None):
    """(B, n_in) @ (n_in, n_out) + bias."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        grads = (g @ weight.data.T, x.data.T @ g)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    return Tensor(out, parents=parents, backward=backward)

"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the fusion network needs are provided. Every op builds
its output eagerly with numpy and records a closure that maps the upstream
gradient to one gradient per parent. :func:`backward` walks the recorded
graph in reverse topological order.

Feature maps are ``(N, C, H, W)``; the convolution and pooling helpers also
accept a single ``(C, H, W)`` map and return a map of the same rank.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "topological_order",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "relu",
    "softmax",
    "cross_entropy",
    "concat",
    "conv2d",
    "depthwise_conv2d",
    "depthwise_multiscale_conv",
    "MULTISCALE_KERNELS",
    "avgpool2d",
    "upsample_nearest",
    "batchnorm",
    "global_avg_pool",
    "linear",
]

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each listed after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode accumulation from a scalar ``loss``.

    Leaf tensors reached from ``loss`` get ``.grad`` overwritten. When
    ``params`` is given, returns ``{name: gradient}`` for each entry, with
    zeros for parameters the loss does not depend on.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        if node._backward is None:
            node.grad = None
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    if params is None:
        return {}
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


# ----------------------------------------------------------------------------
# elementwise and reductions


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(np.matmul(a.data, b.data), (a, b), fn)


def _sum(x: Tensor, axis, keepdims: bool) -> Tensor:
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), fn)


def _mean(x: Tensor, axis, keepdims: bool) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(out, (x,), fn)


def _reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def _transpose(x: Tensor, axes) -> Tensor:
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _node(
        np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),)
    )


def _getitem(x: Tensor, index) -> Tensor:
    def fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(x.data[index], (x,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))  # maximum keeps NaN visible


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _node(out, (x,), fn)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of ``(N, K)`` logits against 0-based targets."""
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data - np.max(logits.data, axis=1, keepdims=True)
    logsum = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    loss = -np.mean(logp[np.arange(n), targets])

    def fn(g):
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        return (g * p / n,)

    return _node(np.asarray(loss), (logits,), fn)


# ----------------------------------------------------------------------------
# spatial ops


def _batched(op):
    """Let a 4-D op accept a single (C, H, W) map."""

    def wrapper(x, *args, **kwargs):
        x = as_tensor(x)
        if x.ndim == 3:
            out = op(x.reshape((1,) + x.shape), *args, **kwargs)
            return out.reshape(out.shape[1:])
        if x.ndim != 4:
            raise ValueError(f"expected a (C,H,W) or (N,C,H,W) map, got shape {x.shape}")
        return op(x, *args, **kwargs)

    wrapper.__name__ = op.__name__.lstrip("_")
    wrapper.__doc__ = op.__doc__
    return wrapper


def _conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``(N, Cin, H, W)`` with ``(Cout, Cin, k, k)`` weights."""
    weight = as_tensor(weight)
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ValueError(
            f"conv2d: input has {cin} channels but weights expect {wcin} "
            f"(input shape {x.shape}, weight shape {weight.shape})"
        )
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {k}x{k2}")
    if pad < 0 or stride < 1:
        raise ValueError("conv2d: need pad >= 0 and stride >= 1")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < k or wp < k:
        raise ValueError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def fn(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                    "nohw,oc->nchw", g, weight.data[:, :, i, j], optimize=True
                )
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, fn)


conv2d = _batched(_conv2d)


def _depthwise_conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel ``(C, k, k)`` cross-correlation with 'same' zero padding."""
    weight = as_tensor(weight)
    n, c, h, w = x.shape
    if weight.ndim != 3 or weight.shape[0] != c:
        raise ValueError(
            f"depthwise_conv2d: weight shape {weight.shape} does not match {c} channels"
        )
    k = weight.shape[1]
    if k % 2 == 0 or weight.shape[2] != k:
        raise ValueError(f"depthwise_conv2d: kernel must be square and odd, got {weight.shape[1:]}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out = np.zeros((n, c, h, w))
    for i in range(k):
        for j in range(k):
            out += weight.data[None, :, i, j, None, None] * xp[:, :, i : i + h, j : j + w]

    def fn(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + h, j : j + w] += weight.data[None, :, i, j, None, None] * g
                gw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i : i + h, j : j + w])
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gw

    return _node(out, (x, weight), fn)


depthwise_conv2d = _batched(_depthwise_conv2d)

MULTISCALE_KERNELS = (1, 3, 5, 7)


def depthwise_multiscale_conv(x: Tensor, kernels: Sequence[Tensor]) -> Tensor:
    """Split channels into four equal groups, convolve them depthwise with
    1x1, 3x3, 5x5 and 7x7 kernels respectively, and concatenate."""
    x = as_tensor(x)
    axis = x.ndim - 3
    c = x.shape[axis]
    if c % 4:
        raise ValueError(f"multiscale depthwise conv needs channels divisible by 4, got {c}")
    if len(kernels) != len(MULTISCALE_KERNELS):
        raise ValueError("expected one kernel tensor per scale (1, 3, 5, 7)")
    q = c // 4
    parts = []
    for g, (size, kern) in enumerate(zip(MULTISCALE_KERNELS, kernels)):
        if tuple(kern.shape) != (q, size, size):
            raise ValueError(f"group {g}: expected kernel shape {(q, size, size)}, got {kern.shape}")
        index = (slice(None),) * axis + (slice(g * q, (g + 1) * q),)
        parts.append(depthwise_conv2d(x[index], kern))
    return concat(parts, axis=axis)


def _avgpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ValueError(f"avgpool2d: input {h}x{w} smaller than window {k}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = windows.mean(axis=(4, 5))

    def fn(g):
        gx = np.zeros_like(x.data)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
        return (gx,)

    return _node(out, (x,), fn)


avgpool2d = _batched(_avgpool2d)


def _upsample_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resize; output pixel i reads input floor(i * in / out)."""
    n, c, h, w = x.shape
    ho, wo = size
    rows = (np.arange(ho) * h) // ho
    cols = (np.arange(wo) * w) // wo
    out = x.data[:, :, rows[:, None], cols[None, :]]

    def fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        return (gx,)

    return _node(out, (x,), fn)


upsample_nearest = _batched(_upsample_nearest)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation of a ``(N, C, H, W)`` or ``(C, H, W)`` map.

    In training mode the batch statistics (biased variance) are used and the
    running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    In eval mode the running buffers are used; untouched buffers start at
    mean 0 and variance 1.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = x.ndim - 3
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm: gamma/beta must have length {c}")
    reduce = tuple(a for a in range(x.ndim) if a != axis)
    bshape = [1] * x.ndim
    bshape[axis] = c
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if training:
        mu = x.data.mean(axis=reduce, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=reduce, keepdims=True)
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * invstd
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu.reshape(c)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.reshape(c)
        m = x.data.size // c

        def fn(g):
            dxhat = g * g_
            dx = invstd / m * (
                m * dxhat
                - dxhat.sum(axis=reduce, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=reduce, keepdims=True)
            )
            return dx, (g * xhat).sum(axis=reduce), g.sum(axis=reduce)

    else:
        invstd = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * invstd

        def fn(g):
            return g * g_ * invstd, (g * xhat).sum(axis=reduce), g.sum(axis=reduce)

    return _node(xhat * g_ + b_, (x, gamma, beta), fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """``(N, C, H, W) -> (N, C)``."""
    return as_tensor(x).mean(axis=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``(N, in)`` inputs and ``(out, in)`` weights."""
    out = matmul(x, as_tensor(weight).transpose(1, 0))
    return out + bias if bias is not None else out


def parameters_finite(tensors: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(t.data)) for t in tensors)

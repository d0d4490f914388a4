"""Minimal reverse-mode automatic differentiation on numpy arrays.

The engine records an implicit DAG: every operation returns a new
:class:`Tensor` holding references to its parent tensors and a closure that
propagates the vector-Jacobian product. Calling ``backward`` on a scalar
tensor walks the graph once in reverse topological order. Gradients of leaf
tensors accumulate additively across backward calls until ``zero_grad`` is
called; gradients of intermediate nodes are cleared at the start of each
backward pass. Dropping the loss tensor releases every intermediate buffer,
while leaves (parameters) persist.

Images are laid out channel-first: spatial operations act on the last two
axes. Only the broadcasting the blended-slice model needs is supported:
identical shapes, or tensor against scalar (python number or 0-d tensor).
No global mutable state is kept, so independent graphs may live on separate
OS threads.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, UsageError

_FLOAT_TYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_TYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional array with value, lazily allocated gradient, and graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Propagate d(self)/d(leaf) for every reachable requires_grad tensor.

        ``self`` must hold a single value. Leaf gradients accumulate across
        repeated calls; intermediate gradients are reset per call.
        """
        if self.data.size != 1:
            raise UsageError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        for node in topo:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _make_node(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g, shape):
    # only scalar-vs-tensor broadcasting exists, so any mismatch reduces to 0-d
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ConfigurationError(
            f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}"
        )


# -- elementwise operations ------------------------------------------------


def add(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    _check_same_shape(a, b, "add")
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(g, b.data.shape))

    return _make_node(data, (a, b), backward)


def sub(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    _check_same_shape(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(-g, b.data.shape))

    return _make_node(data, (a, b), backward)


def mul(a, b):
    """Elementwise product; either operand may be a scalar."""
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        c = float(b)
        data = a.data * c

        def backward_scalar(g):
            _accumulate(a, g * c)

        return _make_node(data, (a,), backward_scalar)
    if isinstance(a, (int, float)):
        return mul(b, a)
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    _check_same_shape(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _reduce_to(g * b.data, a.data.shape))
        _accumulate(b, _reduce_to(g * a.data, b.data.shape))

    return _make_node(data, (a, b), backward)


def tsum(x):
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _make_node(data, (x,), backward)


def tmean(x):
    n = x.data.size
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def backward(g):
        _accumulate(x, np.broadcast_to(g / n, x.data.shape))

    return _make_node(data, (x,), backward)


def square(x):
    data = x.data * x.data

    def backward(g):
        _accumulate(x, g * (2.0 * x.data))

    return _make_node(data, (x,), backward)


def absolute(x):
    # subgradient at 0 follows the positive branch, like leaky_relu
    sign = np.where(x.data >= 0, 1.0, -1.0).astype(x.data.dtype)
    data = np.abs(x.data)

    def backward(g):
        _accumulate(x, g * sign)

    return _make_node(data, (x,), backward)


def sigmoid(x):
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(x, g * (out * (1.0 - out)))

    return _make_node(out, (x,), backward)


def leaky_relu(x, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky_relu slope must be in (0,1), got {slope}")
    factor = np.where(x.data >= 0, 1.0, slope).astype(x.data.dtype)
    data = x.data * factor

    def backward(g):
        _accumulate(x, g * factor)

    return _make_node(data, (x,), backward)


def concat_channels(tensors):
    """Concatenate [C,H,W] tensors along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise ConfigurationError("concat_channels: empty input")
    spatial = tensors[0].data.shape[1:]
    for t in tensors:
        if t.data.shape[1:] != spatial:
            raise ConfigurationError(
                f"concat_channels: spatial mismatch {t.data.shape} vs {spatial}"
            )
    data = np.concatenate([t.data for t in tensors], axis=0)
    splits = np.cumsum([t.data.shape[0] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=0)):
            _accumulate(t, piece)

    return _make_node(data, tuple(tensors), backward)


def spatial_gradient(x, axis):
    """Forward difference along 'x' (columns) or 'y' (rows), zero-padded at the far edge."""
    if axis not in ("x", "y"):
        raise ConfigurationError(f"spatial_gradient axis must be 'x' or 'y', got {axis!r}")
    ax = -1 if axis == "x" else -2
    d = x.data
    if d.ndim < 2:
        raise ConfigurationError("spatial_gradient needs at least 2 dims")
    data = np.zeros_like(d)
    head = [slice(None)] * d.ndim
    tail = [slice(None)] * d.ndim
    head[ax] = slice(0, d.shape[ax] - 1)
    tail[ax] = slice(1, d.shape[ax])
    head, tail = tuple(head), tuple(tail)
    data[head] = d[tail] - d[head]

    def backward(g):
        gx = np.zeros_like(d)
        gx[head] -= g[head]
        gx[tail] += g[head]
        _accumulate(x, gx)

    return _make_node(data, (x,), backward)


def element(x, index):
    """Single element as a 0-d tensor; gradient scatters back to that element."""
    index = tuple(index)
    data = np.asarray(x.data[index], dtype=x.data.dtype)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        _accumulate(x, gx)

    return _make_node(data, (x,), backward)


def reshape(x, shape):
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _make_node(data, (x,), backward)


def crop2d(x, h, w):
    """Keep the top-left h-by-w window of the last two axes."""
    H, W = x.data.shape[-2:]
    if h > H or w > W:
        raise ConfigurationError(f"crop2d: target ({h},{w}) exceeds input ({H},{W})")
    data = np.ascontiguousarray(x.data[..., :h, :w])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., :h, :w] = g
        _accumulate(x, gx)

    return _make_node(data, (x,), backward)


# -- padding ---------------------------------------------------------------


def _reflect_index(i, n):
    # reflection without edge duplication, valid for any pad width
    if n == 1:
        return 0
    m = 2 * n - 2
    j = i % m
    if j >= n:
        j = m - j
    return j


def _fold_reflect_axis(g, p, ax):
    """Transpose of symmetric reflect padding along one axis (fast path p <= n-1)."""
    n = g.shape[ax] - 2 * p
    idx = lambda s: tuple(
        s if d == ax % g.ndim else slice(None) for d in range(g.ndim)
    )
    out = g[idx(slice(p, p + n))].copy()
    if p > 0:
        out[idx(slice(1, p + 1))] += g[idx(slice(p - 1, None, -1))]
        out[idx(slice(n - 1 - p, n - 1))] += g[idx(slice(p + n + p - 1, p + n - 1, -1))]
    return out


def pad2d(x, pads, mode="reflect"):
    """Pad the last two axes; pads = (top, bottom, left, right)."""
    top, bottom, left, right = pads
    if min(pads) < 0:
        raise ConfigurationError(f"pad2d: negative pad {pads}")
    spec = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    H, W = x.data.shape[-2:]
    if mode == "zeros":
        data = np.pad(x.data, spec, mode="constant")

        def backward_zeros(g):
            _accumulate(x, g[..., top : top + H, left : left + W])

        return _make_node(data, (x,), backward_zeros)

    if mode != "reflect":
        raise ConfigurationError(f"pad2d: unknown mode {mode!r}")
    if H < 1 or W < 1:
        raise ConfigurationError("pad2d: empty spatial axes")
    data = np.pad(x.data, spec, mode="reflect") if (H > 1 and W > 1) else None
    if data is None or max(top, bottom) > H - 1 or max(left, right) > W - 1:
        # wide pads or degenerate axes: explicit index maps, scatter-add backward
        ih = np.array([_reflect_index(i - top, H) for i in range(H + top + bottom)])
        iw = np.array([_reflect_index(j - left, W) for j in range(W + left + right)])
        data = x.data[..., ih[:, None], iw[None, :]]

        def backward_general(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (..., ih[:, None], iw[None, :]), g)
            _accumulate(x, gx)

        return _make_node(data, (x,), backward_general)

    if (top, bottom) != (left, right) or top != bottom:
        # asymmetric fast path: fold each side independently
        def backward_asym(g):
            n = g.shape[-2] - top - bottom
            out = g[..., top : top + n, :].copy()
            if top > 0:
                out[..., 1 : top + 1, :] += g[..., top - 1 :: -1, :]
            if bottom > 0:
                out[..., n - 1 - bottom : n - 1, :] += g[
                    ..., : top + n - 1 : -1, :
                ]
            m = out.shape[-1] - left - right
            out2 = out[..., left : left + m].copy()
            if left > 0:
                out2[..., 1 : left + 1] += out[..., left - 1 :: -1]
            if right > 0:
                out2[..., m - 1 - right : m - 1] += out[..., : left + m - 1 : -1]
            _accumulate(x, out2)

        return _make_node(data, (x,), backward_asym)

    p = top

    def backward(g):
        g = _fold_reflect_axis(g, p, -2)
        g = _fold_reflect_axis(g, p, -1)
        _accumulate(x, g)

    return _make_node(data, (x,), backward)


# -- convolution -----------------------------------------------------------


def conv2d(x, kernel, bias=None, stride=1, padding="reflect"):
    """Cross-correlate [C_in,H,W] with [C_out,C_in,kH,kW] (no kernel flip).

    padding 'reflect' or 'zeros' preserves H,W at stride 1; 'valid' shrinks.
    Odd kernels only; stride 1 or 2.
    """
    if x.data.ndim != 3:
        raise ConfigurationError(f"conv2d input must be [C,H,W], got {x.data.shape}")
    if kernel.data.ndim != 4:
        raise ConfigurationError(
            f"conv2d kernel must be [C_out,C_in,kH,kW], got {kernel.data.shape}"
        )
    c_out, c_in, kh, kw = kernel.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d kernel size must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ConfigurationError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.data.shape[0] != c_in:
        raise ConfigurationError(
            f"conv2d: input has {x.data.shape[0]} channels, kernel expects {c_in}"
        )
    if padding == "valid":
        xp = x
    elif padding in ("reflect", "zeros"):
        xp = pad2d(x, (kh // 2, kh // 2, kw // 2, kw // 2), mode=padding)
    else:
        raise ConfigurationError(f"conv2d: unknown padding {padding!r}")
    return _conv2d_valid(xp, kernel, bias, stride)


def _conv2d_valid(xp, kernel, bias, stride):
    c_out, c_in, kh, kw = kernel.data.shape
    H, W = xp.data.shape[-2:]
    if H < kh or W < kw:
        raise ConfigurationError(
            f"conv2d: padded input {H}x{W} smaller than kernel {kh}x{kw}"
        )
    windows = sliding_window_view(xp.data, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = windows.shape[1], windows.shape[2]
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(
        c_in * kh * kw, ho * wo
    )
    kmat = kernel.data.reshape(c_out, c_in * kh * kw)
    out = (kmat @ cols).reshape(c_out, ho, wo)
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise ConfigurationError(
                f"conv2d: bias shape {bias.data.shape} != ({c_out},)"
            )
        out = out + bias.data[:, None, None]

    def backward(g):
        gmat = g.reshape(c_out, ho * wo)
        if kernel.requires_grad:
            _accumulate(kernel, (gmat @ cols.T).reshape(kernel.data.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(1, 2)))
        if xp.requires_grad:
            # one GEMM yields every tap's contribution; the loop only scatters
            blocks = (kmat.T @ gmat).reshape(c_in, kh, kw, ho, wo)
            gx = np.zeros_like(xp.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += blocks[:, i, j]
            _accumulate(xp, gx)

    parents = (xp, kernel) if bias is None else (xp, kernel, bias)
    return _make_node(out, parents, backward)


# -- resampling ------------------------------------------------------------


def downsample2(x):
    """Halve the last two axes by 2x2 mean pooling (reflect-pad odd sizes to even)."""
    H, W = x.data.shape[-2:]
    if H == 0 or W == 0:
        raise ConfigurationError("downsample2: zero-size spatial axis")
    if H % 2 or W % 2:
        x = pad2d(x, (0, H % 2, 0, W % 2), mode="reflect")
    d = x.data
    pooled = 0.25 * (
        d[..., 0::2, 0::2] + d[..., 1::2, 0::2] + d[..., 0::2, 1::2] + d[..., 1::2, 1::2]
    )

    def backward(g):
        gx = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        _accumulate(x, gx.astype(d.dtype, copy=False))

    return _make_node(pooled, (x,), backward)


def _upsample_axis(a, ax):
    n = a.shape[ax]
    idx = lambda s: tuple(s if d == ax % a.ndim else slice(None) for d in range(a.ndim))
    shape = list(a.shape)
    shape[ax] = 2 * n
    out = np.empty(shape, a.dtype)
    prev = np.concatenate([a[idx(slice(0, 1))], a[idx(slice(0, n - 1))]], axis=ax)
    nxt = np.concatenate([a[idx(slice(1, n))], a[idx(slice(n - 1, n))]], axis=ax)
    out[idx(slice(0, None, 2))] = 0.25 * prev + 0.75 * a
    out[idx(slice(1, None, 2))] = 0.75 * a + 0.25 * nxt
    return out


def _upsample_axis_transpose(g, ax):
    n = g.shape[ax] // 2
    idx = lambda s: tuple(s if d == ax % g.ndim else slice(None) for d in range(g.ndim))
    ge = g[idx(slice(0, None, 2))]
    go = g[idx(slice(1, None, 2))]
    out = 0.75 * (ge + go)
    out[idx(slice(0, n - 1))] += 0.25 * ge[idx(slice(1, n))]
    out[idx(slice(1, n))] += 0.25 * go[idx(slice(0, n - 1))]
    out[idx(slice(0, 1))] += 0.25 * ge[idx(slice(0, 1))]
    out[idx(slice(n - 1, n))] += 0.25 * go[idx(slice(n - 1, n))]
    return out


def upsample2(x):
    """Double the last two axes by bilinear interpolation (half-pixel centers)."""
    H, W = x.data.shape[-2:]
    if H == 0 or W == 0:
        raise ConfigurationError("upsample2: zero-size spatial axis")
    data = _upsample_axis(_upsample_axis(x.data, -2), -1)

    def backward(g):
        gx = _upsample_axis_transpose(_upsample_axis_transpose(g, -1), -2)
        _accumulate(x, gx.astype(x.data.dtype, copy=False))

    return _make_node(data, (x,), backward)


def backward(loss):
    """Module-level alias for ``loss.backward()``."""
    loss.backward()

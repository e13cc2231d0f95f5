"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every op returns a new Tensor holding a
backward closure and references to its parents. Calling ``backward`` on a
scalar walks the graph in reverse topological order and accumulates (+=)
gradients on leaf tensors created with ``requires_grad=True``. Gradients
persist until ``zero_grad`` is called, so repeated backward passes
accumulate, which is exactly what epoch-level gradient accumulation needs.

Only the operations the network requires exist: elementwise arithmetic,
sigmoid/tanh, channel concat/slice, "same"-padded stride-1 conv2d, spatial
gathering, and full reduction to a scalar. No broadcasting beyond
scalar-with-tensor.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None  # closure(flow_grad) -> list of parent grads
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def is_leaf(self):
        return self._backward is None

    # ---- graph construction helpers -------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # ---- elementwise ops ------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self._result(self.data + other, [self],
                                lambda g: [g])
        _check_same_shape("add", self, other)
        return self._result(self.data + other.data, [self, other],
                            lambda g: [g, g])

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self._result(self.data - other, [self], lambda g: [g])
        _check_same_shape("sub", self, other)
        return self._result(self.data - other.data, [self, other],
                            lambda g: [g, -g])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self._result(self.data * other, [self],
                                lambda g: [g * other])
        _check_same_shape("mul", self, other)
        a, b = self, other
        return self._result(a.data * b.data, [a, b],
                            lambda g: [g * b.data, g * a.data])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        return self._result(s, [self], lambda g: [g * s * (1.0 - s)])

    def tanh(self):
        t = np.tanh(self.data)
        return self._result(t, [self], lambda g: [g * (1.0 - t * t)])

    def sum(self):
        shape = self.data.shape
        return self._result(self.data.sum(), [self],
                            lambda g: [np.full(shape, g)])

    # ---- backward -------------------------------------------------------

    def backward(self):
        if self.data.shape != ():
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        flow = {id(self): np.array(1.0)}
        for node in order:
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=np.float64).reshape(parent.data.shape)
                if id(parent) in flow:
                    flow[id(parent)] = flow[id(parent)] + pg
                else:
                    flow[id(parent)] = pg

    def check_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite values in {what}")
        return self


def _toposort(root):
    """Reverse topological order (outputs first), iterative DFS."""
    order = []
    seen = set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def concat(tensors, axis=-1):
    """Concatenate along an axis; backward splits the gradient back."""
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, splits, axis=axis)

    return Tensor._result(out, list(tensors), backward)


def channel_slice(t, lo, hi):
    """Slice the last axis; backward zero-pads around the slice."""
    shape = t.data.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., lo:hi] = g
        return [full]

    return Tensor._result(t.data[..., lo:hi], [t], backward)


def gather_regions(rep, idx):
    """Pick per-region vectors: rep[W,H,L] gathered at idx rows (i,j) -> [N,L]."""
    idx = np.asarray(idx, dtype=np.intp)
    rows, cols = idx[:, 0], idx[:, 1]
    shape = rep.data.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, (rows, cols), g)
        return [full]

    return Tensor._result(rep.data[rows, cols], [rep], backward)


def conv2d(x, kernel, bias):
    """Same-padded stride-1 2D convolution (cross-correlation form).

    x: [H,W,Cin], kernel: [kh,kw,Cin,Cout], bias: [Cout] -> [H,W,Cout].
    Out-of-bounds input is treated as zero.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4 or bias.data.ndim != 1:
        raise ValueError(
            f"conv2d: bad ranks x{x.data.shape} k{kernel.data.shape} "
            f"b{bias.data.shape}")
    H, W, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if cin != kcin:
        raise ValueError(
            f"conv2d: channel mismatch input has {cin}, kernel expects {kcin}")
    if bias.data.shape[0] != cout:
        raise ValueError(
            f"conv2d: bias length {bias.data.shape[0]} != out channels {cout}")

    ph, pw = kh // 2, kw // 2
    xpad = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    # windows: [H, W, Cin, kh, kw] -> reorder to [H, W, kh, kw, Cin]
    win = sliding_window_view(xpad, (kh, kw), axis=(0, 1))
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2))
    cols = cols.reshape(H * W, kh * kw * cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(H, W, cout) + bias.data

    def backward(g):
        gflat = g.reshape(H * W, cout)
        dk = (cols.T @ gflat).reshape(kh, kw, cin, cout)
        db = gflat.sum(axis=0)
        dcols = (gflat @ kmat.T).reshape(H, W, kh, kw, cin)
        dxpad = np.zeros_like(xpad)
        for dh in range(kh):
            for dw in range(kw):
                dxpad[dh:dh + H, dw:dw + W, :] += dcols[:, :, dh, dw, :]
        dx = dxpad[ph:ph + H, pw:pw + W, :]
        return [dx, dk, db]

    return Tensor._result(out, [x, kernel, bias], backward)

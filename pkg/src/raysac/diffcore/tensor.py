"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float32 ndarray and records the ops applied to it; calling
``backward()`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into ``.grad``.  Repeated
backward calls without zeroing accumulate, matching the usual deep-learning
convention.

The primitive set is deliberately small.  There is no general broadcasting:
elementwise ops require identical shapes, except ``add``/``sub`` which also
accept a rank-1 bias against the last axis, and scalar python numbers which
are folded into ops as constants.  ``broadcast_to`` expands size-1 axes
explicitly when a broadcast is genuinely needed.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32

# When true, every op asserts its output is finite.  Off by default; the
# training loops check at loss/optimizer boundaries instead.
CHECK_FINITE = False


def _chk(arr, op):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite output of {op}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _wrap(cls, arr, parents, backward):
        # Internal constructor for op outputs: keeps arr's dtype so that a
        # float64 forward pass (used by the finite-difference oracle)
        # propagates instead of being truncated back to float32.
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("backward() on non-finite loss")
        # Iterative topological sort; graphs can reach a few hundred nodes.
        order = []
        seen = set()
        stack = [(self, False)]
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
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            a = self
            out_data = _chk(a.data + other, "add")
            return Tensor._wrap(out_data, (a,), lambda g: a._accum(g))
        a, b = self, other
        if a.data.shape == b.data.shape:
            out_data = _chk(a.data + b.data, "add")

            def back(g):
                if a.requires_grad:
                    a._accum(g)
                if b.requires_grad:
                    b._accum(g)

            return Tensor._wrap(out_data, (a, b), back)
        # bias add: (..., D) + (D,)
        if b.data.ndim == 1 and a.data.ndim >= 2 and a.data.shape[-1] == b.data.shape[0]:
            out_data = _chk(a.data + b.data, "add")

            def back(g):
                if a.requires_grad:
                    a._accum(g)
                if b.requires_grad:
                    b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))

            return Tensor._wrap(out_data, (a, b), back)
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._wrap(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        # other is a scalar here
        return (-self) + other

    def __mul__(self, other):
        a = self
        if isinstance(other, (int, float)):
            out_data = _chk(a.data * other, "mul")
            return Tensor._wrap(out_data, (a,), lambda g: a._accum(g * other))
        b = other
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
        out_data = _chk(a.data * b.data, "mul")

        def back(g):
            if a.requires_grad:
                a._accum(g * b.data)
            if b.requires_grad:
                b._accum(g * a.data)

        return Tensor._wrap(out_data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a = self
        if isinstance(other, (int, float)):
            return a * (1.0 / other)
        b = other
        if a.data.shape != b.data.shape:
            raise ValueError(f"div shape mismatch: {a.data.shape} vs {b.data.shape}")
        out_data = _chk(a.data / b.data, "div")

        def back(g):
            if a.requires_grad:
                a._accum(g / b.data)
            if b.requires_grad:
                b._accum(-g * out_data / b.data)

        return Tensor._wrap(out_data, (a, b), back)

    def __matmul__(self, other):
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul expects 2-d (m,k)@(k,n), got {a.data.shape} @ {b.data.shape}")
        out_data = _chk(a.data @ b.data, "matmul")

        def back(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)

        return Tensor._wrap(out_data, (a, b), back)

    # -- elementwise nonlinearities ------------------------------------

    def exp(self):
        a = self
        y = _chk(np.exp(a.data), "exp")
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * y))

    def log(self):
        a = self
        y = _chk(np.log(a.data), "log")
        return Tensor._wrap(y, (a,), lambda g: a._accum(g / a.data))

    def sqrt(self):
        a = self
        y = _chk(np.sqrt(a.data), "sqrt")
        return Tensor._wrap(y, (a,), lambda g: a._accum(g / (2.0 * y)))

    def square(self):
        a = self
        y = a.data * a.data
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * (2.0 * a.data)))

    def sin(self):
        a = self
        y = np.sin(a.data)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * np.cos(a.data)))

    def cos(self):
        a = self
        y = np.cos(a.data)
        return Tensor._wrap(y, (a,), lambda g: a._accum(-g * np.sin(a.data)))

    def tanh(self):
        a = self
        y = np.tanh(a.data)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * (1.0 - y * y)))

    def relu(self):
        a = self
        y = np.maximum(a.data, 0)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * (a.data > 0)))

    def sigmoid(self):
        a = self
        y = _sigmoid_np(a.data)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * y * (1.0 - y)))

    def softplus(self):
        a = self
        y = _softplus_np(a.data)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * _sigmoid_np(a.data)))

    def clip(self, lo, hi):
        a = self
        y = np.clip(a.data, lo, hi)
        mask = (a.data >= lo) & (a.data <= hi)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g * mask))

    def minimum(self, other):
        a, b = self, other
        if a.data.shape != b.data.shape:
            raise ValueError(f"minimum shape mismatch: {a.data.shape} vs {b.data.shape}")
        mask = a.data <= b.data
        y = np.where(mask, a.data, b.data)

        def back(g):
            if a.requires_grad:
                a._accum(g * mask)
            if b.requires_grad:
                b._accum(g * ~mask)

        return Tensor._wrap(y, (a, b), back)

    # -- reductions and shape ops --------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        y = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is None:
                a._accum(np.broadcast_to(g, a.data.shape))
            else:
                gx = g if keepdims else np.expand_dims(g, axis)
                a._accum(np.broadcast_to(gx, a.data.shape))

        return Tensor._wrap(np.asarray(y), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        y = a.data.reshape(shape)
        return Tensor._wrap(y, (a,), lambda g: a._accum(g.reshape(a.data.shape)))

    def broadcast_to(self, shape):
        a = self
        if len(shape) != a.data.ndim:
            raise ValueError("broadcast_to keeps rank; use reshape to add axes")
        axes = []
        for i, (s, t) in enumerate(zip(a.data.shape, shape)):
            if s != t:
                if s != 1:
                    raise ValueError(f"broadcast_to can only expand size-1 axes: {a.data.shape} -> {shape}")
                axes.append(i)
        y = np.broadcast_to(a.data, shape)

        def back(g):
            a._accum(g.sum(axis=tuple(axes), keepdims=True) if axes else g)

        return Tensor._wrap(np.ascontiguousarray(y), (a,), back)

    def __getitem__(self, idx):
        a = self
        y = a.data[idx]

        def back(g):
            gx = np.zeros_like(a.data)
            gx[idx] = g
            a._accum(gx)

        return Tensor._wrap(np.ascontiguousarray(y), (a,), back)

    def cumsum(self, axis, exclusive=False):
        a = self
        c = np.cumsum(a.data, axis=axis)
        if exclusive:
            y = np.zeros_like(c)
            src = [slice(None)] * c.ndim
            dst = [slice(None)] * c.ndim
            src[axis] = slice(None, -1)
            dst[axis] = slice(1, None)
            y[tuple(dst)] = c[tuple(src)]
        else:
            y = c

        def back(g):
            gf = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            if exclusive:
                # dL/dx_j = sum_{i>j} g_i
                a._accum(gf - g)
            else:
                a._accum(gf)

        return Tensor._wrap(y, (a,), back)

    # -- fused ops ------------------------------------------------------

    def softmax(self):
        """Softmax over the last axis, with max subtraction for stability."""
        a = self
        z = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)

        def back(g):
            a._accum((g - (g * y).sum(axis=-1, keepdims=True)) * y)

        return Tensor._wrap(y, (a,), back)

    def logsumexp(self):
        """log(sum(exp(x))) over the last axis, stabilized."""
        a = self
        m = a.data.max(axis=-1, keepdims=True)
        e = np.exp(a.data - m)
        s = e.sum(axis=-1, keepdims=True)
        y = (m + np.log(s)).squeeze(-1)
        sm = e / s

        def back(g):
            a._accum(np.expand_dims(g, -1) * sm)

        return Tensor._wrap(np.ascontiguousarray(y), (a,), back)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor._wrap(y, tuple(tensors), back)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift.

    A constant input row has zero variance; the eps floor maps it to zeros
    (before gain/bias) rather than dividing by zero.
    """
    d = x.data.shape[-1]
    r = DTYPE(1.0 / d)
    mu = x.data.sum(axis=-1, keepdims=True) * r
    xc = x.data - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) * r
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = _chk(xhat * gain.data + bias.data, "layer_norm")

    def back(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            x._accum(inv * (gh - gh.sum(axis=-1, keepdims=True) * r
                            - xhat * ((gh * xhat).sum(axis=-1, keepdims=True) * r)))

    return Tensor._wrap(y, (x, gain, bias), back)


def layer_norm_np(x, gain, bias, eps=1e-5):
    """Tape-free mirror of layer_norm with identical arithmetic."""
    r = DTYPE(1.0 / x.shape[-1])
    mu = x.sum(axis=-1, keepdims=True) * r
    xc = x - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) * r
    xhat = xc * (1.0 / np.sqrt(var + eps))
    return xhat * gain + bias


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus_np(x):
    # log(1 + e^x), stable on both tails
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def softplus_np(x):
    return _softplus_np(x)


def sigmoid_np(x):
    return _sigmoid_np(x)


def softmax_np(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

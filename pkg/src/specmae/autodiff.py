"""Minimal reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray and records, for each op, the parent tensors and a
closure that accumulates gradients into them. backward() runs the closures in
reverse topological order. Gradients accumulate into .grad until cleared, so
two backward passes sum.

Only the ops the transformer stack needs are implemented; all of them support
the broadcasting patterns actually used (bias adds, scalar scales, masks).
"""

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape recording (inference/eval paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("cannot wrap a Tensor in a Tensor")
        self.data = np.asarray(data, dtype=dtype) if dtype else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def _accumulate(self, g, own=False):
        """Add g to the gradient buffer.

        own=True promises g is freshly allocated (or a view of the child's
        now-dead gradient handed to exactly one parent), so the first store
        can take the buffer without a defensive copy.
        """
        if not self.requires_grad:
            return
        g = np.asarray(g)
        if g.dtype != self.data.dtype:
            g = g.astype(self.data.dtype)
            own = True
        reduced = _unbroadcast(g, self.data.shape)
        if reduced is not g:
            own = True
        if self.grad is None:
            self.grad = reduced if own else reduced.copy()
        else:
            self.grad += reduced

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise RuntimeError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise RuntimeError("backward() without a recorded forward computation")
        order, seen = [], set()
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            # Scalar fast path; float() demotes numpy scalars so float32
            # graphs stay float32 under NEP 50 promotion.
            other = float(other)
            return _make(self.data + other, (self,), lambda g: self._accumulate(g, own=True))
        other = as_tensor(other)
        out_data = self.data + other.data

        def bw(g):
            # g belongs to the (dead) output node; only one parent may own it.
            self._accumulate(g, own=True)
            other._accumulate(g)

        return _make(out_data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: self._accumulate(-g, own=True))

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = float(other)
            return _make(self.data - other, (self,), lambda g: self._accumulate(g, own=True))
        other = as_tensor(other)
        out = self.data - other.data

        def bw(g):
            self._accumulate(g, own=True)
            other._accumulate(-g, own=True)

        return _make(out, (self, other), bw)

    def __rsub__(self, other):
        return -self + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            other = float(other)
            return _make(self.data * other, (self,),
                         lambda g: self._accumulate(g * other, own=True))
        other = as_tensor(other)
        out = self.data * other.data
        return _make(
            out,
            (self, other),
            lambda g: (self._accumulate(g * other.data, own=True),
                       other._accumulate(g * self.data, own=True)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        other = as_tensor(other)
        out = self.data / other.data
        return _make(
            out,
            (self, other),
            lambda g: (
                self._accumulate(g / other.data, own=True),
                other._accumulate(-g * self.data / (other.data * other.data), own=True),
            ),
        )

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data**exponent
        return _make(
            out, (self,),
            lambda g: self._accumulate(g * exponent * self.data ** (exponent - 1), own=True),
        )

    def __matmul__(self, other):
        other = as_tensor(other)
        out = self.data @ other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(
                    _unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.data.shape),
                    own=True,
                )
            if other.requires_grad:
                if other.data.ndim == 2 and g.ndim > 2:
                    # x @ W with batched x: one flat GEMM instead of a
                    # batched GEMM followed by a reduction.
                    k, m = self.data.shape[-1], g.shape[-1]
                    other._accumulate(self.data.reshape(-1, k).T @ g.reshape(-1, m), own=True)
                else:
                    other._accumulate(
                        _unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.data.shape),
                        own=True,
                    )

        return _make(out, (self, other), bw)

    # -- nonlinearities --------------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _make(out, (self,), lambda g: self._accumulate(g * out, own=True))

    def log(self):
        return _make(np.log(self.data), (self,),
                     lambda g: self._accumulate(g / self.data, own=True))

    def tanh(self):
        out = np.tanh(self.data)
        return _make(out, (self,),
                     lambda g: self._accumulate(g * (1.0 - out * out), own=True))

    def sigmoid(self):
        out = _sigmoid(self.data)
        return _make(out, (self,),
                     lambda g: self._accumulate(g * out * (1.0 - out), own=True))

    def log_sigmoid(self):
        # log sigmoid(x) = -softplus(-x), stable at both tails.
        out = -_softplus(-self.data)
        sig = _sigmoid(self.data)
        return _make(out, (self,),
                     lambda g: self._accumulate(g * (1.0 - sig), own=True))

    def gelu(self):
        # tanh approximation; derivative in closed form.
        c = 0.7978845608028654  # sqrt(2/pi)
        x = self.data
        x2 = x * x
        t = np.tanh(c * (x + 0.044715 * (x2 * x)))
        out = 0.5 * x * (1.0 + t)

        def bw(g):
            sech2 = 1.0 - t * t
            d_inner = c * (1.0 + 0.134145 * x2)
            self._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner), own=True)

        return _make(out, (self,), bw)

    def abs(self):
        out = np.abs(self.data)
        return _make(out, (self,),
                     lambda g: self._accumulate(g * np.sign(self.data), own=True))

    def maximum(self, floor):
        """Elementwise max against a constant (subgradient 0 below the floor)."""
        if isinstance(floor, (int, float)):
            floor = float(floor)
        else:
            floor = np.asarray(floor, dtype=self.data.dtype)
        out = np.maximum(self.data, floor)
        mask = self.data >= floor
        return _make(out, (self,), lambda g: self._accumulate(g * mask, own=True))

    # -- reductions and shape ops ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape))
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape))

        return _make(out, (self,), bw)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)
        return _make(out, (self,),
                     lambda g: self._accumulate(np.ascontiguousarray(g).reshape(self.data.shape),
                                                own=True))

    def swapaxes(self, a, b):
        out = np.swapaxes(self.data, a, b)
        return _make(out, (self,), lambda g: self._accumulate(np.swapaxes(g, a, b), own=True))

    def __getitem__(self, key):
        out = self.data[key]
        parts = key if isinstance(key, tuple) else (key,)
        basic = all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)

        def bw(g):
            full = np.zeros_like(self.data)
            if basic:
                # Basic indexing never repeats elements; plain assignment
                # is much faster than np.add.at.
                full[key] = g
            else:
                np.add.at(full, key, g)
            self._accumulate(full, own=True)

        return _make(out, (self,), bw)

    def repeat_axis(self, repeats: int, axis: int):
        """np.repeat along one axis; backward sums the repeated copies."""
        out = np.repeat(self.data, repeats, axis=axis)

        def bw(g):
            shape = list(self.data.shape)
            shape[axis:axis + 1] = [shape[axis], repeats]
            self._accumulate(g.reshape(shape).sum(axis=axis + 1), own=True)

        return _make(out, (self,), bw)

    # -- fused neural-net primitives --------------------------------------------

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            dot = (g * out).sum(axis=axis, keepdims=True)
            self._accumulate(out * (g - dot), own=True)

        return _make(out, (self,), bw)

    def logsumexp(self, axis=-1):
        m = self.data.max(axis=axis, keepdims=True)
        e = np.exp(self.data - m)
        s = e.sum(axis=axis, keepdims=True)
        out = np.squeeze(m + np.log(s), axis=axis)

        def bw(g):
            self._accumulate(np.expand_dims(g, axis) * (e / s), own=True)

        return _make(out, (self,), bw)

    def layer_norm(self, gain, bias, eps=1e-5):
        """Normalization over the last axis with learned gain/bias."""
        gain, bias = as_tensor(gain), as_tensor(bias)
        mu = self.data.mean(axis=-1, keepdims=True)
        xc = self.data - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = xhat * gain.data + bias.data

        def bw(g):
            n = self.data.shape[-1]
            gg = g * gain.data
            term = gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(
                axis=-1, keepdims=True
            )
            self._accumulate(term * inv, own=True)
            axes = tuple(range(g.ndim - 1))
            gain._accumulate((g * xhat).sum(axis=axes), own=True)
            bias._accumulate(g.sum(axis=axes), own=True)

        return _make(out, (self, gain, bias), bw)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(x)))


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        live = tuple(p for p in parents if p.requires_grad)
        return Tensor(data, requires_grad=True, parents=live, backward=backward)
    return Tensor(data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _make(out, tuple(tensors), bw)


def scatter_tokens(visible: Tensor, visible_idx: np.ndarray, n_tokens: int, fill: Tensor) -> Tensor:
    """Batched scatter: place visible rows at their indices, `fill` elsewhere.

    visible: [batch, n_visible, d]; visible_idx: [batch, n_visible] int array;
    fill: [d] learned token. Output [batch, n_tokens, d].
    """
    visible = as_tensor(visible)
    fill = as_tensor(fill)
    b, nv, d = visible.data.shape
    out = np.broadcast_to(fill.data, (b, n_tokens, d)).copy()
    rows = np.arange(b)[:, None]
    out[rows, visible_idx] = visible.data
    vis_mask = np.zeros((b, n_tokens), dtype=bool)
    vis_mask[rows, visible_idx] = True

    def bw(g):
        visible._accumulate(g[rows, visible_idx], own=True)
        fill._accumulate(g[~vis_mask].sum(axis=0), own=True)

    return _make(out, (visible, fill), bw)

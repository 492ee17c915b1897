"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

The engine is eager: every operation computes its value immediately and,
if any operand requires gradients, records a vector-Jacobian closure.
``Tensor.backward()`` walks the recorded graph in reverse topological order
and accumulates gradients into the ``.grad`` buffers of the leaves.

The module-level functions (``sum``, ``sqrt``, ``stack``, ...) dispatch on
input type: a ``Tensor`` anywhere in the arguments produces a traced
``Tensor``, plain arrays fall through to numpy.  Numeric code written
against these helpers therefore runs identically in the traced and the
plain path, which is what the finite-difference gradient checks exploit.

Everything is double precision; there is no implicit down-casting.
"""

from __future__ import annotations

import builtins

import numpy as np
from scipy.special import expit

from .exceptions import GraphError, ShapeError


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends graph recording (values still computed)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


class Tensor:
    """A float64 array with an optional gradient-tape node attached."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    # make numpy defer binary operators to our reflected implementations
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = _arr(data)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # ---- introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        """The underlying ndarray, outside the graph (no copy)."""
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # ---- graph construction -------------------------------------------
    @staticmethod
    def _make(data, parents, vjp):
        out = Tensor(data)
        if _GRAD_ENABLED[0] and builtins.any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``seed`` defaults to ones (i.e. the gradient of ``self.sum()``);
        for scalar outputs that is the ordinary gradient.
        """
        if not self.requires_grad:
            raise GraphError("backward() on a tensor with no recorded graph")
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data) if seed is None else _arr(seed)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                cur = grads.get(id(p))
                grads[id(p)] = pg if cur is None else cur + pg

    # ---- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = _ensure(other)
        a, b = self.data, other.data
        return Tensor._make(
            a + b, (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _ensure(other)
        a, b = self.data, other.data
        return Tensor._make(
            a - b, (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return _ensure(other).__sub__(self)

    def __mul__(self, other):
        other = _ensure(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b, (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _ensure(other)
        a, b = self.data, other.data
        return Tensor._make(
            a / b, (self, other),
            lambda g: (_unbroadcast(g / b, a.shape),
                       _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return _ensure(other).__truediv__(self)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ShapeError("only scalar exponents are supported")
        x = self.data
        return Tensor._make(x ** p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other):
        other = _ensure(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul requires ndim >= 2 on both operands")

        def vjp(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a @ b, (self, other), vjp)

    def __rmatmul__(self, other):
        return _ensure(other).__matmul__(self)

    # ---- reductions -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        x = self.data

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, x.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, x.shape).copy(),)

        return Tensor._make(x.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def amin(self, axis=None):
        """Minimum reduction; ties route the gradient to the first argmin."""
        x = self.data
        if axis is None:
            idx = np.unravel_index(np.argmin(x), x.shape)

            def vjp(g):
                gx = np.zeros_like(x)
                gx[idx] = g
                return (gx,)

            return Tensor._make(x.min(), (self,), vjp)

        idx = np.argmin(x, axis=axis)

        def vjp(g):
            gx = np.zeros_like(x)
            np.put_along_axis(gx, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis)
            return (gx,)

        return Tensor._make(x.min(axis=axis), (self,), vjp)

    # ---- elementwise nonlinearities --------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self):
        out = np.sqrt(self.data)

        # subgradient 0 at the origin so exact-zero distances stay finite
        def vjp(g):
            safe = np.where(out == 0.0, 1.0, out)
            return (np.where(out == 0.0, 0.0, g / (2.0 * safe)),)

        return Tensor._make(out, (self,), vjp)

    def abs(self):
        x = self.data
        return Tensor._make(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def relu(self):
        x = self.data
        return Tensor._make(np.maximum(x, 0.0), (self,),
                            lambda g: (g * (x > 0.0),))

    def sigmoid(self):
        s = expit(self.data)
        return Tensor._make(s, (self,), lambda g: (g * s * (1.0 - s),))

    # ---- shape ops -------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self.data
        return Tensor._make(x.reshape(shape), (self,),
                            lambda g: (g.reshape(x.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.data.ndim))[::-1]
        inv = np.argsort(axes)
        return Tensor._make(self.data.transpose(axes), (self,),
                            lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        x = self.data

        def vjp(g):
            gx = np.zeros_like(x)
            np.add.at(gx, idx, g)
            return (gx,)

        return Tensor._make(x[idx], (self,), vjp)


def _ensure(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def is_tensor(x):
    return isinstance(x, Tensor)


def asdata(x):
    """Plain float64 ndarray view of ``x`` whether traced or not."""
    return x.data if isinstance(x, Tensor) else _arr(x)


# ---- polymorphic functional API -----------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    if isinstance(x, Tensor):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(_arr(x), axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    if isinstance(x, Tensor):
        return x.mean(axis=axis, keepdims=keepdims)
    return np.mean(_arr(x), axis=axis, keepdims=keepdims)


def amin(x, axis=None):
    if isinstance(x, Tensor):
        return x.amin(axis=axis)
    return np.min(_arr(x), axis=axis)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(_arr(x))


def log(x):
    return x.log() if isinstance(x, Tensor) else np.log(_arr(x))


def sqrt(x):
    return x.sqrt() if isinstance(x, Tensor) else np.sqrt(_arr(x))


def absolute(x):
    return x.abs() if isinstance(x, Tensor) else np.abs(_arr(x))


def relu(x):
    return x.relu() if isinstance(x, Tensor) else np.maximum(_arr(x), 0.0)


def sigmoid(x):
    return x.sigmoid() if isinstance(x, Tensor) else expit(_arr(x))


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to the first argument."""
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.maximum(_arr(a), _arr(b))
    a, b = _ensure(a), _ensure(b)
    mask = a.data >= b.data

    def vjp(g):
        return (_unbroadcast(g * mask, a.data.shape),
                _unbroadcast(g * ~mask, b.data.shape))

    return Tensor._make(np.maximum(a.data, b.data), (a, b), vjp)


def minimum(a, b):
    """Elementwise min; on ties the gradient goes to the first argument."""
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.minimum(_arr(a), _arr(b))
    a, b = _ensure(a), _ensure(b)
    mask = a.data <= b.data

    def vjp(g):
        return (_unbroadcast(g * mask, a.data.shape),
                _unbroadcast(g * ~mask, b.data.shape))

    return Tensor._make(np.minimum(a.data, b.data), (a, b), vjp)


def stack(xs, axis=0):
    if not builtins.any(isinstance(x, Tensor) for x in xs):
        return np.stack([_arr(x) for x in xs], axis=axis)
    xs = [_ensure(x) for x in xs]

    def vjp(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] for i in range(len(xs)))

    return Tensor._make(np.stack([x.data for x in xs], axis=axis), xs, vjp)


def concat(xs, axis=0):
    if not builtins.any(isinstance(x, Tensor) for x in xs):
        return np.concatenate([_arr(x) for x in xs], axis=axis)
    xs = [_ensure(x) for x in xs]
    sizes = [x.data.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([x.data for x in xs], axis=axis), xs, vjp)


def index_last(x, k):
    """``x[..., k]`` without writing an ellipsis index (keeps vjps simple)."""
    if isinstance(x, Tensor):
        idx = (slice(None),) * (x.data.ndim - 1) + (k,)
        return x[idx]
    return _arr(x)[..., k]


def l2norm(x, axis=None, keepdims=False):
    return sqrt(sum(x * x, axis=axis, keepdims=keepdims))


def softmax(x, axis=-1):
    if not isinstance(x, Tensor):
        x = _arr(x)
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), vjp)


def log_softmax(x, axis=-1):
    if not isinstance(x, Tensor):
        x = _arr(x)
        z = x - x.max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    s = np.exp(ls)

    def vjp(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(ls, (x,), vjp)


# ---- 2D convolution -------------------------------------------------------

_conv_idx_cache = {}


def _conv_indices(h, w, kh, kw, stride, pad):
    key = (h, w, kh, kw, stride, pad)
    hit = _conv_idx_cache.get(key)
    if hit is not None:
        return hit
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    i0 = np.repeat(np.arange(kh), kw)
    j0 = np.tile(np.arange(kw), kh)
    i1 = stride * np.repeat(np.arange(ho), wo)
    j1 = stride * np.tile(np.arange(wo), ho)
    ii = i0[:, None] + i1[None, :]          # (kh*kw, ho*wo)
    jj = j0[:, None] + j1[None, :]
    _conv_idx_cache[key] = (ii, jj, ho, wo)
    return ii, jj, ho, wo


def conv2d(x, w, b, stride=1, pad=1):
    """2D convolution of ``x`` (cin, h, w) with ``w`` (cout, cin, kh, kw).

    im2col + matmul; the backward pass scatters column gradients back with
    ``np.add.at``.  No batch dimension; callers loop over images.
    """
    x, w, b = _ensure(x), _ensure(w), _ensure(b)
    cin, h, wid = x.data.shape
    cout, cin2, kh, kw = w.data.shape
    if cin != cin2:
        raise ShapeError(f"conv2d channel mismatch: {cin} vs {cin2}")
    ii, jj, ho, wo = _conv_indices(h, wid, kh, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = xp[:, ii, jj].reshape(cin * kh * kw, ho * wo)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (wmat @ cols + b.data[:, None]).reshape(cout, ho, wo)

    def vjp(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(w.data.shape)
        gb = g2.sum(axis=1)
        gcols = (wmat.T @ g2).reshape(cin, kh * kw, ho * wo)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, (np.arange(cin)[:, None, None], ii[None], jj[None]), gcols)
        gx = gxp[:, pad:pad + h, pad:pad + wid] if pad else gxp
        return gx, gw, gb

    return Tensor._make(out, (x, w, b), vjp)


# ---- parameters -----------------------------------------------------------

class ParameterStore:
    """Named parameter tensors with mirrored gradient buffers.

    Iteration order for optimizers and norm reductions is sorted by name so
    results do not depend on construction order.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, data):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self):
        for _, p in self.items():
            p.zero_grad()

    def n_parameters(self):
        return builtins.sum(p.size for p in self._params.values())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.items()}

    def load_state_dict(self, state):
        if set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in state.items():
            p = self._params[name]
            arr = _arr(arr)
            if arr.shape != p.data.shape:
                raise ShapeError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()
            p.zero_grad()


def numeric_gradient(f, x, eps=1e-5):
    """Central finite differences of a scalar function at ``x``.

    Independent of the tape: ``f`` is called on plain arrays only.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g

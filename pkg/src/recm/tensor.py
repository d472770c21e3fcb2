"""Dense f64 tensors with a small reverse-mode differentiation tape.

Only what the RECM machinery needs: 2-D matmul, elementwise maps, a handful
of reductions and a few fused primitives (row bias, vector squashing, cross
entropy).  Shapes never broadcast implicitly; the only exception is a
0-d tensor (or Python number) combined with a tensor of any shape.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .exceptions import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "as_tensor",
    "backward",
    "detach",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "dot",
    "transpose",
    "reshape",
    "tsum",
    "mean",
    "gelu",
    "gelu_grad",
    "gelu_np",
    "tanh",
    "exp",
    "log",
    "square",
    "sqrt",
    "concat",
    "stack",
    "index",
    "add_bias",
    "kron_eye",
    "vector_squash",
    "group_norms",
    "cross_entropy",
    "mse",
    "numerical_grad",
    "gradcheck",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A node in the differentiation graph.

    ``data`` is treated as immutable once the tensor has been used in an
    operation; optimizers rebind ``data`` on leaves instead of writing into it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


class Tape:
    """Reverse-topological replay of the graph that produced an output."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        order = []
        seen = set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def replay(self, seed):
        grads = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf."""
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError("backward() needs a 0-d scalar loss tensor")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    Tape.from_output(loss).replay(np.ones(()))


def detach(x):
    return Tensor(as_tensor(x).data)


# ---------------------------------------------------------------- elementwise


def _scalar_pair(a, b, opname):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _reduce_to(g, shape):
    return g if g.shape == shape else np.asarray(g.sum())


def add(a, b):
    a, b = _scalar_pair(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b):
    a, b = _scalar_pair(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b):
    a, b = _scalar_pair(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _node(ad * bd, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def gelu_grad(x):
    """Derivative of the exact GeLU, Phi(x) + x*phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu_np(x):
    x = np.asarray(x, dtype=np.float64)
    return x * ndtr(x)


def gelu(a):
    """Exact GeLU x*Phi(x) (erf based, not the tanh approximation)."""
    a = as_tensor(a)
    ad = a.data
    return _node(ad * ndtr(ad), (a,), lambda g: (g * gelu_grad(ad),))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot expects equal 1-D operands, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _node(np.asarray(ad @ bd), (a, b), lambda g: (g * bd, g * ad))


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    src = a.shape
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(src),))


def kron_eye(m, d):
    """``kron(m, I_d)``; lets a channel-mixing matrix act on flattened vectors."""
    m = as_tensor(m)
    if m.data.ndim != 2:
        raise ShapeError("kron_eye expects a 2-D tensor")
    r, c = m.shape
    eye = np.eye(d)

    def bw(g):
        return (np.einsum("iajb,ab->ij", g.reshape(r, d, c, d), eye),)

    return _node(np.kron(m.data, eye), (m,), bw)


# ---------------------------------------------------------------- reductions & structure


def tsum(a, axis=None):
    a = as_tensor(a)
    src = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _node(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors):
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) > 1:
        raise ShapeError("stack expects equal shapes")
    out = np.stack([t.data for t in tensors])
    return _node(out, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))


def index(a, i):
    """``a[i]`` along the leading axis."""
    a = as_tensor(a)
    src = a.shape

    def bw(g):
        full = np.zeros(src)
        full[i] = g
        return (full,)

    return _node(np.asarray(a.data[i]), (a,), bw)


def add_bias(x, b):
    """Add a length-k vector to every row of an (n, k) tensor."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: cannot add {b.shape} to rows of {x.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------- fused nonlinearities


def vector_squash(x, d, eps=1e-12):
    """Map each d-vector v (contiguous columns) to tanh(|v|) v/|v|.

    Commutes with any orthogonal map applied to the vectors.
    """
    x = as_tensor(x)
    n, k = x.shape
    if k % d:
        raise ShapeError(f"width {k} is not a multiple of {d}")
    v = x.data.reshape(n, k // d, d)
    r = np.sqrt((v * v).sum(axis=2, keepdims=True) + eps)
    t = np.tanh(r)
    s = t / r
    out = (v * s).reshape(n, k)

    def bw(g):
        gv = g.reshape(n, k // d, d)
        ds_dr = ((1.0 - t * t) * r - t) / (r * r)
        proj = (gv * v).sum(axis=2, keepdims=True)
        return ((gv * s + v * (ds_dr * proj / r)).reshape(n, k),)

    return _node(out, (x,), bw)


def group_norms(x, d, eps=1e-12):
    """Euclidean norm of each contiguous d-vector: (n, c*d) -> (n, c)."""
    x = as_tensor(x)
    n, k = x.shape
    if k % d:
        raise ShapeError(f"width {k} is not a multiple of {d}")
    v = x.data.reshape(n, k // d, d)
    r = np.sqrt((v * v).sum(axis=2) + eps)
    return _node(r, (x,), lambda g: (((g / r)[:, :, None] * v).reshape(n, k),))


def cross_entropy(logits, labels):
    """Mean softmax cross entropy for integer class labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy expects (n, c) logits and n labels")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _node(np.asarray(loss), (logits,), bw)


def mse(pred, target):
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    return _node(np.asarray((diff * diff).mean()), (pred,), lambda g: (g * 2.0 * diff / diff.size,))


# ---------------------------------------------------------------- finite differences


def numerical_grad(fn, params, step=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. each tensor in ``params``."""
    grads = []
    for p in params:
        base = p.data
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for i in range(base.size):
            bumped = base.copy().reshape(-1)
            bumped[i] += step
            p.data = bumped.reshape(base.shape)
            up = float(fn().data)
            bumped[i] -= 2.0 * step
            p.data = bumped.reshape(base.shape)
            down = float(fn().data)
            flat[i] = (up - down) / (2.0 * step)
        p.data = base
        grads.append(g)
    return grads


def gradcheck(fn, params, step=1e-5, zero_floor=1e-8):
    """Largest relative error between autodiff and central differences.

    The relative error of each parameter is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|)``
    on the flattened gradient.  Pairs with both norms under ``zero_floor`` count
    as 0: that is below the roundoff of a central difference at ``step`` 1e-5,
    so an exactly zero gradient would otherwise score 1.
    """
    for p in params:
        p.grad = None
    backward(fn())
    auto = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    fd = numerical_grad(fn, params, step)
    worst = 0.0
    for a, f in zip(auto, fd):
        scale = max(np.linalg.norm(a), np.linalg.norm(f))
        if scale < zero_floor:
            continue
        worst = max(worst, float(np.linalg.norm(a - f) / scale))
    return worst

"""Reverse-mode differentiation on numpy arrays.

A :class:`Tape` records primitive applications in evaluation order.  Each
node keeps the primitive, its operand values and its output, so a backward
sweep in reverse order accumulates vector-Jacobian products.  Primitives are
plain callables: given numpy arrays they just compute, given a :class:`Var`
they also record onto that variable's tape.

Nodes are arrays rather than scalars; fused vector primitives (matmul,
softplus, forward kinematics, projection) are single nodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

__all__ = [
    "NonFiniteError", "Tape", "Var", "ParamVector", "Primitive", "PRIMITIVES",
    "primitive", "grad", "value_and_grad", "jacobian",
]


class NonFiniteError(FloatingPointError):
    """A tape node produced a NaN or infinite value or gradient."""

    def __init__(self, message, node=None, name=None):
        super().__init__(message)
        self.node = node
        self.name = name


PRIMITIVES: dict[str, "Primitive"] = {}


class Primitive:
    """A differentiable operation.

    ``fwd(*values, **kw)`` computes the output; ``bwd(g, out, *values, **kw)``
    returns one cotangent (or ``None``) per positional operand.
    """

    def __init__(self, name: str, fwd: Callable):
        self.name = name
        self.fwd = fwd
        self.bwd: Callable | None = None

    def defvjp(self, bwd):
        self.bwd = bwd
        return bwd

    def __call__(self, *args, **kw):
        tape = None
        for a in args:
            if isinstance(a, Var):
                tape = a.tape
                break
        values = [a.value if isinstance(a, Var) else a for a in args]
        out = self.fwd(*values, **kw)
        if tape is None:
            return out
        return tape.record(self, args, values, out, kw)

    def __repr__(self):
        return f"Primitive({self.name!r})"


def primitive(name):
    def deco(fn):
        prim = Primitive(name, fn)
        PRIMITIVES[name] = prim
        return prim
    return deco


class Tape:
    """Single-evaluation record of primitive applications."""

    def __init__(self, check_finite=True):
        self.check_finite = check_finite
        self.values: list[np.ndarray] = []
        self.nodes: list[tuple] = []  # (prim, operands, operand values, kw)

    def __len__(self):
        return len(self.values)

    def leaf(self, value, name="leaf") -> "Var":
        value = np.asarray(value, dtype=np.float64)
        self.values.append(value)
        self.nodes.append((None, (), (), {"name": name}))
        return Var(self, len(self.values) - 1, value)

    def record(self, prim, args, values, out, kw) -> "Var":
        out = np.asarray(out, dtype=np.float64)
        idx = len(self.values)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(
                f"non-finite value produced by node #{idx} ({prim.name})",
                node=idx, name=prim.name)
        operands = tuple(a.idx if isinstance(a, Var) and a.tape is self else None
                         for a in args)
        self.values.append(out)
        self.nodes.append((prim, operands, tuple(values), kw))
        return Var(self, idx, out)

    def backward(self, out: "Var", seed=None) -> list:
        """Cotangents of every node with respect to ``out``.

        ``seed`` defaults to ones of the output's shape.  Accumulation runs in
        strict reverse node order, so results are reproducible bit for bit.
        """
        grads: list = [None] * (out.idx + 1)
        if seed is None:
            seed = np.ones_like(out.value)
        grads[out.idx] = np.asarray(seed, dtype=np.float64)
        for i in range(out.idx, -1, -1):
            g = grads[i]
            prim, operands, values, kw = self.nodes[i]
            if g is None or prim is None:
                continue
            if not any(o is not None for o in operands):
                continue
            contribs = prim.bwd(g, self.values[i], *values, **kw)
            for o, c in zip(operands, contribs):
                if o is None or c is None:
                    continue
                c = np.asarray(c, dtype=np.float64)
                if self.check_finite and not np.all(np.isfinite(c)):
                    raise NonFiniteError(
                        f"non-finite gradient flowing out of node #{i} ({prim.name})",
                        node=i, name=prim.name)
                grads[o] = c if grads[o] is None else grads[o] + c
        return grads

    def replay(self, leaf_values: Mapping[int, np.ndarray] | None = None) -> list:
        """Recompute every node from the leaves.

        Leaves keep their recorded values unless overridden by index.
        """
        out = []
        leaf_values = leaf_values or {}
        for i, (prim, operands, values, kw) in enumerate(self.nodes):
            if prim is None:
                out.append(np.asarray(leaf_values.get(i, self.values[i]), dtype=np.float64))
                continue
            vals = [out[o] if o is not None else v for o, v in zip(operands, values)]
            out.append(np.asarray(prim.fwd(*vals, **kw), dtype=np.float64))
        return out


class Var:
    """Array value tracked on a tape."""

    __slots__ = ("tape", "idx", "value")
    __array_priority__ = 100.0
    __array_ufunc__ = None  # make numpy operands defer to the reflected operators

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.idx}, shape={self.value.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx=idx)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return power(self, p=float(p))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape=shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a=a, b=b)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    @property
    def T(self):
        return swapaxes(self, a=-1, b=-2)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


# ---------------------------------------------------------------- arithmetic

@primitive("add")
def add(a, b):
    return np.add(a, b)


@add.defvjp
def _add_vjp(g, out, a, b):
    return _unbroadcast(g, _shape(a)), _unbroadcast(g, _shape(b))


@primitive("sub")
def sub(a, b):
    return np.subtract(a, b)


@sub.defvjp
def _sub_vjp(g, out, a, b):
    return _unbroadcast(g, _shape(a)), _unbroadcast(-g, _shape(b))


@primitive("mul")
def mul(a, b):
    return np.multiply(a, b)


@mul.defvjp
def _mul_vjp(g, out, a, b):
    return _unbroadcast(g * b, _shape(a)), _unbroadcast(g * a, _shape(b))


@primitive("div")
def div(a, b):
    return np.divide(a, b)


@div.defvjp
def _div_vjp(g, out, a, b):
    return _unbroadcast(g / b, _shape(a)), _unbroadcast(-g * out / b, _shape(b))


@primitive("neg")
def neg(a):
    return np.negative(a)


@neg.defvjp
def _neg_vjp(g, out, a):
    return (-g,)


@primitive("power")
def power(a, p):
    return np.power(a, p)


@power.defvjp
def _power_vjp(g, out, a, p):
    return (g * p * np.power(a, p - 1.0),)


@primitive("square")
def square(a):
    return np.square(a)


@square.defvjp
def _square_vjp(g, out, a):
    return (2.0 * g * a,)


@primitive("matmul")
def matmul(a, b):
    return np.matmul(a, b)


@matmul.defvjp
def _matmul_vjp(g, out, a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if b.ndim == 1:
        ga = g[..., None] * b
        gb = (np.swapaxes(a, -1, -2) @ g[..., None])[..., 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    if a.ndim == 1:
        ga = (b @ g[..., None])[..., 0]
        gb = a[:, None] * g[..., None, :]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


# ---------------------------------------------------------------- reductions / shape

@primitive("sum")
def sum_(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


@sum_.defvjp
def _sum_vjp(g, out, a, axis=None, keepdims=False):
    shape = np.shape(a)
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g, shape).copy(),)


def mean(a, axis=None):
    shape = a.shape if isinstance(a, Var) else np.shape(a)
    n = int(np.prod(shape)) if axis is None else shape[axis]
    return sum_(a, axis=axis) / float(n)


@primitive("reshape")
def reshape(a, shape):
    return np.reshape(a, shape)


@reshape.defvjp
def _reshape_vjp(g, out, a, shape):
    return (np.reshape(g, np.shape(a)),)


@primitive("swapaxes")
def swapaxes(x, a, b):
    return np.swapaxes(x, a, b)


@swapaxes.defvjp
def _swapaxes_vjp(g, out, x, a, b):
    return (np.swapaxes(g, a, b),)


@primitive("getitem")
def getitem(a, idx):
    return np.asarray(a)[idx]


@getitem.defvjp
def _getitem_vjp(g, out, a, idx):
    full = np.zeros(np.shape(a))
    np.add.at(full, idx, g)
    return (full,)


@primitive("concatenate")
def _concatenate(*xs, axis=0):
    return np.concatenate(xs, axis=axis)


@_concatenate.defvjp
def _concatenate_vjp(g, out, *xs, axis=0):
    sizes = [np.shape(x)[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


def concatenate(xs, axis=0):
    return _concatenate(*xs, axis=axis)


@primitive("stack")
def _stack(*xs, axis=0):
    return np.stack(xs, axis=axis)


@_stack.defvjp
def _stack_vjp(g, out, *xs, axis=0):
    return tuple(np.moveaxis(g, axis, 0))


def stack(xs, axis=0):
    return _stack(*xs, axis=axis)


# ---------------------------------------------------------------- elementwise

@primitive("exp")
def exp(a):
    return np.exp(a)


@exp.defvjp
def _exp_vjp(g, out, a):
    return (g * out,)


@primitive("log")
def log(a):
    return np.log(a)


@log.defvjp
def _log_vjp(g, out, a):
    return (g / a,)


@primitive("log1p")
def log1p(a):
    return np.log1p(a)


@log1p.defvjp
def _log1p_vjp(g, out, a):
    return (g / (1.0 + a),)


@primitive("sqrt")
def sqrt(a):
    return np.sqrt(a)


@sqrt.defvjp
def _sqrt_vjp(g, out, a):
    return (g * 0.5 / out,)


@primitive("tanh")
def tanh(a):
    return np.tanh(a)


@tanh.defvjp
def _tanh_vjp(g, out, a):
    return (g * (1.0 - out * out),)


@primitive("sin")
def sin(a):
    return np.sin(a)


@sin.defvjp
def _sin_vjp(g, out, a):
    return (g * np.cos(a),)


@primitive("cos")
def cos(a):
    return np.cos(a)


@cos.defvjp
def _cos_vjp(g, out, a):
    return (-g * np.sin(a),)


@primitive("softplus")
def softplus(a):
    return np.logaddexp(0.0, a)


@softplus.defvjp
def _softplus_vjp(g, out, a):
    return (g * expit(a),)


@primitive("relu")
def relu(a):
    return np.maximum(a, 0.0)


@relu.defvjp
def _relu_vjp(g, out, a):
    return (g * (np.asarray(a) > 0.0),)


@primitive("norm")
def norm(a, axis=-1):
    """Euclidean norm along ``axis``; the zero vector gets a zero subgradient."""
    return np.sqrt(np.sum(np.square(a), axis=axis))


@norm.defvjp
def _norm_vjp(g, out, a, axis=-1):
    safe = np.where(out > 0.0, out, 1.0)
    scale = np.where(out > 0.0, g / safe, 0.0)
    return (np.asarray(a) * np.expand_dims(scale, axis),)


# ---------------------------------------------------------------- linear algebra

@primitive("logdet_spd")
def logdet_spd(a):
    """log det of (batched) symmetric positive definite matrices."""
    a = np.asarray(a)
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-2])
    chol = np.linalg.cholesky(a)
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


@logdet_spd.defvjp
def _logdet_spd_vjp(g, out, a):
    a = np.asarray(a)
    if a.shape[-1] == 0:
        return (np.zeros_like(a),)
    inv = np.linalg.inv(a)
    return (np.asarray(g)[..., None, None] * np.swapaxes(inv, -1, -2),)


# ---------------------------------------------------------------- parameter vectors

@dataclass
class ParamVector:
    """Flat parameter array with named, disjoint, covering slices."""

    values: np.ndarray
    layout: dict  # name -> (start, stop, shape)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        pos = 0
        for name, (start, stop, shape) in self.layout.items():
            if start != pos or stop - start != int(np.prod(shape, dtype=int)):
                raise ValueError(f"layout slice for {name!r} is not contiguous/consistent")
            pos = stop
        if pos != self.values.size:
            raise ValueError("layout does not cover the value array")

    @classmethod
    def from_groups(cls, groups: Mapping[str, np.ndarray]) -> "ParamVector":
        layout = {}
        chunks = []
        pos = 0
        for name, arr in groups.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout[name] = (pos, pos + arr.size, arr.shape)
            chunks.append(arr.ravel())
            pos += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    @property
    def names(self):
        return list(self.layout)

    @property
    def size(self):
        return self.values.size

    def __getitem__(self, name):
        start, stop, shape = self.layout[name]
        return self.values[start:stop].reshape(shape)

    def __contains__(self, name):
        return name in self.layout

    def slice(self, name):
        start, stop, _ = self.layout[name]
        return slice(start, stop)

    def groups(self):
        return {name: self[name] for name in self.layout}

    def with_values(self, values) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), dict(self.layout))

    def copy(self) -> "ParamVector":
        return self.with_values(self.values.copy())


def _as_params(p):
    if isinstance(p, ParamVector):
        return p
    return ParamVector.from_groups({"x": np.asarray(p, dtype=np.float64)})


def _call(f, tape, p):
    leaves = {name: tape.leaf(p[name], name) for name in p.layout}
    return leaves, f(leaves)


def value_and_grad(f, p, check_finite=True):
    """Evaluate scalar ``f(params)`` and its gradient.

    ``f`` receives a dict mapping group name to :class:`Var`.  A bare array is
    wrapped as a single group named ``"x"``.
    """
    p = _as_params(p)
    tape = Tape(check_finite=check_finite)
    leaves, out = _call(f, tape, p)
    if not isinstance(out, Var):
        return float(out), p.with_values(np.zeros(p.size))
    if out.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {out.shape}")
    grads = tape.backward(out)
    flat = np.zeros(p.size)
    for name, leaf in leaves.items():
        g = grads[leaf.idx] if leaf.idx < len(grads) else None
        if g is not None:
            flat[p.slice(name)] = np.reshape(g, -1)
    return float(out.value), p.with_values(flat)


def grad(f, p, check_finite=True):
    return value_and_grad(f, p, check_finite)[1]


def jacobian(g, p, check_finite=True):
    """Dense Jacobian of vector ``g(params)``; row i is the gradient of output i."""
    p = _as_params(p)
    tape = Tape(check_finite=check_finite)
    leaves, out = _call(g, tape, p)
    if not isinstance(out, Var):
        return np.zeros((np.size(out), p.size))
    n_out = out.size
    jac = np.zeros((n_out, p.size))
    for i in range(n_out):
        seed = np.zeros(n_out)
        seed[i] = 1.0
        grads = tape.backward(out, seed.reshape(out.shape))
        for name, leaf in leaves.items():
            gl = grads[leaf.idx] if leaf.idx < len(grads) else None
            if gl is not None:
                jac[i, p.slice(name)] = np.reshape(gl, -1)
    return jac

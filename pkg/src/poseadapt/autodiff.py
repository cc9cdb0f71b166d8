"""Reverse-mode autodiff on float64 numpy arrays, differentiable twice.

The adaptation loop needs the exact derivative of an objective evaluated at
parameters produced by one inner gradient step, i.e. a gradient taken
through another gradient. Every backward rule here is written in terms of
the same traced operations, so the output of ``grad`` is itself a graph
node and nesting ``grad`` yields exact second-order derivatives -- no
finite-difference or Gauss-Newton shortcut.

Operations dispatch on their inputs: with plain ndarrays they fall through
to numpy, and start tracing as soon as a :class:`Tensor` is involved. That
lets the kinematics / loss code be written once and reused for both fast
plain evaluation and differentiable evaluation.

Deliberately small: elementwise ops, matmul (equal batch dims), reductions,
indexing, concat/stack/where. Everything is float64.
"""

from __future__ import annotations

from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NumericalError",
    "grad",
    "eval_loss",
    "gradient",
    "bilevel_gradient",
    "constant",
    "value_of",
    "exp",
    "log",
    "tanh",
    "sin",
    "cos",
    "sqrt",
    "where",
    "concat",
    "stack",
    "matmul",
    "swapaxes",
    "broadcast_to",
]


class NumericalError(ArithmeticError):
    """A loss, gradient or intermediate evaluated to a non-finite value."""


def _as_value(x) -> np.ndarray:
    if type(x) is np.ndarray:
        return x if x.dtype == np.float64 else x.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Graph node: a float64 array plus backward edges to its inputs.

    ``parents`` is a tuple of ``(input_tensor, vjp)`` pairs where ``vjp``
    maps the upstream gradient (a Tensor) to this input's contribution,
    built from traced ops so it can be differentiated again.
    """

    __slots__ = ("value", "parents")

    # make ndarray <op> Tensor defer to our reflected operators
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, parents: tuple = ()):
        if type(value) is np.ndarray and value.dtype == np.float64:
            self.value = value
        else:
            self.value = _as_value(value)
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor({self.value!r})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        out = self.value[key]
        shape = self.value.shape
        return Tensor(out, ((self, lambda g: _scatter(g, key, shape)),))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        return Tensor(
            self.value.reshape(shape),
            ((self, lambda g: g.reshape(old)),),
        )

    def swapaxes(self, a, b):
        return Tensor(
            np.swapaxes(self.value, a, b),
            ((self, lambda g: g.swapaxes(a, b)),),
        )

    def sum(self, axis=None, keepdims=False):
        shape = self.value.shape
        if axis is None:
            axes = tuple(range(len(shape)))
        elif isinstance(axis, int):
            axes = (axis % len(shape),)
        else:
            axes = tuple(a % len(shape) for a in axis)
        out = self.value.sum(axis=axis, keepdims=keepdims)
        kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))

        def vjp(g):
            if not keepdims:
                g = g.reshape(kshape)
            return broadcast_to(g, shape)

        return Tensor(out, ((self, vjp),))

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod(
            [self.value.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def constant(x) -> Tensor:
    """Wrap values as a leaf with no history (blocks gradient flow)."""
    return Tensor(x.value if isinstance(x, Tensor) else x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _shrink(t: Tensor, shape) -> Tensor:
    """Reduce a broadcast gradient back to ``shape`` by summing expanded axes."""
    extra = t.ndim - len(shape)
    if extra > 0:
        t = t.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and t.shape[i] != 1)
    if axes:
        t = t.sum(axis=axes, keepdims=True)
    if t.shape != tuple(shape):
        t = t.reshape(shape)
    return t


def _edge(t: Tensor, build: Callable[[Tensor], Tensor], out_shape):
    if t.value.shape == out_shape:
        return (t, build)
    return (t, lambda g: _shrink(build(g), t.value.shape))


_scalars = (float, int)


def add(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.add(a, b)
    if ta and isinstance(b, _scalars):
        return Tensor(a.value + b, ((a, lambda g: g),))
    if tb and isinstance(a, _scalars):
        return Tensor(a + b.value, ((b, lambda g: g),))
    av = a.value if ta else _as_value(a)
    bv = b.value if tb else _as_value(b)
    out = av + bv
    edges = []
    if ta:
        edges.append(_edge(a, lambda g: g, out.shape))
    if tb:
        edges.append(_edge(b, lambda g: g, out.shape))
    return Tensor(out, tuple(edges))


def sub(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.subtract(a, b)
    if ta and isinstance(b, _scalars):
        return Tensor(a.value - b, ((a, lambda g: g),))
    if tb and isinstance(a, _scalars):
        return Tensor(a - b.value, ((b, lambda g: mul(g, -1.0)),))
    av = a.value if ta else _as_value(a)
    bv = b.value if tb else _as_value(b)
    out = av - bv
    edges = []
    if ta:
        edges.append(_edge(a, lambda g: g, out.shape))
    if tb:
        edges.append(_edge(b, lambda g: mul(g, -1.0), out.shape))
    return Tensor(out, tuple(edges))


def mul(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.multiply(a, b)
    if ta and isinstance(b, _scalars):
        return Tensor(a.value * b, ((a, lambda g: mul(g, b)),))
    if tb and isinstance(a, _scalars):
        return Tensor(a * b.value, ((b, lambda g: mul(g, a)),))
    av = a.value if ta else _as_value(a)
    bv = b.value if tb else _as_value(b)
    out = av * bv
    edges = []
    if ta:
        bo = b if tb else bv
        edges.append(_edge(a, lambda g: mul(g, bo), out.shape))
    if tb:
        ao = a if ta else av
        edges.append(_edge(b, lambda g: mul(g, ao), out.shape))
    return Tensor(out, tuple(edges))


def div(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.divide(a, b)
    av = a.value if ta else _as_value(a)
    bv = b.value if tb else _as_value(b)
    out = av / bv
    edges = []
    bo = b if tb else bv
    if ta:
        edges.append(_edge(a, lambda g: div(g, bo), out.shape))
    if tb:
        ao = a if ta else av
        # d(a/b)/db = -a / b^2, written without capturing the output node
        edges.append(_edge(b, lambda g: mul(g, div(mul(ao, -1.0), mul(bo, bo))), out.shape))
    return Tensor(out, tuple(edges))


def power(a, p):
    if not isinstance(a, Tensor):
        return np.power(a, p)
    p = float(p)
    out = np.power(a.value, p)
    return Tensor(out, ((a, lambda g: mul(g, mul(power(a, p - 1.0), p))),))


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    out = Tensor(np.exp(x.value), ())
    out.parents = ((x, lambda g: mul(g, out)),)
    return out


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    return Tensor(np.log(x.value), ((x, lambda g: div(g, x)),))


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    out = Tensor(np.tanh(x.value), ())
    out.parents = ((x, lambda g: mul(g, sub(1.0, mul(out, out)))),)
    return out


def sin(x):
    if not isinstance(x, Tensor):
        return np.sin(x)
    return Tensor(np.sin(x.value), ((x, lambda g: mul(g, cos(x))),))


def cos(x):
    if not isinstance(x, Tensor):
        return np.cos(x)
    return Tensor(np.cos(x.value), ((x, lambda g: mul(g, mul(sin(x), -1.0))),))


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    out = Tensor(np.sqrt(x.value), ())
    out.parents = ((x, lambda g: div(g, mul(out, 2.0))),)
    return out


def where(cond, a, b):
    """Elementwise select with a plain boolean mask (mask carries no grad)."""
    cond = np.asarray(cond)
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.where(cond, a, b)
    av = a.value if ta else _as_value(a)
    bv = b.value if tb else _as_value(b)
    out = np.where(cond, av, bv)
    mask = cond.astype(np.float64)
    edges = []
    if ta:
        edges.append(_edge(a, lambda g: mul(g, mask), out.shape))
    if tb:
        edges.append(_edge(b, lambda g: mul(g, 1.0 - mask), out.shape))
    return Tensor(out, tuple(edges))


def _batch_sum(t: Tensor, ndim_keep: int) -> Tensor:
    extra = t.ndim - ndim_keep
    return t.sum(axis=tuple(range(extra))) if extra > 0 else t


def matmul(a, b):
    """Matrix product. Batch dims must match exactly, except that a plain
    2-D operand broadcasts against the other side's batch dims."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.matmul(a, b)
    av = a.value if ta else _as_value(a)
    bv = b.value if tb else _as_value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if av.shape[:-2] != bv.shape[:-2] and not (av.ndim == 2 or bv.ndim == 2):
        raise ValueError("matmul batch dims must match exactly")
    out = np.matmul(av, bv)
    edges = []
    if ta:
        bo = b if tb else bv
        edges.append((a, lambda g: _batch_sum(matmul(g, swapaxes(bo, -1, -2)), av.ndim)))
    if tb:
        ao = a if ta else av
        edges.append((b, lambda g: _batch_sum(matmul(swapaxes(ao, -1, -2), g), bv.ndim)))
    return Tensor(out, tuple(edges))


def swapaxes(x, a, b):
    if not isinstance(x, Tensor):
        return np.swapaxes(x, a, b)
    return x.swapaxes(a, b)


def broadcast_to(x, shape):
    if not isinstance(x, Tensor):
        return np.broadcast_to(x, shape)
    old = x.value.shape
    return Tensor(
        np.broadcast_to(x.value, shape),
        ((x, lambda g: _shrink(g, old)),),
    )


def _is_advanced_key(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (np.ndarray, list)) for k in items)


def _scatter(g, key, shape):
    """Adjoint of indexing: place ``g`` into zeros(shape) at ``key``.

    Duplicate indices in advanced keys accumulate (matches d/dx of x[key]).
    """
    if not isinstance(g, Tensor):
        z = np.zeros(shape, dtype=np.float64)
        np.add.at(z, key, g)
        return z
    z = np.zeros(shape, dtype=np.float64)
    if _is_advanced_key(key):
        np.add.at(z, key, g.value)
    else:
        z[key] = g.value
    return Tensor(z, ((g, lambda gg: gg[key]),))


def concat(parts: Sequence, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    vals = [p.value if isinstance(p, Tensor) else _as_value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    edges = []
    offset = 0
    for p, v in zip(parts, vals):
        n = v.shape[ax]
        if isinstance(p, Tensor):
            key = (slice(None),) * ax + (slice(offset, offset + n),)
            edges.append((p, lambda g, key=key: g[key]))
        offset += n
    return Tensor(out, tuple(edges))


def stack(parts: Sequence, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.stack(parts, axis=axis)
    vals = [p.value if isinstance(p, Tensor) else _as_value(p) for p in parts]
    out = np.stack(vals, axis=axis)
    ax = axis % out.ndim
    edges = []
    for i, p in enumerate(parts):
        if isinstance(p, Tensor):
            key = (slice(None),) * ax + (i,)
            edges.append((p, lambda g, key=key: g[key]))
    return Tensor(out, tuple(edges))


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[Tensor]:
    """Gradients of a scalar ``output`` w.r.t. each tensor in ``wrt``.

    Returned gradients are graph nodes themselves, so they can be fed back
    into further traced computation and differentiated again.
    """
    if not isinstance(output, Tensor):
        raise TypeError("grad expects a Tensor output")
    if output.value.ndim != 0:
        raise ValueError("grad expects a scalar output")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(output, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack_.append((parent, False))

    grads: dict[int, Tensor] = {id(output): Tensor(1.0)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else add(prev, contrib)

    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(g if g is not None else Tensor(np.zeros_like(w.value)))
    return out


Objective = Callable[[Tensor, Any], Tensor]


def eval_loss(obj: Objective, phi: np.ndarray, ctx=None) -> float:
    """Evaluate a scalar objective at parameter vector ``phi``."""
    phi = _as_value(phi)
    if not np.all(np.isfinite(phi)):
        raise ValueError("parameter vector has non-finite entries")
    out = obj(Tensor(phi), ctx)
    val = float(value_of(out))
    if not np.isfinite(val):
        raise NumericalError("objective evaluated to a non-finite loss")
    return val


def gradient(obj: Objective, phi: np.ndarray, ctx=None) -> np.ndarray:
    """Exact reverse-mode gradient of ``obj`` at ``phi``."""
    phi = _as_value(phi)
    if not np.all(np.isfinite(phi)):
        raise ValueError("parameter vector has non-finite entries")
    leaf = Tensor(phi)
    out = obj(leaf, ctx)
    if not isinstance(out, Tensor):
        # objective does not depend on phi at all
        return np.zeros_like(phi)
    if not np.isfinite(out.value):
        raise NumericalError("objective evaluated to a non-finite loss")
    g = grad(out, [leaf])[0].value
    if not np.all(np.isfinite(g)):
        raise NumericalError("gradient has non-finite entries")
    return g


def bilevel_gradient(
    lower: Objective,
    upper: Objective,
    phi: np.ndarray,
    alpha: float,
    ctx=None,
    *,
    first_order: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``upper`` evaluated after one inner step on ``lower``.

    The probe point is ``phi' = phi - alpha * grad(lower)(phi)``. The exact
    return is ``d/dphi upper(phi')``, which carries the inner-step curvature
    term ``(I - alpha H_lower)``; with ``first_order=True`` that Jacobian is
    replaced by the identity and the plain ``grad(upper)(phi')`` is returned
    instead. Returns ``(gradient, probe)``.
    """
    if alpha < 0:
        raise ValueError("inner step size alpha must be >= 0")
    phi = _as_value(phi)
    if not np.all(np.isfinite(phi)):
        raise ValueError("parameter vector has non-finite entries")

    if alpha == 0.0:
        # probe == phi; reduces exactly to the plain upper gradient
        return gradient(upper, phi, ctx), phi.copy()

    leaf = Tensor(phi)
    low = lower(leaf, ctx)
    if isinstance(low, Tensor):
        if not np.isfinite(low.value):
            raise NumericalError("lower objective evaluated to a non-finite loss")
        g_low = grad(low, [leaf])[0]
    else:
        g_low = Tensor(np.zeros_like(phi))
    probe = sub(leaf, mul(g_low, alpha))
    if not np.all(np.isfinite(probe.value)):
        raise NumericalError("probe parameters are not finite")

    if first_order:
        probe_leaf = Tensor(probe.value)
        out = upper(probe_leaf, ctx)
        if not isinstance(out, Tensor):
            return np.zeros_like(phi), probe.value
        if not np.isfinite(out.value):
            raise NumericalError("upper objective evaluated to a non-finite loss")
        g = grad(out, [probe_leaf])[0].value
    else:
        out = upper(probe, ctx)
        if not isinstance(out, Tensor):
            return np.zeros_like(phi), probe.value
        if not np.isfinite(out.value):
            raise NumericalError("upper objective evaluated to a non-finite loss")
        g = grad(out, [leaf])[0].value
    if not np.all(np.isfinite(g)):
        raise NumericalError("bilevel gradient has non-finite entries")
    return g, probe.value

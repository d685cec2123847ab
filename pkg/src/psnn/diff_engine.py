"""Small differentiation kernel.

Three evaluation modes share one set of primitive functions:

* plain numpy arrays/floats -> ordinary evaluation,
* :class:`Var` (recorded on a :class:`Tape`) -> reverse mode,
* :class:`Dual` (primal + tangent) -> forward mode.

Code written against the functions in this module (``cos``, ``matvec``,
``stack`` ...) and the arithmetic operators works unchanged in all three.
Arithmetic primitives: add, sub, mul, div, integer power, neg, abs, relu,
cos, sin, log, dot, matvec, sum. Structural primitives (no arithmetic):
getitem, reshape, stack, concatenate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class DomainError(ArithmeticError):
    """Raised when a primitive leaves its domain or produces NaN/Inf."""


# ---------------------------------------------------------------------------
# traced value types


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Var(#{self.index}, {self.value!r})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __abs__ = lambda a: absolute(a)
    __pow__ = lambda a, n: power(a, n)
    __getitem__ = lambda a, key: getitem(a, key)


class Dual:
    """Primal value with one tangent direction (forward mode)."""

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None

    def __init__(self, primal, tangent):
        primal = np.asarray(primal, dtype=float)
        tangent = np.asarray(tangent, dtype=float)
        if primal.shape != tangent.shape:
            raise ValueError(
                f"primal shape {primal.shape} != tangent shape {tangent.shape}"
            )
        self.primal = primal
        self.tangent = tangent

    shape = property(lambda self: self.primal.shape)
    ndim = property(lambda self: self.primal.ndim)

    def __repr__(self):
        return f"Dual({self.primal!r}, {self.tangent!r})"

    __add__ = Var.__add__
    __radd__ = Var.__radd__
    __sub__ = Var.__sub__
    __rsub__ = Var.__rsub__
    __mul__ = Var.__mul__
    __rmul__ = Var.__rmul__
    __truediv__ = Var.__truediv__
    __rtruediv__ = Var.__rtruediv__
    __neg__ = Var.__neg__
    __abs__ = Var.__abs__
    __pow__ = Var.__pow__
    __getitem__ = Var.__getitem__


# TangentVector in the data model is a Dual over a state vector.
TangentVector = Dual


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    # forward function of the parent values (constants captured), used by replay
    fwd: Callable[..., np.ndarray]
    # local partials, recorded at forward time: cotangent -> per-parent cotangents
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None
    value: np.ndarray


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    inputs: list[int] = field(default_factory=list)
    output: int | None = None

    def leaf(self, value) -> Var:
        value = np.array(value, dtype=float)
        idx = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, None, value))
        self.inputs.append(idx)
        return Var(self, idx, value)

    def push(self, op, parents, fwd, vjp, value) -> Var:
        idx = len(self.nodes)
        self.nodes.append(Node(op, tuple(parents), fwd, vjp, value))
        return Var(self, idx, value)

    def replay(self, *leaves) -> np.ndarray:
        """Re-run the recorded computation on new leaf values."""
        if len(leaves) != len(self.inputs):
            raise ValueError(f"expected {len(self.inputs)} leaves, got {len(leaves)}")
        values: list[Any] = [None] * len(self.nodes)
        for idx, leaf in zip(self.inputs, leaves):
            values[idx] = np.array(leaf, dtype=float)
        for idx, node in enumerate(self.nodes):
            if node.op != "leaf":
                values[idx] = node.fwd(*(values[p] for p in node.parents))
        if self.output is None:
            raise ValueError("tape has no recorded output")
        return values[self.output]


# ---------------------------------------------------------------------------
# dispatch


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check(name: str, out, tape: Tape | None = None) -> None:
    if not np.isfinite(out).all():
        where = f" at tape node #{len(tape.nodes)}" if tape is not None else ""
        raise DomainError(f"{name} produced a non-finite value{where}")


@dataclass(frozen=True)
class Primitive:
    """fwd(*vals) -> out; vjp(g, out, *vals) -> cotangents; jvp(tans, out, *vals) -> tangent."""

    name: str
    fwd: Callable
    vjp: Callable
    jvp: Callable
    guard: Callable | None = None  # domain check on operand values

    def __call__(self, *args):
        tape = None
        has_dual = False
        for a in args:
            if isinstance(a, Var):
                if tape is not None and a.tape is not tape:
                    raise ValueError("operands recorded on different tapes")
                tape = a.tape
            elif isinstance(a, Dual):
                has_dual = True
        if tape is not None and has_dual:
            raise TypeError("cannot mix Var and Dual operands")

        if has_dual:
            vals = [a.primal if isinstance(a, Dual) else _const(a) for a in args]
            self._guard(vals, None)
            out = self.fwd(*vals)
            _check(self.name, out)
            tans = [a.tangent if isinstance(a, Dual) else None for a in args]
            return Dual(out, self.jvp(tans, out, *vals))

        if tape is None:
            vals = [_const(a) for a in args]
            self._guard(vals, None)
            out = self.fwd(*vals)
            _check(self.name, out)
            return out

        vals = [a.value if isinstance(a, Var) else _const(a) for a in args]
        self._guard(vals, tape)
        out = self.fwd(*vals)
        _check(self.name, out, tape)
        traced = [i for i, a in enumerate(args) if isinstance(a, Var)]
        parents = [args[i].index for i in traced]
        consts = list(vals)
        fwd = self.fwd

        def replay_fwd(*pvals):
            full = list(consts)
            for i, v in zip(traced, pvals):
                full[i] = v
            return fwd(*full)

        vjp = self.vjp

        def local_vjp(g):
            cts = vjp(g, out, *vals)
            return tuple(cts[i] for i in traced)

        return tape.push(self.name, parents, replay_fwd, local_vjp, out)

    def _guard(self, vals, tape):
        if self.guard is not None:
            msg = self.guard(*vals)
            if msg:
                where = f" at tape node #{len(tape.nodes)}" if tape is not None else ""
                raise DomainError(f"{self.name}: {msg}{where}")


def _const(a):
    if isinstance(a, np.ndarray):
        return a
    return np.asarray(a, dtype=float)


def _sum_tangents(*terms):
    out = None
    for t in terms:
        if t is None:
            continue
        out = t if out is None else out + t
    return out


def _tan(t, like):
    return np.zeros_like(like) if t is None else t


# ---------------------------------------------------------------------------
# arithmetic primitives

add = Primitive(
    "add",
    lambda a, b: a + b,
    lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    lambda t, o, a, b: np.broadcast_to(_tan(_sum_tangents(t[0], t[1]), o), o.shape).copy(),
)

sub = Primitive(
    "sub",
    lambda a, b: a - b,
    lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    lambda t, o, a, b: np.broadcast_to(
        _tan(_sum_tangents(t[0], None if t[1] is None else -t[1]), o), o.shape
    ).copy(),
)

mul = Primitive(
    "mul",
    lambda a, b: a * b,
    lambda g, o, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
    lambda t, o, a, b: np.broadcast_to(
        _tan(
            _sum_tangents(
                None if t[0] is None else t[0] * b, None if t[1] is None else a * t[1]
            ),
            o,
        ),
        o.shape,
    ).copy(),
)

div = Primitive(
    "div",
    lambda a, b: a / b,
    lambda g, o, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * o / b, b.shape)),
    lambda t, o, a, b: np.broadcast_to(
        _tan(
            _sum_tangents(
                None if t[0] is None else t[0] / b,
                None if t[1] is None else -o * t[1] / b,
            ),
            o,
        ),
        o.shape,
    ).copy(),
    guard=lambda a, b: "division by zero" if np.any(b == 0) else None,
)

neg = Primitive(
    "neg",
    lambda a: -a,
    lambda g, o, a: (-g,),
    lambda t, o, a: -t[0],
)

absolute = Primitive(
    "abs",
    np.abs,
    # d|x|/dx at 0 is taken as 0
    lambda g, o, a: (g * np.sign(a),),
    lambda t, o, a: np.sign(a) * t[0],
)

relu = Primitive(
    "relu",
    lambda a: np.maximum(a, 0.0),
    # derivative at 0 is taken as 0
    lambda g, o, a: (g * (a > 0),),
    lambda t, o, a: (a > 0) * t[0],
)

cos = Primitive(
    "cos",
    np.cos,
    lambda g, o, a: (-g * np.sin(a),),
    lambda t, o, a: -np.sin(a) * t[0],
)

sin = Primitive(
    "sin",
    np.sin,
    lambda g, o, a: (g * np.cos(a),),
    lambda t, o, a: np.cos(a) * t[0],
)

log = Primitive(
    "log",
    np.log,
    lambda g, o, a: (g / a,),
    lambda t, o, a: t[0] / a,
    guard=lambda a: "log of non-positive argument" if np.any(a <= 0) else None,
)


def power(x, n: int):
    """x**n for a fixed integer exponent n."""
    if isinstance(n, (bool, np.bool_)) or not isinstance(n, (int, np.integer)):
        raise TypeError(f"power exponent must be an integer, got {n!r}")
    n = int(n)
    return _power_prims(n)(x)


_POWERS: dict[int, Primitive] = {}


def _power_prims(n: int) -> Primitive:
    prim = _POWERS.get(n)
    if prim is None:
        if n >= 0:
            dfn = (lambda a: n * a ** (n - 1)) if n > 0 else np.zeros_like
            guard = None
        else:
            dfn = lambda a: n * a ** (n - 1)  # noqa: E731
            guard = lambda a: "division by zero" if np.any(a == 0) else None  # noqa: E731
        prim = Primitive(
            f"pow{n}",
            lambda a: a**n,
            lambda g, o, a: (g * dfn(a),),
            lambda t, o, a: dfn(a) * t[0],
            guard=guard,
        )
        _POWERS[n] = prim
    return prim


def _sum_fwd(axis):
    return lambda a: np.sum(a, axis=axis)


_SUMS: dict[Any, Primitive] = {}


def sum(x, axis: int | None = None):  # noqa: A001 - mirrors numpy
    prim = _SUMS.get(axis)
    if prim is None:

        def vjp(g, o, a):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

        prim = Primitive(
            "sum", _sum_fwd(axis), vjp, lambda t, o, a: np.sum(t[0], axis=axis)
        )
        _SUMS[axis] = prim
    return prim(x)


dot = Primitive(
    "dot",
    lambda a, b: np.sum(a * b, axis=-1),
    lambda g, o, a, b: (
        _unbroadcast(np.expand_dims(g, -1) * b, a.shape),
        _unbroadcast(np.expand_dims(g, -1) * a, b.shape),
    ),
    lambda t, o, a, b: _tan(
        _sum_tangents(
            None if t[0] is None else np.sum(t[0] * b, axis=-1),
            None if t[1] is None else np.sum(a * t[1], axis=-1),
        ),
        o,
    ),
)


def _mv(m, v):
    return np.matmul(m, v[..., None])[..., 0]


def _make_matvec(transpose: bool) -> Primitive:
    def tr(m):
        return np.swapaxes(m, -1, -2) if transpose else m

    def fwd(m, v):
        return _mv(tr(m), v)

    def vjp(g, o, m, v):
        mt = tr(m)
        dv = _unbroadcast(_mv(np.swapaxes(mt, -1, -2), g), v.shape)
        dmt = g[..., :, None] * v[..., None, :]
        dm = _unbroadcast(tr(dmt) if transpose else dmt, m.shape)
        return dm, dv

    def jvp(t, o, m, v):
        return _tan(
            _sum_tangents(
                None if t[0] is None else _mv(tr(t[0]), v),
                None if t[1] is None else _mv(tr(m), t[1]),
            ),
            o,
        )

    return Primitive("matvec_t" if transpose else "matvec", fwd, vjp, jvp)


_MATVEC = _make_matvec(False)
_MATVEC_T = _make_matvec(True)


def matvec(m, v, transpose: bool = False):
    """M @ v over the last axis, batched by broadcasting leading axes.

    With ``transpose=True`` computes M^T @ v.
    """
    return (_MATVEC_T if transpose else _MATVEC)(m, v)


# ---------------------------------------------------------------------------
# structural primitives


def getitem(x, key):
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not (k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice))):
            raise TypeError(f"only basic indexing is supported, got {k!r}")

    def vjp(g, o, a):
        z = np.zeros_like(a)
        z[key] += g
        return (z,)

    prim = Primitive("getitem", lambda a: a[key], vjp, lambda t, o, a: t[0][key])
    return prim(x)


def reshape(x, shape):
    shape = tuple(shape)
    prim = Primitive(
        "reshape",
        lambda a: np.reshape(a, shape),
        lambda g, o, a: (np.reshape(g, a.shape),),
        lambda t, o, a: np.reshape(t[0], shape),
    )
    return prim(x)


def _split_points(shapes, axis):
    sizes = [s[axis] for s in shapes]
    return np.cumsum(sizes)[:-1]


def concatenate(xs: Sequence, axis: int = -1):
    n = len(xs)

    def fwd(*arrs):
        return np.concatenate(arrs, axis=axis)

    def vjp(g, o, *arrs):
        pieces = np.split(g, _split_points([a.shape for a in arrs], axis), axis=axis)
        return tuple(pieces)

    def jvp(t, o, *arrs):
        return np.concatenate([_tan(ti, a) for ti, a in zip(t, arrs)], axis=axis)

    prim = Primitive(f"concatenate{n}", fwd, vjp, jvp)
    return prim(*xs)


def stack(xs: Sequence, axis: int = -1):
    def fwd(*arrs):
        arrs = np.broadcast_arrays(*arrs)
        return np.stack(arrs, axis=axis)

    def vjp(g, o, *arrs):
        pieces = [np.take(g, i, axis=axis) for i in range(len(arrs))]
        return tuple(_unbroadcast(p, a.shape) for p, a in zip(pieces, arrs))

    def jvp(t, o, *arrs):
        tans = np.broadcast_arrays(*[_tan(ti, a) for ti, a in zip(t, arrs)], *arrs)
        return np.stack(tans[: len(arrs)], axis=axis)

    prim = Primitive("stack", fwd, vjp, jvp)
    return prim(*xs)


# ---------------------------------------------------------------------------
# backend selection


class _PlainOps:
    """numpy versions of the primitive set, used when nothing is traced."""

    cos = staticmethod(np.cos)
    sin = staticmethod(np.sin)
    log = staticmethod(np.log)
    absolute = staticmethod(np.abs)
    reshape = staticmethod(np.reshape)

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def power(x, n):
        return x**n

    @staticmethod
    def sum(x, axis=None):
        return np.sum(x, axis=axis)

    @staticmethod
    def dot(a, b):
        return np.sum(a * b, axis=-1)

    @staticmethod
    def matvec(m, v, transpose=False):
        if transpose:
            m = np.swapaxes(m, -1, -2)
        return _mv(m, v)

    @staticmethod
    def stack(xs, axis=-1):
        if axis != -1:
            return np.stack(np.broadcast_arrays(*xs), axis=axis)
        shape = max((np.shape(x) for x in xs), key=len)
        out = np.empty(shape + (len(xs),))
        for i, x in enumerate(xs):
            out[..., i] = x
        return out

    @staticmethod
    def concatenate(xs, axis=-1):
        return np.concatenate(xs, axis=axis)


plain = _PlainOps()


class _TracedOps:
    cos, sin, log, absolute, relu = cos, sin, log, absolute, relu
    reshape = staticmethod(reshape)
    power = staticmethod(power)
    sum = staticmethod(sum)
    dot = dot
    matvec = staticmethod(matvec)
    stack = staticmethod(stack)
    concatenate = staticmethod(concatenate)


traced = _TracedOps()


def is_traced(x) -> bool:
    return isinstance(x, (Var, Dual))


def backend(*xs):
    """Primitive namespace for the given operands: traced if any operand is."""
    for x in xs:
        if isinstance(x, (Var, Dual)):
            return traced
    return plain


def check_finite(x, what: str = "value"):
    """Raise DomainError for NaN/Inf in a plain result; passes traced values through."""
    if not isinstance(x, (Var, Dual)) and not np.isfinite(x).all():
        raise DomainError(f"{what} is not finite")
    return x


# ---------------------------------------------------------------------------
# drivers


def value_of(x) -> np.ndarray:
    if isinstance(x, Var):
        return x.value
    if isinstance(x, Dual):
        return x.primal
    return np.asarray(x, dtype=float)


def record(f: Callable, leaves) -> tuple[np.ndarray, Tape]:
    """Evaluate ``f(leaves)`` while recording a tape over the leaf vector."""
    tape = Tape()
    x = tape.leaf(leaves)
    out = f(x)
    if not isinstance(out, Var) or out.tape is not tape:
        # constant in the leaves: keep the value on the tape anyway
        val = np.array(value_of(out), dtype=float)
        out = tape.push("const", (), lambda: val, lambda g: (), val)
    tape.output = out.index
    return out.value, tape


def backward(tape: Tape, cotangent) -> np.ndarray:
    """Gradient of ``cotangent . output`` with respect to the leaf vector."""
    if tape.output is None:
        raise ValueError("tape has no recorded output")
    out_value = tape.nodes[tape.output].value
    cot = np.asarray(cotangent, dtype=float)
    if cot.shape != out_value.shape:
        if cot.size == out_value.size and cot.ndim <= 1 and out_value.ndim <= 1:
            cot = cot.reshape(out_value.shape)
        else:
            raise ValueError(
                f"cotangent shape {cot.shape} does not match output shape {out_value.shape}"
            )
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[tape.output] = cot
    for idx in range(tape.output, -1, -1):
        g = grads[idx]
        node = tape.nodes[idx]
        if g is None or node.vjp is None:
            continue
        for parent, ct in zip(node.parents, node.vjp(g)):
            if ct is None:
                continue
            grads[parent] = ct if grads[parent] is None else grads[parent] + ct
    results = [
        np.zeros_like(tape.nodes[i].value) if grads[i] is None else grads[i]
        for i in tape.inputs
    ]
    return results[0] if len(results) == 1 else results


def value_and_grad(f: Callable, x) -> tuple[float, np.ndarray]:
    """Scalar ``f`` and its reverse-mode gradient at ``x``."""
    out, tape = record(f, x)
    if out.size != 1:
        raise ValueError(f"value_and_grad needs a scalar output, got shape {out.shape}")
    return float(out), backward(tape, np.ones_like(out))


def jvp(f: Callable, point, tangent) -> np.ndarray:
    """(df/dy)(point) @ tangent by forward tangent propagation."""
    point = np.asarray(point, dtype=float)
    tangent = np.asarray(tangent, dtype=float)
    if point.shape != tangent.shape:
        raise ValueError(f"point shape {point.shape} != tangent shape {tangent.shape}")
    out = f(Dual(point, tangent))
    if isinstance(out, Dual):
        return out.tangent
    return np.zeros_like(np.asarray(out, dtype=float))


def jacobian(f: Callable, point) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    n = point.shape[-1]
    eye = np.eye(n)
    cols = [jvp(f, point, eye[j]) for j in range(n)]
    return np.stack(cols, axis=-1)


def fd_gradient(f: Callable, point, step: float) -> np.ndarray:
    """Central finite differences of a scalar function (test oracle)."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=float)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def fd_jacobian(f: Callable, point, step: float) -> np.ndarray:
    """Central-difference Jacobian, column j = d f / d y_j."""
    x = np.array(point, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)


__all__ = [
    "DomainError", "Var", "Dual", "TangentVector", "Tape", "Node", "Primitive",
    "add", "sub", "mul", "div", "neg", "absolute", "relu", "cos", "sin", "log",
    "power", "sum", "dot", "matvec", "getitem", "reshape", "concatenate", "stack",
    "value_of", "record", "backward", "value_and_grad", "jvp", "jacobian",
    "fd_gradient", "fd_jacobian", "backend", "plain", "traced", "is_traced",
    "check_finite",
]

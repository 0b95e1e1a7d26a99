"""Define-by-run reverse-mode automatic differentiation over 2-D float64 arrays.

Every value is a matrix; scalars are 1x1.  A :class:`Tape` records primitive
operations eagerly, and :meth:`Tape.backward` walks the records once in
reverse order.  Elementwise ops broadcast like numpy and reduce gradients back
to the operand shape.

The module-level helpers (:func:`relu`, :func:`where`, :func:`sum` ...) accept
either plain arrays or :class:`Var` objects, so the same model code runs as a
fast numpy forward pass or as a recorded, differentiable one.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an operation."""


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _broadcast_shape(kind: str, a: tuple, b: tuple) -> tuple:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"{kind}: cannot broadcast {a} with {b}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class _Op(NamedTuple):
    forward: Callable
    vjp: Callable
    # optional vjp that skips parents whose gradient nobody needs
    vjp_needed: Callable | None = None


def _check_binary(kind, vals):
    _broadcast_shape(kind, vals[0].shape, vals[1].shape)


def _fwd_matmul(vals, payload):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: expected inner dimensions to agree, got {a.shape} @ {b.shape}"
        )
    return a @ b


def _fwd_select(vals, mask):
    a, b = vals
    shape = _broadcast_shape("select", a.shape, b.shape)
    if mask.shape != shape:
        shape = _broadcast_shape("select", shape, mask.shape)
    return np.where(mask, a, b)


def _vjp_select(g, vals, out, mask):
    a, b = vals
    zero = np.zeros_like(g)
    return [_unbroadcast(np.where(mask, g, zero), a.shape),
            _unbroadcast(np.where(mask, zero, g), b.shape)]


def _fwd_sum(vals, axis):
    x = vals[0]
    if axis is None:
        return np.array([[x.sum()]])
    return x.sum(axis=axis, keepdims=True)


def _vjp_sum(g, vals, out, axis):
    return [np.broadcast_to(g, vals[0].shape).copy()]


def _fwd_concat(vals, axis):
    other = 1 - axis
    if any(v.shape[other] != vals[0].shape[other] for v in vals):
        raise ShapeError(f"concat: mismatched shapes {[v.shape for v in vals]}")
    return np.concatenate(vals, axis=axis)


def _vjp_concat(g, vals, out, axis):
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return np.split(g, splits, axis=axis)


def _fwd_columns(vals, cols):
    x = vals[0]
    start, stop = cols
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"columns: range {cols} out of bounds for shape {x.shape}")
    return x[:, start:stop]


def _vjp_columns(g, vals, out, cols):
    grad = np.zeros_like(vals[0])
    grad[:, cols[0]:cols[1]] = g
    return [grad]


def _binary(kind, fwd, vjp_a, vjp_b):
    def forward(vals, payload):
        _check_binary(kind, vals)
        return fwd(vals[0], vals[1])

    def vjp(g, vals, out, payload):
        a, b = vals
        return [_unbroadcast(vjp_a(g, a, b, out), a.shape),
                _unbroadcast(vjp_b(g, a, b, out), b.shape)]

    return _Op(forward, vjp)


def _unary(fwd, local):
    return _Op(lambda vals, payload: fwd(vals[0]),
               lambda g, vals, out, payload: [g * local(vals[0], out)])


OPS: dict[str, _Op] = {
    "add": _binary("add", np.add, lambda g, a, b, o: g, lambda g, a, b, o: g),
    "sub": _binary("sub", np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g),
    "mul": _binary("mul", np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a),
    "div": _binary("div", np.divide, lambda g, a, b, o: g / b,
                   lambda g, a, b, o: -g * o / b),
    "matmul": _Op(_fwd_matmul,
                  lambda g, vals, out, p: [g @ vals[1].T, vals[0].T @ g],
                  lambda g, vals, needs: [g @ vals[1].T if needs[0] else None,
                                          vals[0].T @ g if needs[1] else None]),
    "neg": _unary(np.negative, lambda x, o: -1.0),
    # subgradient at exactly 0 is 0
    "relu": _unary(lambda x: np.maximum(x, 0.0), lambda x, o: x > 0.0),
    "tanh": _unary(np.tanh, lambda x, o: 1.0 - o * o),
    "exp": _unary(np.exp, lambda x, o: o),
    "log": _unary(np.log, lambda x, o: 1.0 / x),
    "square": _unary(np.square, lambda x, o: 2.0 * x),
    "scale": _Op(lambda vals, c: vals[0] * c, lambda g, vals, out, c: [g * c]),
    "sum": _Op(_fwd_sum, _vjp_sum),
    "select": _Op(_fwd_select, _vjp_select),
    "concat": _Op(_fwd_concat, _vjp_concat),
    "columns": _Op(_fwd_columns, _vjp_columns),
}


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    def __hash__(self):
        return hash((id(self.tape), self.index))

    def __eq__(self, other):
        return isinstance(other, Var) and other.tape is self.tape and other.index == self.index

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    def __radd__(self, other):
        return self.tape.record("add", [self._lift(other), self])

    def __sub__(self, other):
        return self.tape.record("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.record("sub", [self._lift(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", [self], float(other))
        return self.tape.record("mul", [self, self._lift(other)])

    def __rmul__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", [self], float(other))
        return self.tape.record("mul", [self._lift(other), self])

    def __truediv__(self, other):
        return self.tape.record("div", [self, self._lift(other)])

    def __rtruediv__(self, other):
        return self.tape.record("div", [self._lift(other), self])

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, self._lift(other)])

    def __rmatmul__(self, other):
        return self.tape.record("matmul", [self._lift(other), self])

    def __neg__(self):
        return self.tape.record("neg", [self])

    def __getitem__(self, cols):
        """Column slicing only: ``v[:, i]`` or ``v[:, i:j]`` (result stays 2-D)."""
        if not (isinstance(cols, tuple) and len(cols) == 2 and cols[0] == slice(None)):
            raise TypeError("Var supports column selection v[:, i] or v[:, i:j] only")
        c = cols[1]
        if isinstance(c, slice):
            start, stop, step = c.indices(self.shape[1])
            if step != 1:
                raise TypeError("strided column slices are not supported")
            return self.tape.record("columns", [self], (start, stop))
        c = int(c) % self.shape[1]
        return self.tape.record("columns", [self], (c, c + 1))


class Gradients:
    """Mapping from recorded :class:`Var` to its gradient array."""

    def __init__(self, tape: "Tape", grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise KeyError("variable was recorded on a different tape")
        g = self._grads[var.index] if var.index < len(self._grads) else None
        return np.zeros_like(var.value) if g is None else g


class Tape:
    """Ordered record of primitive operations.

    Parents always precede children because nodes are appended as they are
    evaluated.  A tape is not thread-safe; use one per thread.
    """

    def __init__(self):
        self._parents: list[tuple] = []
        self._kinds: list[str | None] = []
        self._payloads: list = []
        self._values: list[np.ndarray] = []
        self._needs: list[bool] = []

    def __len__(self):
        return len(self._values)

    def _append(self, kind, parents, payload, value, needs=False) -> Var:
        self._needs.append(needs)
        self._parents.append(parents)
        self._kinds.append(kind)
        self._payloads.append(payload)
        self._values.append(value)
        return Var(self, len(self._values) - 1, value)

    def leaf(self, value) -> Var:
        """Record an input whose gradient may be requested."""
        return self._append(None, (), None, _as_matrix(value).copy(), needs=True)

    def constant(self, value) -> Var:
        return self._append(None, (), None, _as_matrix(value))

    def record(self, op_kind: str, inputs: list, payload=None) -> Var:
        try:
            op = OPS[op_kind]
        except KeyError:
            raise ValueError(f"unknown op kind {op_kind!r}") from None
        for v in inputs:
            if v.tape is not self:
                raise ValueError("input recorded on a different tape")
        vals = [v.value for v in inputs]
        out = op.forward(vals, payload)
        needs = any(self._needs[v.index] for v in inputs)
        return self._append(op_kind, tuple(v.index for v in inputs), payload, out, needs)

    def backward(self, output: Var) -> Gradients:
        """Gradient of a 1x1 ``output`` with respect to every node that depends on a leaf.

        Nodes computed only from constants report zero gradients.
        """
        if output.tape is not self:
            raise ValueError("output recorded on a different tape")
        if output.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1, 1) output, got {output.shape}")
        grads: list = [None] * (output.index + 1)
        grads[output.index] = np.ones((1, 1))
        for i in range(output.index, -1, -1):
            g = grads[i]
            kind = self._kinds[i]
            if g is None or kind is None:
                continue
            parents = self._parents[i]
            vals = [self._values[p] for p in parents]
            op = OPS[kind]
            needs = [self._needs[p] for p in parents]
            if op.vjp_needed is not None:
                local = op.vjp_needed(g, vals, needs)
            else:
                local = op.vjp(g, vals, self._values[i], self._payloads[i])
            for p, lg, need in zip(parents, local, needs):
                if not need:
                    continue
                if grads[p] is None:
                    grads[p] = lg
                else:
                    grads[p] = grads[p] + lg
        return Gradients(self, grads)


def backward(tape: Tape, output: Var) -> Gradients:
    return tape.backward(output)


# -- dual-path helpers -------------------------------------------------------

def is_var(x) -> bool:
    return isinstance(x, Var)


def value(x) -> np.ndarray:
    """Forward value of ``x`` whether it is a Var or a plain array."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unary_call(kind, np_fn, x):
    if isinstance(x, Var):
        return x.tape.record(kind, [x])
    return np_fn(x)


def relu(x):
    return _unary_call("relu", lambda a: np.maximum(a, 0.0), x)


def tanh(x):
    return _unary_call("tanh", np.tanh, x)


def exp(x):
    return _unary_call("exp", np.exp, x)


def log(x):
    return _unary_call("log", np.log, x)


def square(x):
    return _unary_call("square", np.square, x)


def sum(x, axis: int | None = None):  # noqa: A001 - mirrors numpy naming
    if isinstance(x, Var):
        return x.tape.record("sum", [x], axis)
    x = np.asarray(x, dtype=np.float64)
    if axis is None:
        return np.array([[x.sum()]])
    return x.sum(axis=axis, keepdims=True)


def mean(x, axis: int | None = None):
    n = value(x).size if axis is None else value(x).shape[axis]
    return sum(x, axis) * (1.0 / n)


def where(mask, a, b):
    """Select ``a`` where ``mask`` holds, else ``b``; only the taken side gets gradient.

    ``mask`` must be computed from forward values; it is treated as a constant.
    """
    mask = np.asarray(mask, dtype=bool)
    tape = _tape_of(a, b)
    if tape is None:
        return np.where(mask, a, b)
    a = a if isinstance(a, Var) else tape.constant(a)
    b = b if isinstance(b, Var) else tape.constant(b)
    return tape.record("select", [a, b], mask)


def concat(xs: list, axis: int = 1):
    tape = _tape_of(*xs)
    if tape is None:
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    xs = [x if isinstance(x, Var) else tape.constant(x) for x in xs]
    return tape.record("concat", xs, axis)


def grad(fn: Callable, *args):
    """Evaluate ``fn`` on fresh leaves and return ``(value, [grad per arg])``.

    ``fn`` must return a 1x1 result.
    """
    tape = Tape()
    leaves = [tape.leaf(a) for a in args]
    out = fn(*leaves)
    if not isinstance(out, Var):
        raise TypeError("fn did not produce a recorded value; does it use its inputs?")
    grads = tape.backward(out)
    return float(out.value[0, 0]), [grads[v] for v in leaves]


__all__ = [
    "ShapeError", "Tape", "Var", "Gradients", "OPS", "backward", "grad",
    "is_var", "value", "relu", "tanh", "exp", "log", "square", "sum", "mean",
    "where", "concat",
]

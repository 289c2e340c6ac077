"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation performed on :class:`Var` instances
while it is active; :func:`backward` then walks the recorded nodes in exact
reverse order, accumulating vector-Jacobian products.  Leaves (parameters,
lifted constants) live off-tape and collect gradients in their ``grad``
attribute; every parameter receives exactly one accumulated gradient per
backward pass.

Vars interoperate with plain ndarrays: mixed expressions produce Vars, and
code written against the helpers in :mod:`difnet.arrayops` runs unchanged on
either type.  All values are float64; matrix data uses the ``(..., n, m)``
layout with vectors as ``(..., n, 1)`` columns.
"""

from __future__ import annotations

import numpy as np

from . import arrayops as ao

__all__ = ["Tape", "Var", "backward", "parameter", "constant"]

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Recording context: collects op nodes in creation (topological) order."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def clear_grads(self) -> None:
        for node in self.nodes:
            node.grad = None


def _active() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("value", "grad", "_refs")

    # Marker consumed by arrayops dispatch.
    _difnet_var = True
    # Keep numpy from intercepting mixed expressions.
    __array_ufunc__ = None

    def __init__(self, value, refs=()):
        self.value = np.asarray(value, dtype=float)
        self.grad: np.ndarray | None = None
        self._refs = refs
        if refs:
            tape = _active()
            if tape is None:
                raise RuntimeError("operations on Var require an active Tape")
            tape.nodes.append(self)

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    def lift_const(self, value) -> "Var":
        """Wrap a plain array as a constant leaf Var."""
        return Var(np.asarray(value, dtype=float))

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self.value, _val(other)
        refs = [(self, lambda g: _unbroadcast(g, a.shape))]
        if isinstance(other, Var):
            refs.append((other, lambda g: _unbroadcast(g, b.shape)))
        return Var(a + b, tuple(refs))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self.value, _val(other)
        refs = [(self, lambda g: _unbroadcast(g, a.shape))]
        if isinstance(other, Var):
            refs.append((other, lambda g: _unbroadcast(-g, b.shape)))
        return Var(a - b, tuple(refs))

    def __rsub__(self, other):
        b = _val(other)
        return Var(b - self.value, ((self, lambda g: _unbroadcast(-g, self.value.shape)),))

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __mul__(self, other):
        a, b = self.value, _val(other)
        refs = [(self, lambda g: _unbroadcast(g * b, a.shape))]
        if isinstance(other, Var):
            refs.append((other, lambda g: _unbroadcast(g * a, b.shape)))
        return Var(a * b, tuple(refs))

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self.value, _val(other)
        refs = [(self, lambda g: _unbroadcast(g / b, a.shape))]
        if isinstance(other, Var):
            refs.append((other, lambda g: _unbroadcast(-g * a / (b * b), b.shape)))
        return Var(a / b, tuple(refs))

    def __rtruediv__(self, other):
        a, b = _val(other), self.value
        return Var(
            a / b,
            ((self, lambda g: _unbroadcast(-g * a / (b * b), b.shape)),),
        )

    def __matmul__(self, other):
        a, b = self.value, _val(other)
        refs = [
            (self, lambda g: _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
        ]
        if isinstance(other, Var):
            refs.append(
                (other, lambda g: _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))
            )
        return Var(a @ b, tuple(refs))

    def __rmatmul__(self, other):
        a, b = _val(other), self.value
        return Var(
            a @ b,
            ((self, lambda g: _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)),),
        )

    def __getitem__(self, idx):
        value = self.value[idx]

        def vjp(g, idx=idx, shape=self.value.shape):
            out = np.zeros(shape)
            out[idx] += g
            return out

        return Var(value, ((self, vjp),))

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        return Var(self.value.reshape(shape), ((self, lambda g: g.reshape(old)),))

    def mT(self):
        return Var(
            np.swapaxes(self.value, -1, -2),
            ((self, lambda g: np.swapaxes(g, -1, -2)),),
        )

    def concat_with(self, parts, axis: int):
        arrays = [_val(p) for p in parts]
        sizes = [a.shape[axis] for a in arrays]
        offsets = np.cumsum([0] + sizes)
        refs = []
        for k, p in enumerate(parts):
            if isinstance(p, Var):

                def vjp(g, k=k):
                    index = [slice(None)] * g.ndim
                    index[axis if axis >= 0 else g.ndim + axis] = slice(
                        offsets[k], offsets[k + 1]
                    )
                    return g[tuple(index)]

                refs.append((p, vjp))
        return Var(np.concatenate(arrays, axis=axis), tuple(refs))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        value = self.value.sum(axis=axis, keepdims=keepdims)

        def vjp(g, axis=axis, keepdims=keepdims, shape=self.value.shape):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return Var(value, ((self, vjp),))

    def mean(self, axis=None, keepdims: bool = False):
        count = self.value.size if axis is None else np.prod(
            [self.value.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise nonlinearities -------------------------------------------

    def sqrt(self):
        out = np.sqrt(self.value)
        return Var(out, ((self, lambda g: g * (0.5 / out)),))

    def tanh(self):
        out = np.tanh(self.value)
        return Var(out, ((self, lambda g: g * (1.0 - out * out)),))

    def sigmoid(self):
        out = 1.0 / (1.0 + np.exp(-self.value))
        return Var(out, ((self, lambda g: g * out * (1.0 - out)),))

    def relu(self):
        mask = self.value > 0.0
        return Var(self.value * mask, ((self, lambda g: g * mask),))

    def atan2(self, other):
        y, x = self.value, _val(other)
        denom = x * x + y * y
        refs = [(self, lambda g: _unbroadcast(g * x / denom, y.shape))]
        if isinstance(other, Var):
            refs.append((other, lambda g: _unbroadcast(-g * y / denom, x.shape)))
        return Var(np.arctan2(y, x), tuple(refs))

    def wrap_angle(self):
        # Offset by integer multiples of 2*pi: gradient is the identity.
        return Var(ao.wrap_angle_value(self.value), ((self, lambda g: g),))

    # -- linear algebra --------------------------------------------------------

    def inv_spd(self):
        """Jittered symmetric-PD inverse.

        The adjoint composes the matrix-inverse rule -B^T @ g @ B^T with the
        forward symmetrization (A + A^T)/2, i.e. it is symmetrized.
        """
        out = np.linalg.inv(ao._spd_prepare(self.value))

        def vjp(g):
            bt = np.swapaxes(out, -1, -2)
            full = -bt @ g @ bt
            return 0.5 * (full + np.swapaxes(full, -1, -2))

        return Var(out, ((self, vjp),))

    def inv_sym(self):
        """Symmetric inverse without the PD certificate (same adjoint)."""
        out = ao.inv_sym_value(self.value)

        def vjp(g):
            bt = np.swapaxes(out, -1, -2)
            full = -bt @ g @ bt
            return 0.5 * (full + np.swapaxes(full, -1, -2))

        return Var(out, ((self, vjp),))

    def cholesky(self):
        """Lower Cholesky factor with the standard reverse-mode adjoint."""
        low = np.linalg.cholesky(self.value)

        def vjp(g):
            n = low.shape[-1]
            # Phi: lower-triangular part with the diagonal halved.
            weight = np.tril(np.ones((n, n))) - 0.5 * np.eye(n)
            phi = weight * (np.swapaxes(low, -1, -2) @ g)
            linv = np.linalg.inv(low)
            out = np.swapaxes(linv, -1, -2) @ phi @ linv
            return 0.5 * (out + np.swapaxes(out, -1, -2))

        return Var(low, ((self, vjp),))


def parameter(value) -> Var:
    """A trainable leaf variable (off-tape)."""
    return Var(np.array(value, dtype=float))


def constant(value) -> Var:
    """A non-trainable leaf variable (off-tape); gradients vanish into it."""
    return Var(np.asarray(value, dtype=float))


def backward(root: Var, tape: Tape) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable leaf.

    Visits the tape in exact reverse recording order; call
    ``tape.clear_grads()`` plus clearing leaf grads before reusing the tape
    for another root.
    """
    if root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    root.grad = np.ones_like(root.value)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._refs:
            contribution = vjp(g)
            if parent.grad is None:
                parent.grad = contribution
            else:
                parent.grad = parent.grad + contribution

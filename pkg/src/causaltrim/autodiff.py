"""Dense 2-D float64 tensors with reverse-mode differentiation.

Every tensor is a row-major ``rows x cols`` float64 matrix.  Operations
build an implicit tape: each result remembers its parents and a closure
that propagates the output adjoint to them.  ``Tensor.backward()`` replays
that tape once in reverse topological order, so every reachable parameter
accumulates its gradient exactly once.

The differentiation contract is validated externally: ``gradcheck``
compares every analytic gradient against central finite differences.
All operations are pure and deterministic; values are never mutated in
place once produced (the finite-difference probe in ``gradcheck`` pokes
leaf buffers between full re-evaluations, which is the one sanctioned
exception).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure evaluation mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ConfigError(f"tensors are 2-D; got array of ndim {arr.ndim}")
    return np.ascontiguousarray(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


class Tensor:
    """A rows x cols float64 matrix node in the reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping ---------------------------------------------------

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """A constant view of this tensor; gradients never flow through it."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------

    @staticmethod
    def _result(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _accum(parent: "Tensor", grad: np.ndarray) -> None:
        if not parent.requires_grad:
            return
        if parent.grad is None:
            parent.grad = grad.copy()
        else:
            parent.grad += grad

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) to every reachable parameter.

        Only defined for 1x1 (scalar) outputs.
        """
        if self.data.size != 1:
            raise ConfigError("backward() requires a scalar (1x1) output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Tensor(float(other))
        raise ConfigError(f"cannot operate on {type(other).__name__}")

    def _check_elementwise(self, other: "Tensor", op: str) -> None:
        if not _broadcastable(self.shape, other.shape):
            raise ConfigError(f"{op}: shapes {self.shape} and {other.shape} do not broadcast")

    def __add__(self, other):
        other = self._coerce(other)
        self._check_elementwise(other, "add")
        a, b = self, other

        def backward(g):
            Tensor._accum(a, _unbroadcast(g, a.shape))
            Tensor._accum(b, _unbroadcast(g, b.shape))

        return Tensor._result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        self._check_elementwise(other, "sub")
        a, b = self, other

        def backward(g):
            Tensor._accum(a, _unbroadcast(g, a.shape))
            Tensor._accum(b, _unbroadcast(-g, b.shape))

        return Tensor._result(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return Tensor._coerce(other).__sub__(self)

    def __neg__(self):
        a = self

        def backward(g):
            Tensor._accum(a, -g)

        return Tensor._result(-a.data, (a,), backward)

    def __mul__(self, other):
        other = self._coerce(other)
        self._check_elementwise(other, "mul")
        a, b = self, other

        def backward(g):
            Tensor._accum(a, _unbroadcast(g * b.data, a.shape))
            Tensor._accum(b, _unbroadcast(g * a.data, b.shape))

        return Tensor._result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        self._check_elementwise(other, "div")
        a, b = self, other

        def backward(g):
            Tensor._accum(a, _unbroadcast(g / b.data, a.shape))
            Tensor._accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._result(a.data / b.data, (a, b), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.cols != other.rows:
            raise ConfigError(f"matmul: inner dimensions differ ({self.shape} @ {other.shape})")
        a, b = self, other

        def backward(g):
            Tensor._accum(a, g @ b.data.T)
            Tensor._accum(b, a.data.T @ g)

        return Tensor._result(a.data @ b.data, (a, b), backward)

    # -- elementwise nonlinearities ---------------------------------------

    def sigmoid(self):
        x = self
        d = x.data
        # evaluate on the side with a negative exponent: no overflow either way
        s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                     np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

        def backward(g):
            Tensor._accum(x, g * s * (1.0 - s))

        return Tensor._result(s, (x,), backward)

    def tanh(self):
        x = self
        t = np.tanh(x.data)

        def backward(g):
            Tensor._accum(x, g * (1.0 - t * t))

        return Tensor._result(t, (x,), backward)

    def log(self):
        x = self

        def backward(g):
            Tensor._accum(x, g / x.data)

        return Tensor._result(np.log(x.data), (x,), backward)

    def sqrt(self):
        x = self
        r = np.sqrt(x.data)

        def backward(g):
            Tensor._accum(x, g * 0.5 / r)

        return Tensor._result(r, (x,), backward)

    def transpose(self):
        x = self

        def backward(g):
            Tensor._accum(x, np.ascontiguousarray(g.T))

        return Tensor._result(x.data.T.copy(), (x,), backward)

    def clip(self, lo: float, hi: float):
        """Clamp values to [lo, hi]; gradient passes only where unclamped."""
        x = self
        mask = (x.data >= lo) & (x.data <= hi)

        def backward(g):
            Tensor._accum(x, g * mask)

        return Tensor._result(np.clip(x.data, lo, hi), (x,), backward)

    # -- reductions and reshaping ------------------------------------------

    def sum(self):
        x = self

        def backward(g):
            Tensor._accum(x, np.full(x.shape, g[0, 0]))

        return Tensor._result(x.data.sum(), (x,), backward)

    def sum_rows_sorted(self):
        """Per-row sum over addends sorted ascending (one column out).

        Sorting makes the reduction a function of the multiset of row
        values, so bitwise-identical results survive any column
        permutation of the input.
        """
        x = self
        total = np.sort(x.data, axis=1).sum(axis=1, keepdims=True)

        def backward(g):
            Tensor._accum(x, np.broadcast_to(g, x.shape).copy())

        return Tensor._result(total, (x,), backward)

    def mean(self):
        x = self
        n = x.data.size

        def backward(g):
            Tensor._accum(x, np.full(x.shape, g[0, 0] / n))

        return Tensor._result(x.data.mean(), (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with analytic backward for both operands."""
    return a @ b


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softmax_rows(x: Tensor, temperature: float) -> Tensor:
    """Row-wise softmax of x / temperature.

    Division by the temperature happens first, then rows are stabilized
    by subtracting their maximum before exponentiation.  Every output row
    sums to 1 and all entries are strictly positive.  The normalizer sums
    the exponentials in sorted order, so permuting input columns permutes
    the output columns bitwise.
    """
    if temperature <= 0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    z = x.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / np.sort(e, axis=1).sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        Tensor._accum(x, (g - inner) * s / temperature)

    return Tensor._result(s, (x,), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two tensors with equal row counts along columns."""
    if a.rows != b.rows:
        raise ConfigError(f"concat_cols: row counts differ ({a.rows} vs {b.rows})")
    na = a.cols

    def backward(g):
        Tensor._accum(a, g[:, :na])
        Tensor._accum(b, g[:, na:])

    return Tensor._result(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a table by integer index (embedding lookup).

    The backward pass scatter-adds adjoints into the table, so rows picked
    more than once accumulate correctly.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise ConfigError(f"gather_rows: index out of range for table with {table.rows} rows")

    def backward(g):
        if table.requires_grad:
            full = np.zeros(table.shape)
            np.add.at(full, idx, g)
            Tensor._accum(table, full)

    return Tensor._result(table.data[idx], (table,), backward)


# -- gradient checking ------------------------------------------------------


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple[int, int]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic gradients vs central differences."""

    params: list[ParamCheck] = field(default_factory=list)
    step: float = 1e-5

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_err < tolerance

    def summary(self) -> str:
        lines = [f"gradcheck (central differences, h={self.step:g})"]
        for p in self.params:
            lines.append(
                f"  {p.name:<12s} max rel err {p.max_rel_err:.3e} "
                f"at {p.worst_index} (analytic {p.analytic:+.6e}, numeric {p.numeric:+.6e})"
            )
        lines.append(f"  overall max rel err {self.max_rel_err:.3e}")
        return "\n".join(lines)


def gradcheck(closure, params: dict[str, Tensor], step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of a scalar closure to finite differences.

    ``closure`` must be a deterministic function of the given parameters
    that rebuilds its graph on every call and returns a 1x1 tensor.  The
    relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    for p in params.values():
        p.grad = None
    loss = closure()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"gradcheck aborted: non-finite loss {loss.data[0, 0]!r}")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
        for name, p in params.items()
    }

    report = GradCheckReport(step=step)
    for name, p in params.items():
        ga = analytic[name]
        worst = (0.0, (0, 0), 0.0, 0.0)
        for i in range(p.rows):
            for j in range(p.cols):
                orig = p.data[i, j]
                with no_grad():
                    p.data[i, j] = orig + step
                    plus = closure().item()
                    p.data[i, j] = orig - step
                    minus = closure().item()
                p.data[i, j] = orig
                gn = (plus - minus) / (2.0 * step)
                rel = abs(ga[i, j] - gn) / max(abs(ga[i, j]), abs(gn), 1e-8)
                if rel >= worst[0]:
                    worst = (rel, (i, j), ga[i, j], gn)
        report.params.append(ParamCheck(name, worst[0], worst[1], worst[2], worst[3]))
    return report

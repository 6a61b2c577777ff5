"""Dense float64 matrices, seeded RNG, and a small reverse-mode tape.

Every value in this package is a 2-D, row-major, contiguous float64 array
(batches are one row per sample; scalars are 1x1).  Gradients come from an
explicit Wengert tape: while a ``GradientTape`` is active, each primitive op
appends a backward closure, and ``backward`` replays the closures in reverse.
With no active tape the same ops run as plain numpy, so frozen evaluation and
training share one code path.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, PreconditionError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


def as_matrix(data) -> np.ndarray:
    """Coerce to a contiguous 2-D float64 array (scalars become 1x1)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    return np.ascontiguousarray(a)


class Rng:
    """Deterministic random source (PCG64 behind a fixed integer seed)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def standard_normal(self, rows: int, cols: int) -> np.ndarray:
        if rows < 1 or cols < 1:
            raise PreconditionError(f"sample shape must be positive, got ({rows}, {cols})")
        return self._gen.standard_normal((rows, cols))

    def normal(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        return self.standard_normal(rows, cols) * scale

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self) -> "Rng":
        """Derive an independent, reproducible stream."""
        return Rng(int(self._gen.integers(0, 2**63 - 1)))


def standard_normal_sample(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """I.i.d. draws from N(0,1); bit-identical for identical seeds."""
    return rng.standard_normal(rows, cols)


def standard_normal_logpdf(u: np.ndarray) -> np.ndarray:
    """Per-row log density of a standard diagonal Gaussian, shape (N,)."""
    u = as_matrix(u)
    if not np.isfinite(u).all():
        raise NumericError("standard_normal_logpdf: input contains non-finite values")
    d = u.shape[1]
    return -0.5 * d * LOG_2PI - 0.5 * np.sum(u * u, axis=1)


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------

_TAPE_STACK: list["GradientTape"] = []


def active_tape() -> "GradientTape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class GradientTape:
    """Ordered record of primitive ops; replayed in reverse by ``backward``.

    Use as a context manager around the forward computation.  Single-threaded
    per tape; independent tapes may coexist (only the innermost records).
    """

    def __init__(self):
        self._records: list = []

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "gradient tapes exited out of order"
        return False

    def record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)


class Tensor:
    """A 2-D float64 value plus its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = as_matrix(data)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def accumulate(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = delta.copy()
        else:
            self.grad += delta

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """A trainable tensor: identical to Tensor, named for intent."""
    return Tensor(np.array(data, dtype=np.float64))


def backward(tape: GradientTape, loss: Tensor, parameters: list[Tensor] | None = None):
    """Replay the tape in reverse from a scalar loss.

    Returns gradients aligned with ``parameters`` (zeros for parameters the
    forward pass never touched); gradients also remain on each ``.grad``.
    """
    if loss.data.shape != (1, 1):
        raise ShapeError(f"loss must be a 1x1 scalar, got shape {loss.data.shape}")
    loss.grad = np.ones((1, 1))
    for fn in reversed(tape._records):
        fn()
    if parameters is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in parameters]


def zero_gradients(parameters: list[Tensor]) -> None:
    for p in parameters:
        p.grad = None


# ---------------------------------------------------------------------------
# Primitive ops.  Each computes with numpy and, when a tape is active,
# records a closure that routes the output gradient to its inputs.
# ---------------------------------------------------------------------------


def _out_grad(out: Tensor) -> np.ndarray | None:
    return out.grad


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)
        tape.record(bwd)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes differ, {a.data.shape} vs {b.data.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g)
            b.accumulate(g)
        tape.record(bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g)
            b.accumulate(-g)
        tape.record(bwd)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * b.data)
            b.accumulate(g * a.data)
        tape.record(bwd)
    return out


def add_rowvec(a, v) -> Tensor:
    """(N,D) + (1,D) with broadcast over rows (bias add)."""
    a, v = as_tensor(a), as_tensor(v)
    if v.data.shape != (1, a.data.shape[1]):
        raise ShapeError(f"add_rowvec: expected (1,{a.data.shape[1]}), got {v.data.shape}")
    out = Tensor(a.data + v.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g)
            v.accumulate(g.sum(axis=0, keepdims=True))
        tape.record(bwd)
    return out


def mul_rowvec(a, v) -> Tensor:
    """(N,D) * (1,D) with broadcast over rows."""
    a, v = as_tensor(a), as_tensor(v)
    if v.data.shape != (1, a.data.shape[1]):
        raise ShapeError(f"mul_rowvec: expected (1,{a.data.shape[1]}), got {v.data.shape}")
    out = Tensor(a.data * v.data)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * v.data)
            v.accumulate((g * a.data).sum(axis=0, keepdims=True))
        tape.record(bwd)
    return out


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * c)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * c)
        tape.record(bwd)
    return out


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data + c)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g)
        tape.record(bwd)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * out.data)
        tape.record(bwd)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NumericError("log: input must be strictly positive")
    out = Tensor(np.log(a.data))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g / a.data)
        tape.record(bwd)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * (1.0 - out.data * out.data))
        tape.record(bwd)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is stable for large |x|
    out = Tensor(0.5 * (np.tanh(0.5 * a.data) + 1.0))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * out.data * (1.0 - out.data))
        tape.record(bwd)
    return out


def powc(a, p: float) -> Tensor:
    """Elementwise a**p for constant p; requires positive input for p < 1."""
    a = as_tensor(a)
    if p != int(p) or p < 1:
        if (a.data <= 0).any():
            raise NumericError(f"powc: input must be positive for exponent {p}")
    out = Tensor(a.data ** p)
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g * p * a.data ** (p - 1.0))
        tape.record(bwd)
    return out


def sum_rows(a) -> Tensor:
    """Row sums: (N,D) -> (N,1)."""
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=1, keepdims=True))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(np.broadcast_to(g, a.data.shape))
        tape.record(bwd)
    return out


def sum_cols(a) -> Tensor:
    """Column sums: (N,D) -> (1,D)."""
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=0, keepdims=True))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(np.broadcast_to(g, a.data.shape))
        tape.record(bwd)
    return out


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.array([[a.data.sum()]]))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(np.full_like(a.data, g[0, 0]))
        tape.record(bwd)
    return out


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


def col_mean(a) -> Tensor:
    """Column means: (N,D) -> (1,D)."""
    a = as_tensor(a)
    return scale(sum_cols(a), 1.0 / a.data.shape[0])


def tile_rows(a, n: int) -> Tensor:
    """Repeat a (1,D) row n times; backward sums over rows."""
    a = as_tensor(a)
    if a.data.shape[0] != 1:
        raise ShapeError(f"tile_rows: expected a single row, got {a.data.shape}")
    out = Tensor(np.repeat(a.data, n, axis=0))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g.sum(axis=0, keepdims=True))
        tape.record(bwd)
    return out


def flip_cols(a) -> Tensor:
    """Reverse column order; backward flips the gradient back."""
    a = as_tensor(a)
    out = Tensor(a.data[:, ::-1].copy())
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g[:, ::-1])
        tape.record(bwd)
    return out


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            a.accumulate(g[:, :na])
            b.accumulate(g[:, na:])
        tape.record(bwd)
    return out


def slice_cols(a, j0: int, j1: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= j0 <= j1 <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: [{j0}:{j1}] out of range for {a.data.shape}")
    out = Tensor(a.data[:, j0:j1].copy())
    tape = active_tape()
    if tape is not None:
        def bwd():
            g = _out_grad(out)
            if g is None:
                return
            full = np.zeros_like(a.data)
            full[:, j0:j1] = g
            a.accumulate(full)
        tape.record(bwd)
    return out


def affine(x, w, b) -> Tensor:
    """x @ w + b, the dense-layer building block."""
    return add_rowvec(matmul(x, w), b)


def gaussian_logpdf_rows(u: Tensor) -> Tensor:
    """Taped per-row standard-normal log density: (N,D) -> (N,1)."""
    d = u.data.shape[1]
    return add_scalar(scale(sum_rows(mul(u, u)), -0.5), -0.5 * d * LOG_2PI)


def check_finite(a: Tensor | np.ndarray, context: str) -> None:
    data = a.data if isinstance(a, Tensor) else a
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values in {context}")

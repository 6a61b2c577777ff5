"""Invertible conditional building blocks.

Direction convention, used consistently across the package: ``forward`` maps
base-distribution noise toward data (generation), ``inverse`` maps data toward
noise (the density/training pass).  Both return ``(output, logdet)`` where
``logdet`` is the per-row log |det Jacobian| of the direction being run, as
(N,1) tensors.  Context rows ``y`` condition the learned layers and are
ignored by permutations and batch normalization.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import NumericError, PreconditionError, ShapeError
from .numerics import Rng, Tensor

DEFAULT_LOG_SCALE_CLAMP = 5.0


def _check_batch(layer, x: Tensor, y: Tensor) -> None:
    if x.data.shape[1] != layer.dim:
        raise ShapeError(f"{layer!r}: expected {layer.dim} data columns, got {x.data.shape[1]}")
    if y.data.shape[1] != layer.context_dim:
        raise ShapeError(
            f"{layer!r}: expected {layer.context_dim} context columns, got {y.data.shape[1]}")
    if x.data.shape[0] != y.data.shape[0]:
        raise ShapeError(f"{layer!r}: row counts differ, {x.data.shape[0]} vs {y.data.shape[0]}")


def _check_output(layer, out: Tensor, logdet: Tensor) -> None:
    if not (np.isfinite(out.data).all() and np.isfinite(logdet.data).all()):
        raise NumericError(f"non-finite output in {layer!r}")


def clamped_log_scale(raw: Tensor, clamp: float) -> Tensor:
    """Soft-bound raw scale outputs to (-clamp, clamp) via clamp*tanh(x/clamp)."""
    return nm.scale(nm.tanh(nm.scale(raw, 1.0 / clamp)), clamp)


# ---------------------------------------------------------------------------
# Conditioner networks
# ---------------------------------------------------------------------------

def autoregressive_degrees(dim: int, hidden: int) -> tuple[np.ndarray, np.ndarray]:
    """Sequential connectivity degrees for inputs (1..D) and hidden units."""
    in_degrees = np.arange(1, dim + 1)
    hidden_degrees = np.arange(hidden) % max(1, dim - 1) + min(1, dim - 1)
    return in_degrees, hidden_degrees


def autoregressive_masks(dim: int, hidden: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Input (D,H), hidden (H,H) and output (H,2D) masks.

    A unit of degree d sees only inputs of degree <= d; outputs for
    coordinate i (both shift and log-scale) see only degrees < i, which
    makes coordinate i a function of coordinates 1..i-1 alone.
    """
    in_deg, hid_deg = autoregressive_degrees(dim, hidden)
    out_deg = np.tile(np.arange(1, dim + 1), 2)
    mask_in = (in_deg[:, None] <= hid_deg[None, :]).astype(np.float64)
    mask_hidden = (hid_deg[:, None] <= hid_deg[None, :]).astype(np.float64)
    mask_out = (hid_deg[:, None] < out_deg[None, :]).astype(np.float64)
    return mask_in, mask_hidden, mask_out


def _init_weight(rng: Rng, rows: int, cols: int, gain: float = 1.0) -> Tensor:
    return nm.parameter(rng.normal(rows, cols) * (gain / np.sqrt(rows)))


class MaskedConditioner:
    """Masked dense net with residual blocks: (x, y) -> (shift, log_scale).

    All coordinates are produced in one pass; the masks enforce that outputs
    for coordinate i depend on x only through coordinates before i, while the
    context y may reach every output.
    """

    def __init__(self, dim: int, context_dim: int, hidden: int, blocks: int, rng: Rng,
                 clamp: float = DEFAULT_LOG_SCALE_CLAMP):
        self.dim = dim
        self.context_dim = context_dim
        self.hidden = hidden
        self.blocks = blocks
        self.clamp = clamp
        m_in, m_hid, m_out = autoregressive_masks(dim, hidden)
        self._mask_in, self._mask_hidden, self._mask_out = m_in, m_hid, m_out
        self.w_in = _init_weight(rng, dim, hidden)
        self.w_ctx = _init_weight(rng, context_dim, hidden)
        self.b_in = nm.parameter(np.zeros((1, hidden)))
        self.block_params = []
        for _ in range(blocks):
            self.block_params.append((
                _init_weight(rng, hidden, hidden),
                nm.parameter(np.zeros((1, hidden))),
                _init_weight(rng, hidden, hidden),
                nm.parameter(np.zeros((1, hidden))),
            ))
        # near-zero output layer: the flow starts close to the identity
        self.w_out = _init_weight(rng, hidden, 2 * dim, gain=0.01)
        # direct context->output connection: the first coordinate has no
        # earlier data coordinates, so without this it could not be
        # conditioned at all
        self.w_ctx_out = _init_weight(rng, context_dim, 2 * dim, gain=0.01)
        self.b_out = nm.parameter(np.zeros((1, 2 * dim)))

    def parameters(self) -> list[Tensor]:
        ps = [self.w_in, self.w_ctx, self.b_in]
        for w1, b1, w2, b2 in self.block_params:
            ps += [w1, b1, w2, b2]
        ps += [self.w_out, self.w_ctx_out, self.b_out]
        return ps

    def __call__(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        h = nm.matmul(x, nm.mul(self.w_in, Tensor(self._mask_in)))
        h = nm.add(h, nm.matmul(y, self.w_ctx))
        h = nm.add_rowvec(h, self.b_in)
        masked_hidden = Tensor(self._mask_hidden)
        for w1, b1, w2, b2 in self.block_params:
            t = nm.affine(nm.tanh(h), nm.mul(w1, masked_hidden), b1)
            t = nm.affine(nm.tanh(t), nm.mul(w2, masked_hidden), b2)
            h = nm.add(h, t)
        out = nm.affine(nm.tanh(h), nm.mul(self.w_out, Tensor(self._mask_out)), self.b_out)
        out = nm.add(out, nm.matmul(y, self.w_ctx_out))
        shift = nm.slice_cols(out, 0, self.dim)
        log_scale = clamped_log_scale(nm.slice_cols(out, self.dim, 2 * self.dim), self.clamp)
        return shift, log_scale


class ResidualConditioner:
    """Plain dense net with residual blocks: (x, y) -> R^out_dim."""

    def __init__(self, in_dim: int, context_dim: int, out_dim: int, hidden: int,
                 blocks: int, rng: Rng):
        self.in_dim = in_dim
        self.context_dim = context_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.blocks = blocks
        self.w_in = _init_weight(rng, in_dim + context_dim, hidden)
        self.b_in = nm.parameter(np.zeros((1, hidden)))
        self.block_params = []
        for _ in range(blocks):
            self.block_params.append((
                _init_weight(rng, hidden, hidden),
                nm.parameter(np.zeros((1, hidden))),
                _init_weight(rng, hidden, hidden),
                nm.parameter(np.zeros((1, hidden))),
            ))
        self.w_out = _init_weight(rng, hidden, out_dim, gain=0.01)
        self.b_out = nm.parameter(np.zeros((1, out_dim)))

    def parameters(self) -> list[Tensor]:
        ps = [self.w_in, self.b_in]
        for w1, b1, w2, b2 in self.block_params:
            ps += [w1, b1, w2, b2]
        ps += [self.w_out, self.b_out]
        return ps

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        h = nm.affine(nm.concat_cols(x, y), self.w_in, self.b_in)
        for w1, b1, w2, b2 in self.block_params:
            t = nm.affine(nm.tanh(h), w1, b1)
            t = nm.affine(nm.tanh(t), w2, b2)
            h = nm.add(h, t)
        return nm.affine(nm.tanh(h), self.w_out, self.b_out)


# ---------------------------------------------------------------------------
# Invertible layers
# ---------------------------------------------------------------------------

class MaskedAutoregressiveLayer:
    """Autoregressive affine transform with a masked conditioner.

    Inverse (density pass) is a single parallel pass: the shift and log-scale
    for every coordinate depend only on earlier data coordinates.  Forward
    (generation) must build coordinates one at a time, so it runs the
    conditioner ``dim`` times and is not recorded on the tape.
    """

    tag = "maf"

    def __init__(self, dim: int, context_dim: int, hidden: int = 64, blocks: int = 2,
                 clamp: float = DEFAULT_LOG_SCALE_CLAMP, rng: Rng | None = None):
        if dim < 1:
            raise PreconditionError("dim must be >= 1")
        self.dim = dim
        self.context_dim = context_dim
        self.clamp = clamp
        self.conditioner = MaskedConditioner(dim, context_dim, hidden, blocks,
                                             rng or Rng(0), clamp)

    def __repr__(self):
        return f"MaskedAutoregressiveLayer(dim={self.dim})"

    def parameters(self) -> list[Tensor]:
        return self.conditioner.parameters()

    def forward(self, u: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        _check_batch(self, u, y)
        x = np.zeros_like(u.data)
        log_scale = np.zeros_like(u.data)
        y_const = Tensor(y.data)
        for i in range(self.dim):
            shift_i, log_scale_i = self.conditioner(Tensor(x), y_const)
            x[:, i] = u.data[:, i] * np.exp(log_scale_i.data[:, i]) + shift_i.data[:, i]
            log_scale[:, i] = log_scale_i.data[:, i]
        out = Tensor(x)
        logdet = Tensor(log_scale.sum(axis=1, keepdims=True))
        _check_output(self, out, logdet)
        return out, logdet

    def inverse(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        _check_batch(self, x, y)
        shift, log_scale = self.conditioner(x, y)
        u = nm.mul(nm.sub(x, shift), nm.exp(nm.scale(log_scale, -1.0)))
        logdet = nm.scale(nm.sum_rows(log_scale), -1.0)
        _check_output(self, u, logdet)
        return u, logdet


class AffineCouplingLayer:
    """Affine coupling: one block of coordinates passes through untouched and
    parameterizes an elementwise affine map of the other block.

    ``parity`` 0 passes the leading ``split`` columns, parity 1 the trailing
    ones; stacking layers with alternating parity lets every coordinate be
    transformed somewhere in the stack.
    """

    tag = "coupling"

    def __init__(self, dim: int, context_dim: int, split: int | None = None,
                 parity: int = 0, hidden: int = 64, blocks: int = 2,
                 clamp: float = DEFAULT_LOG_SCALE_CLAMP, rng: Rng | None = None):
        if dim < 2:
            raise PreconditionError("coupling layers need dim >= 2")
        self.dim = dim
        self.context_dim = context_dim
        self.split = split if split is not None else (dim + 1) // 2
        if not (1 <= self.split < dim):
            raise PreconditionError(f"split must be in [1, dim), got {self.split}")
        self.parity = parity % 2
        self.clamp = clamp
        pass_dim = self.split if self.parity == 0 else dim - self.split
        out_dim = dim - pass_dim
        rng = rng or Rng(0)
        self.scale_net = ResidualConditioner(pass_dim, context_dim, out_dim, hidden,
                                             blocks, rng)
        self.shift_net = ResidualConditioner(pass_dim, context_dim, out_dim, hidden,
                                             blocks, rng)

    def __repr__(self):
        return f"AffineCouplingLayer(dim={self.dim}, parity={self.parity})"

    def parameters(self) -> list[Tensor]:
        return self.scale_net.parameters() + self.shift_net.parameters()

    def _split(self, v: Tensor) -> tuple[Tensor, Tensor]:
        if self.parity == 0:
            return nm.slice_cols(v, 0, self.split), nm.slice_cols(v, self.split, self.dim)
        return nm.slice_cols(v, self.split, self.dim), nm.slice_cols(v, 0, self.split)

    def _join(self, passed: Tensor, transformed: Tensor) -> Tensor:
        if self.parity == 0:
            return nm.concat_cols(passed, transformed)
        return nm.concat_cols(transformed, passed)

    def _scale_shift(self, passed: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        s = clamped_log_scale(self.scale_net(passed, y), self.clamp)
        t = self.shift_net(passed, y)
        return s, t

    def forward(self, u: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        _check_batch(self, u, y)
        passed, rest = self._split(u)
        s, t = self._scale_shift(passed, y)
        transformed = nm.add(nm.mul(rest, nm.exp(s)), t)
        out = self._join(passed, transformed)
        logdet = nm.sum_rows(s)
        _check_output(self, out, logdet)
        return out, logdet

    def inverse(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        _check_batch(self, x, y)
        passed, rest = self._split(x)
        s, t = self._scale_shift(passed, y)
        restored = nm.mul(nm.sub(rest, t), nm.exp(nm.scale(s, -1.0)))
        out = self._join(passed, restored)
        logdet = nm.scale(nm.sum_rows(s), -1.0)
        _check_output(self, out, logdet)
        return out, logdet


class ReversePermutation:
    """Reverse the coordinate order; an involution with zero logdet."""

    tag = "reverse"

    def __init__(self, dim: int, context_dim: int = 0):
        self.dim = dim
        self.context_dim = context_dim

    def __repr__(self):
        return f"ReversePermutation(dim={self.dim})"

    def parameters(self) -> list[Tensor]:
        return []

    def _apply(self, v: Tensor) -> tuple[Tensor, Tensor]:
        if v.data.shape[1] != self.dim:
            raise ShapeError(f"{self!r}: expected {self.dim} columns, got {v.data.shape[1]}")
        return nm.flip_cols(v), Tensor(np.zeros((v.data.shape[0], 1)))

    def forward(self, u: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        return self._apply(u)

    def inverse(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        return self._apply(x)


class InvertibleBatchNorm:
    """Per-dimension normalization with tracked running statistics.

    The density pass (``inverse``) normalizes: in training mode it uses batch
    statistics (and updates the running ones by ``momentum``); frozen, it uses
    the running statistics.  The generation pass (``forward``) de-normalizes
    and always uses running statistics, so frozen forward/inverse are exact
    mutual inverses.
    """

    tag = "batchnorm"
    TRAINING = "training"
    FROZEN = "frozen"

    def __init__(self, dim: int, context_dim: int = 0, momentum: float = 0.1,
                 eps: float = 1e-5):
        if not (0.0 < momentum < 1.0):
            raise PreconditionError(f"momentum must be in (0,1), got {momentum}")
        self.dim = dim
        self.context_dim = context_dim
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.mode = self.FROZEN

    def __repr__(self):
        return f"InvertibleBatchNorm(dim={self.dim}, mode={self.mode})"

    def parameters(self) -> list[Tensor]:
        return []

    def _check(self, v: Tensor) -> None:
        if v.data.shape[1] != self.dim:
            raise ShapeError(f"{self!r}: expected {self.dim} columns, got {v.data.shape[1]}")

    def forward(self, u: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        self._check(u)
        n = u.data.shape[0]
        var_eps = self.running_var + self.eps
        out = nm.add_rowvec(nm.mul_rowvec(u, Tensor(np.sqrt(var_eps))),
                            Tensor(self.running_mean))
        logdet = Tensor(np.full((n, 1), 0.5 * np.log(var_eps).sum()))
        _check_output(self, out, logdet)
        return out, logdet

    def inverse(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        self._check(x)
        n = x.data.shape[0]
        if self.mode == self.TRAINING:
            if n < 2:
                raise PreconditionError("training-mode batch norm needs at least 2 rows")
            mean = nm.col_mean(x)
            centered = nm.sub(x, nm.tile_rows(mean, n))
            var = nm.col_mean(nm.mul(centered, centered))
            var_eps = nm.add_scalar(var, self.eps)
            out = nm.mul_rowvec(centered, nm.powc(var_eps, -0.5))
            logdet = nm.tile_rows(nm.scale(nm.sum_all(nm.log(var_eps)), -0.5), n)
            self.running_mean += self.momentum * (mean.data - self.running_mean)
            self.running_var += self.momentum * (var.data - self.running_var)
        else:
            var_eps = self.running_var + self.eps
            out = nm.mul_rowvec(nm.add_rowvec(x, Tensor(-self.running_mean)),
                                Tensor(1.0 / np.sqrt(var_eps)))
            logdet = Tensor(np.full((n, 1), -0.5 * np.log(var_eps).sum()))
        _check_output(self, out, logdet)
        return out, logdet

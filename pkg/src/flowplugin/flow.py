"""Conditional flow models: stacked invertible layers over a N(0,I) base.

``forward`` runs base noise -> data through the layer list in order;
``inverse`` and ``log_prob`` run data -> noise through the layers in reverse.
Exact densities come from accumulating per-layer log |det J| terms.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import PreconditionError, ShapeError
from .numerics import Rng, Tensor
from .transforms import (
    DEFAULT_LOG_SCALE_CLAMP,
    AffineCouplingLayer,
    InvertibleBatchNorm,
    MaskedAutoregressiveLayer,
    ReversePermutation,
)


class FlowModel:
    """An ordered stack of conditional invertible layers plus the Gaussian base."""

    def __init__(self, dim: int, context_dim: int, layers: list):
        for layer in layers:
            if layer.dim != dim:
                raise ShapeError(f"layer {layer!r} disagrees on dim {dim}")
            if layer.context_dim not in (0, context_dim):
                raise ShapeError(f"layer {layer!r} disagrees on context dim {context_dim}")
        self.dim = dim
        self.context_dim = context_dim
        self.layers = list(layers)
        self.class_prior: np.ndarray | None = None

    def parameters(self) -> list[Tensor]:
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        return ps

    def set_training(self, training: bool) -> None:
        """Switch batch-normalization layers between batch and running stats."""
        mode = InvertibleBatchNorm.TRAINING if training else InvertibleBatchNorm.FROZEN
        for layer in self.layers:
            if isinstance(layer, InvertibleBatchNorm):
                layer.mode = mode

    def _check_context(self, z: Tensor, y: Tensor) -> None:
        if z.data.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} data columns, got {z.data.shape[1]}")
        if y.data.shape[1] != self.context_dim:
            raise ShapeError(
                f"expected {self.context_dim} context columns, got {y.data.shape[1]}")
        if z.data.shape[0] != y.data.shape[0]:
            raise ShapeError(f"row counts differ, {z.data.shape[0]} vs {y.data.shape[0]}")

    # -- tensor-level passes (taped when a tape is active) --

    def forward_tensors(self, u: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        self._check_context(u, y)
        logdet = Tensor(np.zeros((u.data.shape[0], 1)))
        x = u
        for layer in self.layers:
            x, ld = layer.forward(x, y)
            logdet = nm.add(logdet, ld)
        return x, logdet

    def inverse_tensors(self, z: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        self._check_context(z, y)
        logdet = Tensor(np.zeros((z.data.shape[0], 1)))
        u = z
        for layer in reversed(self.layers):
            u, ld = layer.inverse(u, y)
            logdet = nm.add(logdet, ld)
        return u, logdet

    def log_prob_tensors(self, z: Tensor, y: Tensor) -> Tensor:
        u, logdet = self.inverse_tensors(z, y)
        return nm.add(nm.gaussian_logpdf_rows(u), logdet)

    def nll_tensors(self, z: Tensor, y: Tensor) -> Tensor:
        if z.data.shape[0] == 0:
            raise PreconditionError("nll needs a nonempty batch")
        return nm.scale(nm.mean_all(self.log_prob_tensors(z, y)), -1.0)

    # -- array-level public API --

    def forward(self, u: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, logdet = self.forward_tensors(Tensor(u), Tensor(y))
        return x.data, logdet.data[:, 0]

    def inverse(self, z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u, logdet = self.inverse_tensors(Tensor(z), Tensor(y))
        return u.data, logdet.data[:, 0]

    def log_prob(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.log_prob_tensors(Tensor(z), Tensor(y)).data[:, 0]

    def nll(self, z: np.ndarray, y: np.ndarray) -> float:
        return float(self.nll_tensors(Tensor(z), Tensor(y)).data[0, 0])

    def sample(self, y: np.ndarray, rng: Rng) -> np.ndarray:
        """Draw one latent row per context row."""
        y = nm.as_matrix(y)
        u = rng.standard_normal(y.shape[0], self.dim) if y.shape[0] else np.zeros((0, self.dim))
        x, _ = self.forward(u, y)
        return x


def maf_flow(dim: int, context_dim: int, *, layers: int = 5, blocks: int = 2,
             hidden: int = 64, batch_norm: bool = False,
             clamp: float = DEFAULT_LOG_SCALE_CLAMP, rng: Rng | None = None) -> FlowModel:
    """Masked-autoregressive stack: each layer reverses the coordinate order,
    then applies the autoregressive transform (plus batch norm if requested)."""
    rng = rng or Rng(0)
    stack = []
    for _ in range(layers):
        stack.append(ReversePermutation(dim, context_dim))
        stack.append(MaskedAutoregressiveLayer(dim, context_dim, hidden=hidden,
                                               blocks=blocks, clamp=clamp, rng=rng))
        if batch_norm:
            stack.append(InvertibleBatchNorm(dim, context_dim))
    return FlowModel(dim, context_dim, stack)


def coupling_flow(dim: int, context_dim: int, *, layers: int = 5, blocks: int = 2,
                  hidden: int = 64, batch_norm: bool = False,
                  clamp: float = DEFAULT_LOG_SCALE_CLAMP, rng: Rng | None = None) -> FlowModel:
    """Affine-coupling stack with alternating pass-through halves."""
    rng = rng or Rng(0)
    stack = []
    for k in range(layers):
        stack.append(AffineCouplingLayer(dim, context_dim, parity=k % 2, hidden=hidden,
                                         blocks=blocks, clamp=clamp, rng=rng))
        if batch_norm and k < layers - 1:
            stack.append(InvertibleBatchNorm(dim, context_dim))
    return FlowModel(dim, context_dim, stack)


FLOW_FAMILIES = {"maf": maf_flow, "realnvp": coupling_flow}


def build_flow(family: str, dim: int, context_dim: int, **kwargs) -> FlowModel:
    if family not in FLOW_FAMILIES:
        raise PreconditionError(
            f"unknown flow family {family!r}; expected one of {sorted(FLOW_FAMILIES)}")
    return FLOW_FAMILIES[family](dim, context_dim, **kwargs)

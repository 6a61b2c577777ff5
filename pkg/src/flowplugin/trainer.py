"""Minibatch NLL training with Adam, early stopping, and checkpointing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PreconditionError, ShapeError
from .flow import FlowModel
from .numerics import GradientTape, Rng, Tensor, backward, zero_gradients
from .transforms import InvertibleBatchNorm


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 10
    checkpoint_path: str | None = None
    grad_clip: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.validation_fraction < 1.0):
            raise PreconditionError(
                f"validation_fraction must be in (0,1), got {self.validation_fraction}")
        if self.batch_size < 1 or self.epochs < 1:
            raise PreconditionError("epochs and batch_size must be positive")


@dataclass
class LatentDataset:
    """Paired (latent, attribute) rows with a seeded train/validation split."""

    z: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        if self.z.shape[0] != self.y.shape[0]:
            raise ShapeError(f"z has {self.z.shape[0]} rows but y has {self.y.shape[0]}")
        joined = np.concatenate([self.train_idx, self.val_idx])
        if len(np.unique(joined)) != self.z.shape[0] or len(joined) != self.z.shape[0]:
            raise PreconditionError("train/validation splits must be disjoint and cover all rows")

    @classmethod
    def from_arrays(cls, z: np.ndarray, y: np.ndarray, seed: int,
                    validation_fraction: float = 0.1) -> "LatentDataset":
        n = z.shape[0]
        order = Rng(seed).permutation(n)
        n_val = max(1, int(round(n * validation_fraction)))
        if n_val >= n:
            raise PreconditionError("validation split would consume the whole dataset")
        return cls(z=np.ascontiguousarray(z, dtype=np.float64),
                   y=np.ascontiguousarray(y, dtype=np.float64),
                   train_idx=order[n_val:], val_idx=order[:n_val])

    @property
    def latent_dim(self) -> int:
        return self.z.shape[1]

    @property
    def attribute_dim(self) -> int:
        return self.y.shape[1]

    def train_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.z[self.train_idx], self.y[self.train_idx]

    def val_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.z[self.val_idx], self.y[self.val_idx]

    def labels_are_one_hot(self) -> bool:
        y = self.y
        return bool(np.isin(y, (0.0, 1.0)).all() and (y.sum(axis=1) == 1.0).all())


def build_latent_dataset(model, x: np.ndarray, y: np.ndarray, seed: int = 0,
                         validation_fraction: float = 0.1) -> LatentDataset:
    """Encode objects with a frozen base model and pair them with attributes."""
    if not getattr(model, "frozen", False):
        raise PreconditionError("base model must be frozen before building a latent dataset")
    return LatentDataset.from_arrays(model.encode(x), np.asarray(y, dtype=np.float64),
                                     seed=seed, validation_fraction=validation_fraction)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update; mutates params in place."""
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m[:] = beta1 * m + (1.0 - beta1) * g
        v[:] = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    """Adam over a list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState.for_params([p.data for p in params])

    def step(self, grads: list[np.ndarray]) -> None:
        adam_step([p.data for p in self.params], grads, self.state, self.lr,
                  self.beta1, self.beta2, self.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale all gradients down so their joint L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


# ---------------------------------------------------------------------------
# Flow training
# ---------------------------------------------------------------------------

def _model_has_batch_norm(model: FlowModel) -> bool:
    return any(isinstance(layer, InvertibleBatchNorm) for layer in model.layers)


def _snapshot(model: FlowModel):
    params = [p.data.copy() for p in model.parameters()]
    stats = [(l.running_mean.copy(), l.running_var.copy())
             for l in model.layers if isinstance(l, InvertibleBatchNorm)]
    return params, stats


def _restore(model: FlowModel, snapshot) -> None:
    params, stats = snapshot
    for p, saved in zip(model.parameters(), params):
        p.data[:] = saved
    bns = [l for l in model.layers if isinstance(l, InvertibleBatchNorm)]
    for bn, (mean, var) in zip(bns, stats):
        bn.running_mean[:] = mean
        bn.running_var[:] = var


def train_flow(model: FlowModel, ds: LatentDataset, cfg: TrainConfig):
    """Fit the flow on (z, y) pairs by conditional NLL.

    Returns ``(model, history)`` where history rows are
    ``(epoch, train_nll, val_nll)``.  The model is left at its best-validation
    checkpoint with batch-norm layers frozen.
    """
    if model.dim != ds.latent_dim:
        raise ShapeError(f"flow dim {model.dim} != dataset latent dim {ds.latent_dim}")
    if model.context_dim != ds.attribute_dim:
        raise ShapeError(
            f"flow context dim {model.context_dim} != attribute dim {ds.attribute_dim}")
    has_bn = _model_has_batch_norm(model)
    if has_bn and cfg.batch_size < 2:
        raise PreconditionError("batch_size must be >= 2 when batch norm is present")

    rng = Rng(cfg.seed)
    params = model.parameters()
    adam = Adam(params, lr=cfg.learning_rate)
    z_train, y_train = ds.train_split()
    z_val, y_val = ds.val_split()
    n_train = z_train.shape[0]

    history: list[tuple[int, float, float]] = []
    best_val = np.inf
    best_snapshot = _snapshot(model)
    stale_epochs = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        model.set_training(True)
        loss_sum, row_count = 0.0, 0
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            if has_bn and len(batch) < 2:
                continue
            zb = Tensor(z_train[batch])
            yb = Tensor(y_train[batch])
            zero_gradients(params)
            with GradientTape() as tape:
                loss = model.nll_tensors(zb, yb)
            value = float(loss.data[0, 0])
            if not np.isfinite(value):
                raise NumericError(
                    f"training NLL became non-finite at epoch {epoch}, "
                    f"batch starting at row {start}")
            grads = backward(tape, loss, params)
            clip_global_norm(grads, cfg.grad_clip)
            adam.step(grads)
            loss_sum += value * len(batch)
            row_count += len(batch)

        model.set_training(False)
        train_nll = loss_sum / row_count
        val_nll = model.nll(z_val, y_val)
        history.append((epoch, train_nll, val_nll))

        if val_nll < best_val:
            best_val = val_nll
            best_snapshot = _snapshot(model)
            stale_epochs = 0
            if cfg.checkpoint_path is not None:
                from . import storage
                storage.save_flow_model(cfg.checkpoint_path, model)
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.patience:
                break

    _restore(model, best_snapshot)
    model.set_training(False)
    if ds.labels_are_one_hot():
        counts = ds.y[ds.train_idx].sum(axis=0)
        model.class_prior = counts / counts.sum()
    if cfg.checkpoint_path is not None:
        from . import storage
        storage.save_flow_model(cfg.checkpoint_path, model)
    return model, history

"""Dense autoencoder base models (plain or variational), freezable.

The encoder maps objects in [0,1]^n to a q-dimensional latent code (for the
variational variant it produces mean and log-variance and ``encode`` returns
the posterior mean).  The decoder ends in a sigmoid, so reconstructions stay
in [0,1]^n.  Once frozen, a model is a read-only encode/decode pair.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import NumericError, PreconditionError, ShapeError
from .numerics import GradientTape, Rng, Tensor, backward, zero_gradients
from .trainer import Adam, clip_global_norm

VARIANT_PLAIN = "ae"
VARIANT_VARIATIONAL = "vae"


@dataclass
class AutoencoderConfig:
    input_dim: int
    latent_dim: int = 8
    hidden: tuple[int, ...] = (64, 32)
    variant: str = VARIANT_PLAIN
    kl_weight: float = 1.0
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.variant not in (VARIANT_PLAIN, VARIANT_VARIATIONAL):
            raise PreconditionError(f"unknown autoencoder variant {self.variant!r}")
        if self.latent_dim < 1 or self.input_dim < 1:
            raise PreconditionError("input_dim and latent_dim must be positive")


class _DenseStack:
    """Plain MLP with tanh hidden activations and a configurable head."""

    def __init__(self, sizes: tuple[int, ...], rng: Rng):
        self.sizes = tuple(sizes)
        self.weights = []
        self.biases = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.weights.append(nm.parameter(rng.normal(a, b) / np.sqrt(a)))
            self.biases.append(nm.parameter(np.zeros((1, b))))

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x: Tensor, final_sigmoid: bool) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = nm.affine(h, w, b)
            if i < last:
                h = nm.tanh(h)
            elif final_sigmoid:
                h = nm.sigmoid(h)
        return h


class Autoencoder:
    """Dense encoder/decoder pair with a frozen-weights mode."""

    def __init__(self, input_dim: int, latent_dim: int, hidden: tuple[int, ...] = (64, 32),
                 variant: str = VARIANT_PLAIN, rng: Rng | None = None):
        if variant not in (VARIANT_PLAIN, VARIANT_VARIATIONAL):
            raise PreconditionError(f"unknown autoencoder variant {variant!r}")
        rng = rng or Rng(0)
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.variant = variant
        self.frozen = False
        enc_out = 2 * latent_dim if variant == VARIANT_VARIATIONAL else latent_dim
        self.encoder = _DenseStack((input_dim, *self.hidden, enc_out), rng)
        self.decoder = _DenseStack((latent_dim, *self.hidden[::-1], input_dim), rng)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def freeze(self) -> "Autoencoder":
        self.frozen = True
        return self

    def parameter_checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(p.data.tobytes())
        return digest.hexdigest()

    # -- tensor-level passes --

    def encode_tensors(self, x: Tensor) -> Tensor:
        """Raw encoder output: q columns, or mean||logvar (2q) for the VAE."""
        if x.data.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim} input columns, got {x.data.shape[1]}")
        return self.encoder(x, final_sigmoid=False)

    def decode_tensors(self, z: Tensor) -> Tensor:
        if z.data.shape[1] != self.latent_dim:
            raise ShapeError(f"expected {self.latent_dim} latent columns, got {z.data.shape[1]}")
        return self.decoder(z, final_sigmoid=True)

    # -- array-level public API --

    def encode(self, x: np.ndarray) -> np.ndarray:
        out = self.encode_tensors(Tensor(x)).data
        if self.variant == VARIANT_VARIATIONAL:
            return out[:, : self.latent_dim].copy()
        return out

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decode_tensors(Tensor(z)).data

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(x))

    def reconstruction_mse(self, x: np.ndarray) -> float:
        """Mean squared error per matrix entry on a batch."""
        err = self.reconstruct(x) - np.asarray(x, dtype=np.float64)
        return float(np.mean(err * err))


def _check_unit_interval(x: np.ndarray) -> None:
    if x.size and (x.min() < -1e-9 or x.max() > 1.0 + 1e-9):
        raise PreconditionError("autoencoder inputs must lie in [0,1]")


def _kl_terms(mean: Tensor, logvar: Tensor) -> Tensor:
    """Per-row KL(N(mean, e^logvar) || N(0,I)), shape (N,1); nonnegative."""
    inner = nm.add_scalar(
        nm.sub(nm.add(nm.mul(mean, mean), nm.exp(logvar)), logvar), -1.0)
    return nm.scale(nm.sum_rows(inner), 0.5)


def train_autoencoder(x: np.ndarray, cfg: AutoencoderConfig):
    """Train a fresh autoencoder on rows of x; returns (model, history).

    History rows are ``(epoch, loss, kl)`` with per-epoch means (kl is 0.0
    for the plain variant).  The returned model is unfrozen.
    """
    x = nm.as_matrix(x)
    _check_unit_interval(x)
    if x.shape[1] != cfg.input_dim:
        raise ShapeError(f"data has {x.shape[1]} columns, config says {cfg.input_dim}")
    rng = Rng(cfg.seed)
    model = Autoencoder(cfg.input_dim, cfg.latent_dim, cfg.hidden, cfg.variant,
                        rng=rng.child())
    params = model.parameters()
    adam = Adam(params, lr=cfg.learning_rate)
    n = x.shape[0]
    q = cfg.latent_dim
    history: list[tuple[int, float, float]] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = kl_sum = 0.0
        rows = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            xb = Tensor(x[batch])
            zero_gradients(params)
            with GradientTape() as tape:
                enc = model.encode_tensors(xb)
                if cfg.variant == VARIANT_VARIATIONAL:
                    mean = nm.slice_cols(enc, 0, q)
                    logvar = nm.slice_cols(enc, q, 2 * q)
                    noise = Tensor(rng.standard_normal(len(batch), q))
                    z = nm.add(mean, nm.mul(nm.exp(nm.scale(logvar, 0.5)), noise))
                    kl = nm.mean_all(_kl_terms(mean, logvar))
                else:
                    z = enc
                    kl = None
                recon = model.decode_tensors(z)
                err = nm.sub(recon, xb)
                recon_loss = nm.mean_all(nm.sum_rows(nm.mul(err, err)))
                loss = recon_loss if kl is None else nm.add(
                    recon_loss, nm.scale(kl, cfg.kl_weight))
            value = float(loss.data[0, 0])
            if not np.isfinite(value):
                raise NumericError(
                    f"autoencoder loss became non-finite at epoch {epoch}, "
                    f"batch starting at row {start}")
            grads = backward(tape, loss, params)
            clip_global_norm(grads, cfg.grad_clip)
            adam.step(grads)
            loss_sum += value * len(batch)
            kl_sum += (float(kl.data[0, 0]) if kl is not None else 0.0) * len(batch)
            rows += len(batch)
        history.append((epoch, loss_sum / rows, kl_sum / rows))
    return model, history

"""Bundled generators for the synthetic desk-scale tasks."""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError
from .numerics import Rng


def two_gaussian_latents(n: int, dim: int = 2, separation: float = 2.0,
                         sigma: float = 0.5, rng: Rng | None = None):
    """Two-class latent set: z | class c ~ N(+-separation * 1, sigma^2 I).

    Returns (z, y) with one-hot labels, class 0 at -separation and class 1
    at +separation along every coordinate.
    """
    rng = rng or Rng(0)
    labels = rng.integers(2, size=n)
    means = np.where(labels[:, None] == 0, -separation, separation)
    z = means + sigma * rng.standard_normal(n, dim)
    y = np.zeros((n, 2))
    y[np.arange(n), labels] = 1.0
    return z, y


def binary_attribute_latents(n: int, dim: int = 4, attributes: int = 2,
                             shift: float = 2.5, sigma: float = 0.4,
                             rng: Rng | None = None):
    """Latents whose mean is a sum of per-attribute shifts.

    Attribute a, when set, adds ``shift`` to a dedicated block of coordinates,
    so flipping attribute bits moves the latent along known directions.
    Returns (z, attrs) with attrs in {0,1}^attributes.
    """
    if dim < attributes:
        raise PreconditionError("need at least one latent coordinate per attribute")
    rng = rng or Rng(0)
    attrs = rng.integers(2, size=(n, attributes)).astype(np.float64)
    directions = np.zeros((attributes, dim))
    block = dim // attributes
    for a in range(attributes):
        directions[a, a * block:(a + 1) * block] = shift
    z = attrs @ directions + sigma * rng.standard_normal(n, dim)
    return z, attrs


def linear_manifold_data(n: int, ambient: int = 10, intrinsic: int = 3,
                         rng: Rng | None = None) -> np.ndarray:
    """Points on a linear manifold, affinely squashed into [0.05, 0.95]^ambient."""
    rng = rng or Rng(0)
    basis = rng.normal(intrinsic, ambient)
    coords = rng.normal(n, intrinsic)
    raw = coords @ basis
    lo, hi = raw.min(), raw.max()
    return 0.05 + 0.9 * (raw - lo) / (hi - lo)


def objects_from_latents(z: np.ndarray, ambient: int, rng: Rng | None = None) -> np.ndarray:
    """Deterministic object data in [0,1]^ambient from latent rows (fixed
    random affine map followed by a sigmoid)."""
    rng = rng or Rng(0)
    w = rng.normal(z.shape[1], ambient) * 0.8
    b = rng.normal(1, ambient) * 0.1
    return 1.0 / (1.0 + np.exp(-(z @ w + b)))


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise PreconditionError(f"labels must be in [0, {classes}), got range "
                                f"[{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out

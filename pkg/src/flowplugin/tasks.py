"""Applications of a trained flow: generation, classification, attribute edits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError
from .numerics import Rng, as_matrix


@dataclass
class ClassPrior:
    """A proper prior over K classes (nonnegative, sums to one)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).ravel()
        if (self.probs < 0).any():
            raise PreconditionError("class prior probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise PreconditionError(
                f"class prior must sum to 1 within 1e-12, got {self.probs.sum()!r}")

    @classmethod
    def uniform(cls, classes: int) -> "ClassPrior":
        return cls(np.full(classes, 1.0 / classes))

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "ClassPrior":
        counts = np.asarray(counts, dtype=np.float64).ravel()
        return cls(counts / counts.sum())

    @property
    def classes(self) -> int:
        return self.probs.size

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


def _prior_log_weights(prior, classes: int | None = None) -> np.ndarray:
    """Log weights from a ClassPrior or raw nonnegative class weights."""
    if isinstance(prior, ClassPrior):
        return prior.log_probs()
    weights = np.asarray(prior, dtype=np.float64).ravel()
    if (weights < 0).any() or weights.max() <= 0:
        raise PreconditionError("class weights must be nonnegative with a positive maximum")
    if classes is not None and weights.size != classes:
        raise PreconditionError(f"expected {classes} class weights, got {weights.size}")
    with np.errstate(divide="ignore"):
        return np.log(weights)


def class_log_likelihoods(flow, z: np.ndarray, classes: int) -> np.ndarray:
    """log p(z | class k) for every k, via one-hot contexts; shape (N, K)."""
    z = as_matrix(z)
    if classes != flow.context_dim:
        raise ConfigError(f"flow expects {flow.context_dim}-dim one-hot contexts, "
                          f"got {classes} classes")
    out = np.empty((z.shape[0], classes))
    for k in range(classes):
        y = np.zeros((z.shape[0], classes))
        y[:, k] = 1.0
        out[:, k] = flow.log_prob(z, y)
    return out


def _log_normalize_rows(scores: np.ndarray) -> np.ndarray:
    anchor = scores.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        shifted = np.where(np.isneginf(scores), -np.inf, scores - anchor)
    lse = anchor + np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return scores - lse


def class_log_posteriors(flow, prior, z: np.ndarray) -> np.ndarray:
    """Row-normalized log P(class | z); rows exponentiate to a distribution.

    Classes with zero prior score -inf and never win the argmax.
    """
    log_prior = _prior_log_weights(prior, flow.context_dim)
    scores = class_log_likelihoods(flow, z, log_prior.size) + log_prior[None, :]
    return _log_normalize_rows(scores)


def classify(flow, prior, z: np.ndarray) -> np.ndarray:
    """Most probable class per row; ties break to the lowest class index.

    ``prior`` may be a ClassPrior or raw nonnegative weights (the normalizer
    cancels in the argmax).
    """
    log_prior = _prior_log_weights(prior, flow.context_dim)
    scores = class_log_likelihoods(flow, z, log_prior.size) + log_prior[None, :]
    return scores.argmax(axis=1)


def flow_prior(flow, fallback_uniform: bool = False) -> ClassPrior:
    """The prior stored with a trained flow (training-split frequencies)."""
    if flow.class_prior is not None and not fallback_uniform:
        return ClassPrior(flow.class_prior)
    return ClassPrior.uniform(flow.context_dim)


def conditional_generate(flow, base_model, y: np.ndarray, rng: Rng) -> np.ndarray:
    """Sample latents conditioned on y and decode them with the frozen base."""
    y = as_matrix(y)
    if flow.dim != base_model.latent_dim:
        raise ConfigError(f"flow dim {flow.dim} does not match base model latent "
                          f"dim {base_model.latent_dim}")
    if y.shape[1] != flow.context_dim:
        raise ConfigError(f"attribute rows have {y.shape[1]} columns, flow expects "
                          f"{flow.context_dim}")
    return base_model.decode(flow.sample(y, rng))


def manipulate_latents(flow, z: np.ndarray, y_src: np.ndarray,
                       y_dst: np.ndarray) -> np.ndarray:
    """Map latents to base noise under source attributes, back under targets."""
    u, _ = flow.inverse(z, y_src)
    edited, _ = flow.forward(u, y_dst)
    return edited


def manipulate_attributes(flow, base_model, x: np.ndarray, y_src: np.ndarray,
                          y_dst: np.ndarray) -> np.ndarray:
    """Attribute edit: encode, re-route through the flow under new attributes,
    decode.  With y_dst == y_src this reduces to plain reconstruction."""
    if flow.dim != base_model.latent_dim:
        raise ConfigError(f"flow dim {flow.dim} does not match base model latent "
                          f"dim {base_model.latent_dim}")
    z = base_model.encode(x)
    return base_model.decode(manipulate_latents(flow, z, y_src, y_dst))

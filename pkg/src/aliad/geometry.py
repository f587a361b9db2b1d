"""Hyperspherical feature-space operations.

All embeddings in the model live on a radius-sqrt(C) hypersphere; this
module provides the magnitude normalization that puts them there, plus the
cosine similarity and the temperature-scaled exponential critic used by the
contrastive losses.
"""

import math

import torch

NORM_EPS = 1e-12


class DegenerateEmbeddingError(ValueError):
    """A vector with (near-)zero norm reached a hyperspherical operation."""


def mag_norm(z: torch.Tensor) -> torch.Tensor:
    """Rescale each last-axis slice of z to L2 norm sqrt(C).

    The sqrt(C) radius keeps the feature scale independent of the embedding
    dimension. A slice with norm <= 1e-12 indicates an encoder bug and is an
    error, not a silent clamp.
    """
    c = z.shape[-1]
    norms = z.norm(dim=-1, keepdim=True)
    if (norms <= NORM_EPS).any():
        bad = (norms.squeeze(-1) <= NORM_EPS).nonzero()[0].tolist()
        raise DegenerateEmbeddingError(f"zero-norm slice at index {bad} in mag_norm")
    return z / norms * math.sqrt(c)


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine of the angle between two vectors; scale-invariant, symmetric."""
    na, nb = a.norm(), b.norm()
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateEmbeddingError("zero-norm input to cosine_similarity")
    return (a * b).sum() / (na * nb)


def critic(a: torch.Tensor, b: torch.Tensor, tau: float) -> torch.Tensor:
    """Exponentiated cosine similarity scaled by temperature tau."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return torch.exp(cosine_similarity(a, b) / tau)

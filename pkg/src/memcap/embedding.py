"""Unit-norm embedding primitives and the temperature-softmax projection.

An embedding is a 1-D numpy array of fixed dimension with unit l2 norm;
`normalize` is the only sanctioned constructor and also reports the norm the
vector had before scaling (several corpus filters key off that value). The
projection maps a query embedding onto the convex hull of a support memory:
softmax(dot(m_i, query) / temperature) weights, summed and re-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels
from .errors import (
    DegenerateCombinationError,
    DimensionMismatchError,
    EmptyInputError,
    EmptyMemoryError,
    ZeroVectorError,
)

if TYPE_CHECKING:
    from .memory import SupportMemory

# Inference defaults: 1/100 for single-image queries, 1/150 for pooled video
# queries.
IMAGE_TEMPERATURE = 1.0 / 100.0
VIDEO_TEMPERATURE = 1.0 / 150.0

_ZERO_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ProjectionConfig:
    """Temperature and numeric options for the projection.

    `stable_softmax` keeps max-subtraction on; it exists only so oracle tests
    can compare against the naive exponential form, which overflows for small
    temperatures.
    """

    temperature: float = IMAGE_TEMPERATURE
    stable_softmax: bool = True

    def __post_init__(self) -> None:
        if not np.isfinite(self.temperature) or self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class ProjectionResult:
    """Projection output: normalized vector, per-entry weights, raw combination."""

    projected: np.ndarray
    weights: np.ndarray
    raw_combination: np.ndarray


def _as_vector(values: np.ndarray | list[float], name: str = "vector") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatchError(f"{name} must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def normalize(raw: np.ndarray | list[float]) -> tuple[np.ndarray, float]:
    """Scale `raw` to unit l2 norm; returns (embedding, pre-normalization norm)."""
    arr = _as_vector(raw, "raw embedding")
    prenorm = float(np.linalg.norm(arr))
    if prenorm < _ZERO_NORM_FLOOR:
        raise ZeroVectorError(f"cannot normalize a vector with norm {prenorm}")
    return arr / prenorm, prenorm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimensionMismatchError(f"cosine of shapes {av.shape} and {bv.shape}")
    return float(np.clip(av @ bv, -1.0, 1.0))


def softmax_weights(
    similarities: np.ndarray | list[float], config: ProjectionConfig
) -> np.ndarray:
    """w_i = exp(s_i / tau) / sum_k exp(s_k / tau).

    With `stable_softmax` the maximum is subtracted before exponentiation;
    without it the raw form is computed as written (and may overflow).
    """
    sims = np.asarray(similarities, dtype=np.float64)
    if sims.size == 0:
        raise EmptyInputError("softmax over an empty similarity vector")
    if not np.isfinite(sims).all():
        raise ValueError("similarities contain NaN or Inf")
    z = sims / config.temperature
    if config.stable_softmax:
        z = z - z.max()
    exps = np.exp(z)
    return exps / exps.sum()


def project(
    query: np.ndarray, memory: "SupportMemory", config: ProjectionConfig
) -> ProjectionResult:
    """Project `query` into the support memory's embedding space.

    Weights follow `softmax_weights` over the exhaustive similarity scan; the
    raw combination is sum(w_i * m_i) accumulated in float64 over the float32
    rows, and `projected` is that vector re-normalized (the decoder consumes
    the normalized form).
    """
    if memory.count == 0:
        raise EmptyMemoryError("projection requires a nonempty support memory")
    q = np.ascontiguousarray(_as_vector(query, "query"))
    if q.shape[0] != memory.dim:
        raise DimensionMismatchError(
            f"query has dimension {q.shape[0]}, memory has dimension {memory.dim}"
        )
    mem = memory.embeddings
    if config.stable_softmax:
        _, weights, raw = _kernels.stable_projection_pass(mem, q, config.temperature)
    else:
        sims = np.empty(memory.count, dtype=np.float64)
        _kernels.similarity_scan(mem, q, sims)
        weights = softmax_weights(sims, config)
        raw = _kernels.combine(mem, weights)
    norm = float(np.linalg.norm(raw))
    if norm < _ZERO_NORM_FLOOR:
        raise DegenerateCombinationError(f"combined vector has norm {norm}")
    return ProjectionResult(projected=raw / norm, weights=weights, raw_combination=raw)

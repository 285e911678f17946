"""Inference strategies: how a query embedding becomes a decoder prefix.

Four routes, from strongest to weakest under a modality gap:
  - projection decoding: softmax-weighted combination over the support memory
  - nearest-neighbor decoding: the single closest stored embedding
  - visual decoding: the query itself (the gap-failure baseline)
  - retrieval: return stored texts directly, no decoder involved

Also here: pooling of per-frame embeddings into one video-level query, and
prompt token handling (prompts are forced decoder tokens, they never alter
the prefix embedding).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .decoder import Vocab
from .embedding import ProjectionConfig, project
from ._kernels import similarity_scan
from .errors import (
    DegenerateCombinationError,
    DimensionMismatchError,
    EmptyInputError,
    EmptyMemoryError,
    KOutOfRangeError,
)
from .memory import SupportMemory

# Style prompt that helps decoders trained on non-caption prose; applied as
# forced tokens after the prefix embedding.
ATTENTION_PROMPT = "Attention! There is/are"

DEFAULT_FRAME_SAMPLE = 10


class StrategyKind(enum.Enum):
    PROJECTION = "pd"
    NEAREST_NEIGHBOR = "nnd"
    VISUAL = "vd"
    RETRIEVAL = "retrieve"


@dataclass(frozen=True)
class StrategyChoice:
    """Selected inference route plus the projection settings it may need."""

    kind: StrategyKind
    config: ProjectionConfig = field(default_factory=ProjectionConfig)


@dataclass(frozen=True)
class PromptSpec:
    """Optional prompt text, forced into the decoder right after the prefix."""

    prompt_text: str = ""


def _query_vector(query: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(np.asarray(query, dtype=np.float64))
    if q.ndim != 1 or q.size == 0:
        raise DimensionMismatchError(f"query must be a nonempty 1-D vector, got {q.shape}")
    return q


def _scan(query: np.ndarray, memory: SupportMemory) -> np.ndarray:
    if memory.count == 0:
        raise EmptyMemoryError("support memory is empty")
    q = _query_vector(query)
    if q.shape[0] != memory.dim:
        raise DimensionMismatchError(f"query dim {q.shape[0]} != memory dim {memory.dim}")
    sims = np.empty(memory.count, dtype=np.float64)
    similarity_scan(memory.embeddings, q, sims)
    return np.clip(sims, -1.0, 1.0)


def prefix_pd(query: np.ndarray, memory: SupportMemory, config: ProjectionConfig) -> np.ndarray:
    """Projection decoding prefix: the normalized weighted memory combination."""
    return project(query, memory, config).projected


def prefix_nnd(query: np.ndarray, memory: SupportMemory) -> tuple[np.ndarray, int]:
    """Nearest-neighbor prefix: the stored embedding with highest cosine.

    Ties resolve to the lowest index. Returns (embedding, index). The
    embedding comes back re-normalized in double precision; float32 storage
    keeps rows unit only to ~1e-8, and the decoder contract wants tighter.
    """
    sims = _scan(query, memory)
    idx = int(np.argmax(sims))
    emb = memory.embeddings[idx].astype(np.float64)
    return emb / np.linalg.norm(emb), idx


def prefix_vd(query: np.ndarray) -> np.ndarray:
    """Visual decoding prefix: the query embedding itself."""
    return _query_vector(query)


def retrieve_cliprre(
    query: np.ndarray, memory: SupportMemory, k: int
) -> list[tuple[str, float]]:
    """Top-k stored texts by cosine, descending; ties resolve to lower index."""
    if memory.count == 0:
        raise EmptyMemoryError("support memory is empty")
    if not 1 <= k <= memory.count:
        raise KOutOfRangeError(f"k={k} outside [1, {memory.count}]")
    sims = _scan(query, memory)
    order = np.argsort(-sims, kind="stable")[:k]
    return [(memory.texts[i], float(sims[i])) for i in order]


def pool_frames(
    frames: list[np.ndarray] | np.ndarray,
    k: int = DEFAULT_FRAME_SAMPLE,
    seed: int = 0,
) -> np.ndarray:
    """Video-level query: sample min(k, n) frames, mean-pool, re-normalize.

    Sampling is uniform without replacement and deterministic per seed. The
    mean is re-normalized because the projection assumes unit-norm queries.
    """
    stack = np.asarray(frames, dtype=np.float64)
    if stack.ndim != 2 or stack.shape[0] == 0:
        raise EmptyInputError("pool_frames requires a nonempty list of embeddings")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = stack.shape[0]
    take = min(k, n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=take, replace=False))
    mean = stack[idx].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise DegenerateCombinationError(f"pooled mean has norm {norm}")
    return mean / norm


def apply_prompt(spec: PromptSpec, vocab: Vocab) -> list[int]:
    """Token ids forced into the decoder after the prefix embedding."""
    if not spec.prompt_text:
        return []
    return vocab.encode(spec.prompt_text)


def run_strategy(
    query: np.ndarray,
    memory: SupportMemory,
    choice: StrategyChoice,
) -> np.ndarray | list[tuple[str, float]]:
    """Dispatch: a prefix embedding for the decoding routes, texts for retrieval."""
    if choice.kind is StrategyKind.PROJECTION:
        return prefix_pd(query, memory, choice.config)
    if choice.kind is StrategyKind.NEAREST_NEIGHBOR:
        return prefix_nnd(query, memory)[0]
    if choice.kind is StrategyKind.VISUAL:
        return prefix_vd(query)
    return retrieve_cliprre(query, memory, k=1)

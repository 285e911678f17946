"""Caption decoding from a text-embedding support memory.

Train a small prefix-conditioned decoder on text alone, store the corpus
embeddings as a support memory, and at inference project a visual query onto
that memory with a temperature softmax before decoding. Includes corpus
filtering, memory compaction, a synthetic dual-encoder test world, and
evaluation/benchmark tooling.
"""

__version__ = "0.1.0"

from .embedding import (
    IMAGE_TEMPERATURE,
    VIDEO_TEMPERATURE,
    ProjectionConfig,
    ProjectionResult,
    cosine,
    normalize,
    project,
    softmax_weights,
)
from .memory import (
    CorpusEntry,
    FilterReport,
    SupportMemory,
    build_memory,
    compact_by_similarity,
    filter_by_norm_and_length,
    load_jsonl_memory,
    load_memory,
    sample_memory,
    save_memory,
)
from .decoder import (
    DecoderConfig,
    DecoderModel,
    TrainConfig,
    Vocab,
    decode_greedy,
    load_model,
    recons_loss,
    reconstruct_corpus,
    save_model,
    train,
)
from .strategies import (
    PromptSpec,
    StrategyChoice,
    StrategyKind,
    apply_prompt,
    pool_frames,
    prefix_nnd,
    prefix_pd,
    prefix_vd,
    retrieve_cliprre,
)
from .toyworld import GapSpec, ToyWorld, gap_metrics, toy_image_encoder, toy_text_encoder
from .metrics import bleu, corpus_bleu, exact_match_rate, recall_at_k

__all__ = [
    "IMAGE_TEMPERATURE",
    "VIDEO_TEMPERATURE",
    "ProjectionConfig",
    "ProjectionResult",
    "cosine",
    "normalize",
    "project",
    "softmax_weights",
    "CorpusEntry",
    "FilterReport",
    "SupportMemory",
    "build_memory",
    "compact_by_similarity",
    "filter_by_norm_and_length",
    "load_jsonl_memory",
    "load_memory",
    "sample_memory",
    "save_memory",
    "DecoderConfig",
    "DecoderModel",
    "TrainConfig",
    "Vocab",
    "decode_greedy",
    "load_model",
    "recons_loss",
    "reconstruct_corpus",
    "save_model",
    "train",
    "PromptSpec",
    "StrategyChoice",
    "StrategyKind",
    "apply_prompt",
    "pool_frames",
    "prefix_nnd",
    "prefix_pd",
    "prefix_vd",
    "retrieve_cliprre",
    "GapSpec",
    "ToyWorld",
    "gap_metrics",
    "toy_image_encoder",
    "toy_text_encoder",
    "bleu",
    "corpus_bleu",
    "exact_match_rate",
    "recall_at_k",
]

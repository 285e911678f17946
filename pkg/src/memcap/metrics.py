"""Desk-scale evaluation: exact match, BLEU, retrieval recall, stage timing."""

from __future__ import annotations

import json
import math
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import similarity_scan
from .errors import EmptyHypothesisError, KOutOfRangeError, LengthMismatchError
from .memory import SupportMemory

TokenSeq = Sequence[int] | Sequence[str]


def exact_match_rate(hypotheses: list[TokenSeq], references: list[TokenSeq]) -> float:
    """Fraction of positions where hypothesis and reference are identical."""
    if len(hypotheses) != len(references):
        raise LengthMismatchError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise LengthMismatchError("exact_match_rate over empty lists")
    hits = sum(1 for h, r in zip(hypotheses, references) if list(h) == list(r))
    return hits / len(hypotheses)


def _ngram_counts(seq: list, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu(hypothesis: TokenSeq, references: list[TokenSeq], max_n: int = 4) -> float:
    """Sentence BLEU: modified n-gram precision, geometric mean, brevity penalty."""
    hyp = list(hypothesis)
    if not hyp:
        raise EmptyHypothesisError("BLEU hypothesis is empty")
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    if not references:
        raise ValueError("BLEU requires at least one reference")
    refs = [list(r) for r in references]

    log_sum = 0.0
    for n in range(1, max_n + 1):
        counts = _ngram_counts(hyp, n)
        total = sum(counts.values())
        if total == 0:
            return 0.0
        clipped = 0
        for ngram, count in counts.items():
            best = max(_ngram_counts(ref, n).get(ngram, 0) for ref in refs)
            clipped += min(count, best)
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total) / max_n

    c = len(hyp)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def corpus_bleu(
    hypotheses: list[TokenSeq], references: list[list[TokenSeq]], max_n: int = 4
) -> float:
    """Corpus BLEU: clipped counts aggregated over all segments before the ratio."""
    if len(hypotheses) != len(references):
        raise LengthMismatchError(
            f"{len(hypotheses)} hypotheses vs {len(references)} reference sets"
        )
    if not hypotheses:
        raise LengthMismatchError("corpus_bleu over empty lists")
    clipped_total = [0] * max_n
    count_total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hypothesis, refset in zip(hypotheses, references):
        hyp = list(hypothesis)
        if not hyp:
            raise EmptyHypothesisError("BLEU hypothesis is empty")
        refs = [list(r) for r in refset]
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs), key=lambda rl: (abs(rl - len(hyp)), rl))
        for n in range(1, max_n + 1):
            counts = _ngram_counts(hyp, n)
            count_total[n - 1] += sum(counts.values())
            for ngram, count in counts.items():
                best = max(_ngram_counts(ref, n).get(ngram, 0) for ref in refs)
                clipped_total[n - 1] += min(count, best)
    log_sum = 0.0
    for clipped, total in zip(clipped_total, count_total):
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(1, hyp_len))
    return bp * math.exp(log_sum)


def recall_at_k(
    memory: SupportMemory,
    queries: list[tuple[np.ndarray, int]],
    k: int,
) -> float:
    """Fraction of queries whose gold index lands in the top-k retrieval."""
    if not 1 <= k <= memory.count:
        raise KOutOfRangeError(f"k={k} outside [1, {memory.count}]")
    hits = 0
    sims = np.empty(memory.count, dtype=np.float64)
    for query, gold in queries:
        if not 0 <= gold < memory.count:
            raise KOutOfRangeError(f"gold index {gold} outside [0, {memory.count})")
        q = np.ascontiguousarray(np.asarray(query, dtype=np.float64))
        similarity_scan(memory.embeddings, q, sims)
        top = np.argsort(-sims, kind="stable")[:k]
        if gold in top:
            hits += 1
    return hits / len(queries) if queries else 0.0


@dataclass(frozen=True)
class TimingReport:
    """Median per-stage wall-clock milliseconds for one memory size."""

    memory_size: int
    encode_ms: float
    project_ms: float
    decode_ms: float
    total_ms: float
    trials: int
    threads: int


def benchmark_pipeline(
    memory_sizes: list[int],
    dim: int,
    decoder,
    trials: int = 5,
    threads: int | None = None,
    seed: int = 0,
    temperature: float = 0.01,
) -> list[TimingReport]:
    """Time encode / project / decode separately for each memory size.

    Uses the synthetic world's encoder for the encode stage, a random
    unit-row memory for the projection, and greedy decoding from the
    projected prefix. One warmup iteration precedes the timed trials;
    medians are reported.
    """
    from numba import get_num_threads, set_num_threads

    from .embedding import ProjectionConfig, project
    from .toyworld import GapSpec, ToyWorld, toy_image_encoder

    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if any(n < 1 for n in memory_sizes):
        raise ValueError("memory sizes must be >= 1")
    if threads is not None:
        set_num_threads(threads)
    active_threads = get_num_threads()

    world = ToyWorld(dim=dim, seed=seed)
    gap = GapSpec(rotation_angle=0.1, offset_scale=0.1, noise_sigma=0.01, seed=seed)
    caption = world.all_captions()[0]
    config = ProjectionConfig(temperature=temperature)
    rng = np.random.default_rng(seed)
    reports = []
    for size in memory_sizes:
        emb = rng.standard_normal((size, dim)).astype(np.float32)
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        memory = SupportMemory(
            embeddings=emb,
            prenorms=np.ones(size, dtype=np.float32),
            texts=[""] * size,
        )
        encode_times, project_times, decode_times, totals = [], [], [], []
        for trial in range(trials + 1):
            t0 = time.perf_counter()
            query = toy_image_encoder(caption, world, gap)
            t1 = time.perf_counter()
            result = project(query, memory, config)
            t2 = time.perf_counter()
            if decoder is not None:
                from .decoder import decode_greedy

                decode_greedy(decoder, result.projected)
            t3 = time.perf_counter()
            if trial == 0:
                continue  # warmup
            encode_times.append(1e3 * (t1 - t0))
            project_times.append(1e3 * (t2 - t1))
            decode_times.append(1e3 * (t3 - t2))
            totals.append(1e3 * (t3 - t0))
        reports.append(
            TimingReport(
                memory_size=size,
                encode_ms=statistics.median(encode_times),
                project_ms=statistics.median(project_times),
                decode_ms=statistics.median(decode_times),
                total_ms=statistics.median(totals),
                trials=trials,
                threads=active_threads,
            )
        )
    return reports


def format_report_lines(reports: list[TimingReport]) -> str:
    """Line-delimited key=value form of the timing table."""
    lines = []
    for r in reports:
        lines.append(
            f"memory_size={r.memory_size} encode_ms={r.encode_ms:.3f} "
            f"project_ms={r.project_ms:.3f} decode_ms={r.decode_ms:.3f} "
            f"total_ms={r.total_ms:.3f} trials={r.trials} threads={r.threads}"
        )
    return "\n".join(lines)


def write_report_json(reports: list[TimingReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in reports], indent=2) + "\n")

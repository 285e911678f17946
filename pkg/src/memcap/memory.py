"""Support memory: construction, corpus filters, compaction, and persistence.

The memory is an ordered collection of (embedding, pre-normalization norm,
source text). Embeddings are stored as float32 rows of a single contiguous
matrix; texts keep corpus order. The on-disk layout ("DCAP") is bit-exact:

    magic b"DCAP" | version u16 | flags u16 | dim u32 | count u64   (little-endian)
    count * dim float32 embeddings, row-major
    count float32 prenorms
    per entry: text byte length u32, then UTF-8 bytes
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .embedding import normalize
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyCorpusError,
    EncoderFailureError,
    FormatError,
    TruncatedError,
    VersionUnsupportedError,
)

MAGIC = b"DCAP"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHHIQ")

# TextEncoder: maps a sentence to its raw (pre-normalization) embedding.
TextEncoder = Callable[[str], np.ndarray]


@dataclass(frozen=True)
class CorpusEntry:
    """One training sentence, optionally pre-tokenized."""

    text: str
    tokens: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("corpus entry text must be nonempty")

    @property
    def length(self) -> int:
        """Word count (whitespace tokenization)."""
        return len(self.text.split())


@dataclass
class SupportMemory:
    """Ordered store of unit-norm text embeddings with their source texts."""

    embeddings: np.ndarray  # (count, dim) float32, unit rows
    prenorms: np.ndarray  # (count,) float32
    texts: list[str]

    def __post_init__(self) -> None:
        emb = np.ascontiguousarray(np.asarray(self.embeddings, dtype=np.float32))
        if emb.ndim != 2:
            raise DimensionMismatchError(f"embeddings must be 2-D, got shape {emb.shape}")
        pre = np.ascontiguousarray(np.asarray(self.prenorms, dtype=np.float32))
        if pre.shape != (emb.shape[0],):
            raise DimensionMismatchError(
                f"{emb.shape[0]} embeddings but {pre.shape} prenorms"
            )
        if len(self.texts) != emb.shape[0]:
            raise DimensionMismatchError(
                f"{emb.shape[0]} embeddings but {len(self.texts)} texts"
            )
        self.embeddings = emb
        self.prenorms = pre

    @property
    def count(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def entry(self, i: int) -> tuple[np.ndarray, float, str]:
        return self.embeddings[i], float(self.prenorms[i]), self.texts[i]

    def validate(self) -> None:
        """Check the unit-norm and finiteness invariants (1e-5 tolerance)."""
        if self.count == 0:
            return
        if not np.isfinite(self.embeddings).all():
            raise ValueError("memory contains non-finite embedding components")
        norms = np.linalg.norm(self.embeddings.astype(np.float64), axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > 1e-5:
            raise ValueError(f"memory rows deviate from unit norm by {worst}")


@dataclass(frozen=True)
class FilterReport:
    """Outcome of similarity compaction; maps each removed index to a witness."""

    input_count: int
    retained_count: int
    threshold: float
    removed_cover: dict[int, int] = field(default_factory=dict)


def build_memory(corpus: list[CorpusEntry], encoder: TextEncoder) -> SupportMemory:
    """Encode every corpus entry, in order, into a support memory."""
    if not corpus:
        raise EmptyCorpusError("cannot build a memory from an empty corpus")
    rows: list[np.ndarray] = []
    prenorms: list[float] = []
    texts: list[str] = []
    dim: int | None = None
    for entry in corpus:
        try:
            raw = np.asarray(encoder(entry.text), dtype=np.float64)
        except Exception as exc:  # noqa: BLE001 - encoder is caller-supplied
            raise EncoderFailureError(f"encoder failed on {entry.text!r}: {exc}") from exc
        emb, prenorm = normalize(raw)
        if dim is None:
            dim = emb.shape[0]
        elif emb.shape[0] != dim:
            raise DimensionMismatchError(
                f"encoder produced dimension {emb.shape[0]}, expected {dim}"
            )
        rows.append(emb.astype(np.float32))
        prenorms.append(prenorm)
        texts.append(entry.text)
    return SupportMemory(
        embeddings=np.stack(rows),
        prenorms=np.asarray(prenorms, dtype=np.float32),
        texts=texts,
    )


def filter_by_norm_and_length(
    corpus: list[CorpusEntry],
    encoder: TextEncoder,
    max_len: int = 15,
    max_prenorm: float = 10.0,
) -> list[CorpusEntry]:
    """Keep entries with word count < max_len and encoder prenorm < max_prenorm.

    Large-norm sentences tend not to describe anything visual, so this is the
    cheap relevance filter applied before decoder training. Both bounds are
    strict.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if max_prenorm <= 0:
        raise ValueError(f"max_prenorm must be positive, got {max_prenorm}")
    kept: list[CorpusEntry] = []
    for entry in corpus:
        if entry.length >= max_len:
            continue
        try:
            raw = np.asarray(encoder(entry.text), dtype=np.float64)
        except Exception as exc:  # noqa: BLE001
            raise EncoderFailureError(f"encoder failed on {entry.text!r}: {exc}") from exc
        prenorm = float(np.linalg.norm(raw))
        if prenorm < max_prenorm:
            kept.append(entry)
    return kept


def compact_by_similarity(
    memory: SupportMemory, threshold: float
) -> tuple[SupportMemory, FilterReport]:
    """Greedy single-pass similarity filter in entry order.

    An entry is retained iff its maximum cosine to all previously retained
    entries is <= threshold; otherwise the most similar retained entry is
    recorded as its witness.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    n = memory.count
    emb64 = memory.embeddings.astype(np.float64)
    retained_buf = np.empty_like(emb64)
    retained_idx: list[int] = []
    cover: dict[int, int] = {}
    r = 0
    for i in range(n):
        e = emb64[i]
        if r > 0:
            sims = np.clip(retained_buf[:r] @ e, -1.0, 1.0)
            j = int(np.argmax(sims))
            if float(sims[j]) > threshold:
                cover[i] = retained_idx[j]
                continue
        retained_buf[r] = e
        retained_idx.append(i)
        r += 1
    compacted = SupportMemory(
        embeddings=memory.embeddings[retained_idx].copy(),
        prenorms=memory.prenorms[retained_idx].copy(),
        texts=[memory.texts[i] for i in retained_idx],
    )
    report = FilterReport(
        input_count=n,
        retained_count=r,
        threshold=threshold,
        removed_cover=cover,
    )
    return compacted, report


def sample_memory(memory: SupportMemory, fraction: float, seed: int) -> SupportMemory:
    """Uniform sample without replacement of ceil(fraction * N) entries.

    The selection is deterministic per seed; surviving entries keep their
    original relative order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = memory.count
    m = math.ceil(fraction * n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    return SupportMemory(
        embeddings=memory.embeddings[idx].copy(),
        prenorms=memory.prenorms[idx].copy(),
        texts=[memory.texts[i] for i in idx],
    )


def save_memory(memory: SupportMemory, path: str | Path) -> None:
    """Write the memory in the DCAP layout, atomically (temp file + rename)."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, memory.dim, memory.count)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(memory.embeddings, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(memory.prenorms, dtype="<f4").tobytes())
            for text in memory.texts:
                data = text.encode("utf-8")
                fh.write(struct.pack("<I", len(data)))
                fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_memory(path: str | Path) -> SupportMemory:
    """Read a DCAP file back into a SupportMemory (bit-exact round trip)."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedError(f"{path}: header cut short")
    _, version, _flags, dim, count = _HEADER.unpack_from(blob, 0)
    if version != FORMAT_VERSION:
        raise VersionUnsupportedError(f"{path}: version {version} unsupported")
    if dim == 0:
        raise DimensionMismatchError(f"{path}: dimension 0")
    offset = _HEADER.size

    emb_bytes = count * dim * 4
    if len(blob) < offset + emb_bytes:
        raise TruncatedError(f"{path}: embedding block cut short")
    embeddings = (
        np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset)
        .reshape(count, dim)
        .copy()
    )
    offset += emb_bytes

    pre_bytes = count * 4
    if len(blob) < offset + pre_bytes:
        raise TruncatedError(f"{path}: prenorm block cut short")
    prenorms = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).copy()
    offset += pre_bytes

    texts: list[str] = []
    for _ in range(count):
        if len(blob) < offset + 4:
            raise TruncatedError(f"{path}: text length cut short")
        (nbytes,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if len(blob) < offset + nbytes:
            raise TruncatedError(f"{path}: text payload cut short")
        try:
            texts.append(blob[offset : offset + nbytes].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: text block is not valid UTF-8") from exc
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return SupportMemory(embeddings=embeddings, prenorms=prenorms, texts=texts)


def load_jsonl_memory(path: str | Path) -> SupportMemory:
    """Read the JSONL interop format: per line {text, embedding[, prenorm]}.

    The embedding field carries the raw (pre-normalization) vector; rows are
    normalized on load and the prenorm is recomputed when absent.
    """
    rows: list[np.ndarray] = []
    prenorms: list[float] = []
    texts: list[str] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON") from exc
            if "text" not in obj or "embedding" not in obj:
                raise FormatError(f"{path}:{lineno}: missing 'text' or 'embedding'")
            emb, computed = normalize(np.asarray(obj["embedding"], dtype=np.float64))
            if dim is None:
                dim = emb.shape[0]
            elif emb.shape[0] != dim:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: dimension {emb.shape[0]} != {dim}"
                )
            rows.append(emb.astype(np.float32))
            prenorms.append(float(obj.get("prenorm", computed)))
            texts.append(str(obj["text"]))
    if not rows:
        raise EmptyCorpusError(f"{path}: no entries")
    return SupportMemory(
        embeddings=np.stack(rows),
        prenorms=np.asarray(prenorms, dtype=np.float32),
        texts=texts,
    )


def load_text_corpus(path: str | Path) -> list[CorpusEntry]:
    """One sentence per line; blank lines are skipped."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(CorpusEntry(text=line))
    return entries


def load_jsonl_corpus(path: str | Path) -> list[CorpusEntry]:
    """JSONL corpus: per line {"text": ...}; other fields are ignored."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON") from exc
            if "text" not in obj:
                raise FormatError(f"{path}:{lineno}: missing 'text'")
            entries.append(CorpusEntry(text=str(obj["text"])))
    return entries


def write_jsonl_corpus(entries: Iterable[CorpusEntry], path: str | Path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps({"text": entry.text}) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

import json
import math

import numpy as np
import pytest

from memcap.embedding import cosine, normalize
from memcap.errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyCorpusError,
    EncoderFailureError,
    FormatError,
    TruncatedError,
    VersionUnsupportedError,
)
from memcap.memory import (
    CorpusEntry,
    SupportMemory,
    build_memory,
    compact_by_similarity,
    filter_by_norm_and_length,
    load_jsonl_memory,
    load_memory,
    sample_memory,
    save_memory,
)

from conftest import make_memory
from oracles import fsum_norm, random_unit_rows


def hash_encoder(dim=8):
    """Deterministic stand-in encoder: seeded Gaussian per distinct text."""

    def encode(text):
        rng = np.random.default_rng(abs(hash(text)) % (2**32))
        return rng.standard_normal(dim)

    return encode


def word_count_encoder(dim=4):
    """Raw vector whose norm equals the word count, for the norm filter."""

    def encode(text):
        v = np.zeros(dim)
        v[0] = len(text.split())
        return v

    return encode


class TestBuildMemory:
    def test_three_sentences_order_preserved(self):
        corpus = [CorpusEntry(text=t) for t in ["one red cube", "two blue spheres", "a cone"]]
        memory = build_memory(corpus, hash_encoder())
        assert memory.count == 3
        assert memory.dim == 8
        assert memory.texts == [e.text for e in corpus]

    def test_duplicates_retained(self):
        corpus = [CorpusEntry(text="same line")] * 3
        memory = build_memory(corpus, hash_encoder())
        assert memory.count == 3
        assert np.array_equal(memory.embeddings[0], memory.embeddings[2])

    def test_norms_and_prenorms_against_oracle(self):
        rng = np.random.default_rng(0)
        raws = {f"sentence {i}": rng.standard_normal(16) for i in range(500)}
        corpus = [CorpusEntry(text=t) for t in raws]
        memory = build_memory(corpus, lambda t: raws[t])
        norms = np.linalg.norm(memory.embeddings.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() < 1e-5
        for i, text in enumerate(raws):
            assert memory.prenorms[i] == pytest.approx(fsum_norm(raws[text]), rel=1e-6)

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpusError):
            build_memory([], hash_encoder())

    def test_encoder_failure_wrapped(self):
        def broken(text):
            raise RuntimeError("boom")

        with pytest.raises(EncoderFailureError):
            build_memory([CorpusEntry(text="x")], broken)


class TestFilter:
    def test_long_sentence_rejected(self):
        long_text = " ".join(["word"] * 20)
        corpus = [CorpusEntry(text=long_text), CorpusEntry(text="short enough line")]
        kept = filter_by_norm_and_length(corpus, hash_encoder(), max_len=15, max_prenorm=1e9)
        assert [e.text for e in kept] == ["short enough line"]

    def test_boundary_is_strict(self):
        fifteen = " ".join(["w"] * 15)
        fourteen = " ".join(["w"] * 14)
        kept = filter_by_norm_and_length(
            [CorpusEntry(text=fifteen), CorpusEntry(text=fourteen)],
            hash_encoder(),
            max_len=15,
            max_prenorm=1e9,
        )
        assert [e.text for e in kept] == [fourteen]

    def test_empty_corpus(self):
        assert filter_by_norm_and_length([], hash_encoder()) == []

    def test_norm_filter_matches_word_count_enumeration(self):
        corpus = [CorpusEntry(text=" ".join(["w"] * n)) for n in range(1, 14)]
        kept = filter_by_norm_and_length(
            corpus, word_count_encoder(), max_len=100, max_prenorm=10.0
        )
        assert [e.length for e in kept] == list(range(1, 10))

    def test_order_preserved(self):
        corpus = [CorpusEntry(text=f"line {i}") for i in range(10)]
        kept = filter_by_norm_and_length(corpus, hash_encoder(), max_len=15, max_prenorm=1e9)
        assert [e.text for e in kept] == [e.text for e in corpus]


class TestCompact:
    def test_identical_entries_collapse_to_one(self):
        v, _ = normalize(np.arange(1.0, 7.0))
        memory = make_memory(np.tile(v, (5, 1)))
        compacted, report = compact_by_similarity(memory, 0.8)
        assert compacted.count == 1
        assert report.retained_count == 1
        assert set(report.removed_cover) == {1, 2, 3, 4}
        assert all(w == 0 for w in report.removed_cover.values())

    def test_orthogonal_entries_all_retained(self):
        memory = make_memory(np.eye(6))
        compacted, report = compact_by_similarity(memory, 0.8)
        assert compacted.count == 6
        assert report.removed_cover == {}

    def test_clustered_corpus_compacts_near_cluster_count(self):
        rng = np.random.default_rng(1)
        centers = rng.standard_normal((50, 32))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        rows = []
        for c in centers:
            for _ in range(20):
                rows.append(c + rng.normal(0.0, 0.02, size=32))
        memory = make_memory(np.asarray(rows))
        compacted, report = compact_by_similarity(memory, 0.8)
        assert report.retained_count <= 2 * 50
        assert report.retained_count >= 50 * 0.5

    def test_retained_pairwise_below_threshold(self):
        rng = np.random.default_rng(2)
        memory = make_memory(rng.standard_normal((300, 16)))
        threshold = 0.6
        compacted, _ = compact_by_similarity(memory, threshold)
        emb = compacted.embeddings.astype(np.float64)
        gram = np.clip(emb @ emb.T, -1.0, 1.0)
        np.fill_diagonal(gram, -1.0)
        assert gram.max() <= threshold + 1e-12

    def test_every_removed_entry_has_witness(self):
        rng = np.random.default_rng(3)
        memory = make_memory(rng.standard_normal((400, 8)))
        threshold = 0.7
        compacted, report = compact_by_similarity(memory, threshold)
        removed = set(range(memory.count)) - set(
            i for i in range(memory.count) if memory.texts[i] in set(compacted.texts)
        )
        assert set(report.removed_cover) | {
            i for i in range(memory.count) if memory.texts[i] in set(compacted.texts)
        } == set(range(memory.count))
        for removed_idx, witness_idx in report.removed_cover.items():
            sim = cosine(memory.embeddings[removed_idx], memory.embeddings[witness_idx])
            assert sim > threshold

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        memory = make_memory(rng.standard_normal((200, 8)))
        once, _ = compact_by_similarity(memory, 0.75)
        twice, report = compact_by_similarity(once, 0.75)
        assert twice.count == once.count
        assert report.removed_cover == {}
        assert np.array_equal(once.embeddings, twice.embeddings)

    def test_lower_threshold_retains_fewer(self):
        rng = np.random.default_rng(5)
        memory = make_memory(rng.standard_normal((300, 6)))
        low, _ = compact_by_similarity(memory, 0.3)
        high, _ = compact_by_similarity(memory, 0.9)
        assert low.count <= high.count

    def test_first_occurrence_wins(self):
        v, _ = normalize(np.arange(1.0, 5.0))
        memory = make_memory(np.tile(v, (3, 1)), texts=["first", "second", "third"])
        compacted, _ = compact_by_similarity(memory, 0.8)
        assert compacted.texts == ["first"]

    def test_bad_threshold_rejected(self):
        memory = make_memory(np.eye(3))
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                compact_by_similarity(memory, bad)


class TestSample:
    def test_full_fraction_identity(self):
        rng = np.random.default_rng(6)
        memory = make_memory(rng.standard_normal((20, 4)))
        sampled = sample_memory(memory, 1.0, seed=0)
        assert np.array_equal(sampled.embeddings, memory.embeddings)
        assert sampled.texts == memory.texts

    def test_one_percent_of_ten_thousand(self):
        memory = make_memory(random_unit_rows(10_000, 4, np.random.default_rng(7)))
        sampled = sample_memory(memory, 0.01, seed=1)
        assert sampled.count == 100

    def test_ceil_count(self):
        memory = make_memory(np.eye(7))
        assert sample_memory(memory, 0.5, seed=0).count == math.ceil(0.5 * 7)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(8)
        memory = make_memory(rng.standard_normal((50, 4)))
        a = sample_memory(memory, 0.3, seed=42)
        b = sample_memory(memory, 0.3, seed=42)
        c = sample_memory(memory, 0.3, seed=43)
        assert np.array_equal(a.embeddings, b.embeddings)
        assert a.texts == b.texts
        assert a.texts != c.texts

    def test_bad_fraction_rejected(self):
        memory = make_memory(np.eye(3))
        for bad in (0.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                sample_memory(memory, bad, seed=0)


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        memory = make_memory(
            rng.standard_normal((5, 12)),
            texts=["plain", "", "ünïcode £ 多字节", "tab\tand\nnewline", "x" * 300],
        )
        path = tmp_path / "memory.dcap"
        save_memory(memory, path)
        loaded = load_memory(path)
        assert loaded.count == memory.count
        assert loaded.dim == memory.dim
        assert loaded.texts == memory.texts
        assert np.array_equal(
            loaded.embeddings.view(np.uint32), memory.embeddings.view(np.uint32)
        )
        assert np.array_equal(loaded.prenorms.view(np.uint32), memory.prenorms.view(np.uint32))

    def test_save_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(10)
        memory = make_memory(rng.standard_normal((4, 6)))
        a, b = tmp_path / "a.dcap", tmp_path / "b.dcap"
        save_memory(memory, a)
        save_memory(memory, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.dcap"
        memory = make_memory(np.eye(3))
        save_memory(memory, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            load_memory(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "m.dcap"
        save_memory(make_memory(np.eye(3)), path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionUnsupportedError):
            load_memory(path)

    def test_truncated_embeddings(self, tmp_path):
        path = tmp_path / "m.dcap"
        save_memory(make_memory(np.eye(4)), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: 20 + 4 * 4 * 4 // 2])  # header + half the floats
        with pytest.raises(TruncatedError):
            load_memory(path)

    def test_truncated_mid_text(self, tmp_path):
        path = tmp_path / "m.dcap"
        save_memory(make_memory(np.eye(2), texts=["hello", "world"]), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(TruncatedError):
            load_memory(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "m.dcap"
        save_memory(make_memory(np.eye(2)), path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError):
            load_memory(path)

    def test_failed_save_leaves_no_file(self, tmp_path):
        target = tmp_path / "out.dcap"

        class Hostile(str):
            def encode(self, *a, **k):
                raise RuntimeError("no bytes for you")

        memory = make_memory(np.eye(2), texts=["ok", Hostile("bad")])
        with pytest.raises(RuntimeError):
            save_memory(memory, target)
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []


class TestJsonl:
    def test_load_with_and_without_prenorm(self, tmp_path):
        path = tmp_path / "rows.jsonl"
        lines = [
            {"text": "alpha", "embedding": [3.0, 4.0]},
            {"text": "beta", "embedding": [0.0, 2.0], "prenorm": 2.0},
        ]
        path.write_text("\n".join(json.dumps(o) for o in lines) + "\n")
        memory = load_jsonl_memory(path)
        assert memory.count == 2
        assert np.allclose(memory.embeddings[0], [0.6, 0.8], atol=1e-7)
        assert memory.prenorms[0] == pytest.approx(5.0)
        assert memory.prenorms[1] == pytest.approx(2.0)

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "rows.jsonl"
        path.write_text(
            json.dumps({"text": "a", "embedding": [1.0, 0.0]})
            + "\n"
            + json.dumps({"text": "b", "embedding": [1.0, 0.0, 0.0]})
            + "\n"
        )
        with pytest.raises(DimensionMismatchError):
            load_jsonl_memory(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "rows.jsonl"
        path.write_text(json.dumps({"text": "a"}) + "\n")
        with pytest.raises(FormatError):
            load_jsonl_memory(path)


class TestSupportMemoryInvariants:
    def test_validate_catches_bad_norm(self):
        memory = SupportMemory(
            embeddings=np.full((2, 3), 0.9, dtype=np.float32),
            prenorms=np.ones(2, dtype=np.float32),
            texts=["a", "b"],
        )
        with pytest.raises(ValueError):
            memory.validate()

    def test_count_matches_entries(self):
        with pytest.raises(DimensionMismatchError):
            SupportMemory(
                embeddings=np.eye(3, dtype=np.float32),
                prenorms=np.ones(2, dtype=np.float32),
                texts=["a", "b", "c"],
            )
        with pytest.raises(DimensionMismatchError):
            SupportMemory(
                embeddings=np.eye(3, dtype=np.float32),
                prenorms=np.ones(3, dtype=np.float32),
                texts=["a"],
            )

"""Command-line surface: simulate, build-memory, compact, train, decode, eval, bench.

Exit codes: 0 success, 2 usage error (argparse), 3 data/format error,
4 numeric failure. Output files are written via temp-file-plus-rename so a
failing run never leaves a partial artifact behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .decoder import (
    DecoderConfig,
    DecoderModel,
    TrainConfig,
    decode_greedy,
    load_model,
    save_model,
    train,
)
from .embedding import IMAGE_TEMPERATURE, ProjectionConfig
from .errors import (
    DegenerateCombinationError,
    EngineError,
    ZeroVectorError,
)
from .harness import run_toy_pipeline
from .memory import (
    CorpusEntry,
    SupportMemory,
    build_memory,
    compact_by_similarity,
    filter_by_norm_and_length,
    load_jsonl_corpus,
    load_jsonl_memory,
    load_memory,
    load_text_corpus,
    save_memory,
    write_jsonl_corpus,
)
from .metrics import (
    benchmark_pipeline,
    bleu,
    corpus_bleu,
    exact_match_rate,
    format_report_lines,
    write_report_json,
)
from .strategies import (
    PromptSpec,
    StrategyKind,
    apply_prompt,
    prefix_nnd,
    prefix_pd,
    prefix_vd,
    retrieve_cliprre,
)
from .toyworld import GapSpec, ToyWorld, gap_metrics, toy_image_encoder

_NUMERIC_ERRORS = (ZeroVectorError, DegenerateCombinationError)


def _write_text_atomic(path: Path, content: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _set_threads(threads: int | None) -> None:
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def _load_corpus(path: str, fmt: str) -> list[CorpusEntry]:
    if fmt == "auto":
        fmt = "jsonl" if path.endswith((".jsonl", ".json")) else "text"
    return load_jsonl_corpus(path) if fmt == "jsonl" else load_text_corpus(path)


def _load_queries(path: str) -> np.ndarray:
    """Query embeddings from a memory-format file or a JSONL export."""
    if path.endswith((".jsonl", ".json")):
        memory = load_jsonl_memory(path)
    else:
        memory = load_memory(path)
    return memory.embeddings.astype(np.float64)


def cmd_simulate(args: argparse.Namespace) -> int:
    world = ToyWorld(dim=args.dim, seed=args.world_seed)
    captions = world.generate_captions(args.captions, seed=args.seed)
    gap = GapSpec(
        rotation_angle=args.rotation,
        offset_scale=args.offset,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    entries = [CorpusEntry(text=c) for c in captions for _ in range(args.repeats)]
    write_jsonl_corpus(entries, args.corpus_out)
    text_memory = build_memory(entries, world.encoder())
    save_memory(text_memory, args.text_out)
    image_rows = np.stack([toy_image_encoder(e.text, world, gap) for e in entries])
    image_memory = SupportMemory(
        embeddings=image_rows.astype(np.float32),
        prenorms=np.ones(len(entries), dtype=np.float32),
        texts=[e.text for e in entries],
    )
    save_memory(image_memory, args.image_out)
    report = gap_metrics(text_memory.embeddings, image_rows)
    print(f"captions={len(captions)} entries={len(entries)} dim={args.dim}")
    print(f"centroid_distance={report.centroid_distance:.6f} "
          f"mean_paired_cosine={report.mean_paired_cosine:.6f}")
    return 0


def cmd_build_memory(args: argparse.Namespace) -> int:
    if args.encoder == "file":
        memory = load_jsonl_memory(args.input)
        if args.max_len is not None or args.max_prenorm is not None:
            max_len = args.max_len if args.max_len is not None else 15
            max_prenorm = args.max_prenorm if args.max_prenorm is not None else 10.0
            keep = [
                i
                for i in range(memory.count)
                if len(memory.texts[i].split()) < max_len
                and float(memory.prenorms[i]) < max_prenorm
            ]
            memory = SupportMemory(
                embeddings=memory.embeddings[keep].copy(),
                prenorms=memory.prenorms[keep].copy(),
                texts=[memory.texts[i] for i in keep],
            )
    else:
        corpus = _load_corpus(args.input, args.input_format)
        world = ToyWorld(dim=args.dim, seed=args.world_seed)
        encoder = world.encoder()
        if args.max_len is not None or args.max_prenorm is not None:
            corpus = filter_by_norm_and_length(
                corpus,
                encoder,
                max_len=args.max_len if args.max_len is not None else 15,
                max_prenorm=args.max_prenorm if args.max_prenorm is not None else 10.0,
            )
        memory = build_memory(corpus, encoder)
    save_memory(memory, args.output)
    print(f"count={memory.count} dim={memory.dim}")
    return 0


def cmd_compact(args: argparse.Namespace) -> int:
    memory = load_memory(args.memory)
    compacted, report = compact_by_similarity(memory, args.threshold)
    save_memory(compacted, args.output)
    print(
        f"input_count={report.input_count} retained_count={report.retained_count} "
        f"threshold={report.threshold}"
    )
    if args.report:
        payload = {
            "input_count": report.input_count,
            "retained_count": report.retained_count,
            "threshold": report.threshold,
            "removed_cover": {str(k): v for k, v in report.removed_cover.items()},
        }
        _write_text_atomic(Path(args.report), json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    if args.encoder == "file":
        # corpus rows carry their own raw embeddings (exporter JSONL)
        memory = load_jsonl_memory(args.corpus)
        corpus = [CorpusEntry(text=t) for t in memory.texts]
        rows = {
            t: memory.embeddings[i].astype(np.float64) for i, t in enumerate(memory.texts)
        }
        encoder = rows.__getitem__
        dim = memory.dim
        from .decoder import Vocab

        vocab = Vocab(sorted({w for t in memory.texts for w in t.split()}))
    else:
        corpus = _load_corpus(args.corpus, args.input_format)
        world = ToyWorld(dim=args.dim, seed=args.world_seed)
        encoder = world.encoder()
        dim = args.dim
        vocab = world.vocab
    config = DecoderConfig(
        input_dim=dim,
        width=args.width,
        n_layers=args.layers,
        n_heads=args.heads,
        max_len=args.max_len,
    )
    model = DecoderModel(vocab, config, seed=args.seed)
    train_config = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        label_smoothing=args.label_smoothing,
        warmup_steps=args.warmup,
        seed=args.seed,
    )
    log: list[float] = []
    trained = train(model, corpus, encoder, train_config, log=log)
    save_model(trained, args.out)
    last = log[-1] if log else float("nan")
    print(f"steps={args.steps} final_loss={last:.6f} vocab={vocab.size}")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    _set_threads(args.threads)
    kind = StrategyKind(args.strategy)
    if args.model is None and kind is not StrategyKind.RETRIEVAL:
        raise EngineError(f"strategy {kind.value} requires --model")
    model = load_model(args.model) if args.model else None
    queries = _load_queries(args.query_file)
    memory = load_memory(args.memory) if args.memory else None
    if kind is not StrategyKind.VISUAL and memory is None:
        raise EngineError(f"strategy {kind.value} requires --memory")
    config = ProjectionConfig(temperature=args.tau)
    prompt_ids = (
        apply_prompt(PromptSpec(prompt_text=args.prompt), model.vocab) if model else []
    )
    lines = []
    for row in queries:
        if kind is StrategyKind.RETRIEVAL:
            lines.append(retrieve_cliprre(row, memory, k=1)[0][0])
            continue
        if kind is StrategyKind.PROJECTION:
            prefix = prefix_pd(row, memory, config)
        elif kind is StrategyKind.NEAREST_NEIGHBOR:
            prefix = prefix_nnd(row, memory)[0]
        else:
            prefix = prefix_vd(row)
        ids = decode_greedy(model, prefix, prompt=prompt_ids)
        lines.append(model.vocab.decode(ids))
    _write_text_atomic(Path(args.out), "\n".join(lines) + "\n")
    print(f"queries={len(queries)} strategy={kind.value}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    hyp_lines = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    ref_lines = Path(args.ref).read_text(encoding="utf-8").splitlines()
    hyps = [line.split() for line in hyp_lines if line.strip()]
    refs = [line.split() for line in ref_lines if line.strip()]
    em = exact_match_rate(hyps, refs)
    cb = corpus_bleu(hyps, [[r] for r in refs], max_n=args.bleu_n)
    sentence = sum(bleu(h, [r], max_n=args.bleu_n) for h, r in zip(hyps, refs)) / len(hyps)
    print(f"exact_match={em:.6f}")
    print(f"corpus_bleu@{args.bleu_n}={cb:.6f}")
    print(f"mean_sentence_bleu@{args.bleu_n}={sentence:.6f}")
    if args.json:
        payload = {
            "exact_match": em,
            f"corpus_bleu@{args.bleu_n}": cb,
            f"mean_sentence_bleu@{args.bleu_n}": sentence,
        }
        _write_text_atomic(Path(args.json), json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    _set_threads(args.threads)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if args.model:
        decoder = load_model(args.model)
    else:
        world = ToyWorld(dim=args.dim, seed=0)
        decoder = DecoderModel(world.vocab, DecoderConfig(input_dim=args.dim), seed=0)
    reports = benchmark_pipeline(
        sizes, args.dim, decoder, trials=args.trials, threads=args.threads
    )
    print(format_report_lines(reports))
    if args.out:
        write_report_json(reports, args.out)
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    _set_threads(args.threads)
    fractions = [float(f) for f in args.fractions.split(",")] if args.fractions else None
    gap = GapSpec(
        rotation_angle=args.rotation,
        offset_scale=args.offset,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    report = run_toy_pipeline(
        dim=args.dim,
        captions=args.captions,
        memory_repeats=args.repeats,
        steps=args.steps,
        seed=args.seed,
        gap=gap,
        temperature=args.tau,
        fractions=fractions,
    )
    payload = report.to_dict()
    for key, value in payload.items():
        print(f"{key}={value}")
    if args.json:
        _write_text_atomic(Path(args.json), json.dumps(payload, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memcap",
        description="Caption decoding from a text-embedding support memory.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit a synthetic corpus plus text/image clouds")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--captions", type=int, default=360)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--rotation", type=float, default=0.5)
    p.add_argument("--offset", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--corpus-out", required=True)
    p.add_argument("--text-out", required=True)
    p.add_argument("--image-out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-memory", help="encode a corpus into a memory file")
    p.add_argument("--input", required=True)
    p.add_argument("--input-format", choices=["auto", "text", "jsonl"], default="auto")
    p.add_argument("--encoder", choices=["toy", "file"], default="toy")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--max-prenorm", type=float, default=None)
    p.set_defaults(func=cmd_build_memory)

    p = sub.add_parser("compact", help="similarity-threshold memory compaction")
    p.add_argument("--memory", required=True)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("train", help="train the decoder on a text corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--input-format", choices=["auto", "text", "jsonl"], default="auto")
    p.add_argument("--encoder", choices=["toy", "file"], default="toy",
                   help="'file' reads embeddings from the corpus JSONL itself")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--label-smoothing", type=float, default=0.1)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="caption query embeddings")
    p.add_argument("--model", default=None, help="decoder checkpoint (not needed for retrieve)")
    p.add_argument("--memory", default=None)
    p.add_argument("--strategy", choices=[k.value for k in StrategyKind], default="pd")
    p.add_argument("--tau", type=float, default=IMAGE_TEMPERATURE)
    p.add_argument("--prompt", default="")
    p.add_argument("--query-file", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="exact match and BLEU between caption files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--bleu-n", type=int, default=4)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-stage timing across memory sizes")
    p.add_argument("--sizes", default="1000,10000")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline", help="full toy run: simulate, build, train, decode, eval")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--captions", type=int, default=360)
    p.add_argument("--repeats", type=int, default=40)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotation", type=float, default=0.5)
    p.add_argument("--offset", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=IMAGE_TEMPERATURE)
    p.add_argument("--fractions", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (EngineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

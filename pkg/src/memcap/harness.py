"""End-to-end toy experiments: train, decode under a gap, sweep memory sizes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, DecoderModel, TrainConfig, decode_greedy, train
from .embedding import ProjectionConfig, normalize
from .memory import CorpusEntry, SupportMemory, build_memory, sample_memory
from .metrics import exact_match_rate
from .strategies import prefix_nnd, prefix_pd, prefix_vd, retrieve_cliprre
from .toyworld import GapReport, GapSpec, ToyWorld, gap_metrics, toy_image_encoder


@dataclass(frozen=True)
class StrategyScores:
    """Exact-match rate per inference route over one query set."""

    pd: float
    nnd: float
    vd: float
    retrieval: float


@dataclass(frozen=True)
class GapExperiment:
    scores: StrategyScores
    text_to_image: GapReport
    text_to_projected: GapReport


def train_toy_decoder(
    world: ToyWorld,
    corpus: list[CorpusEntry],
    train_config: TrainConfig,
    decoder_config: DecoderConfig | None = None,
    log: list[float] | None = None,
) -> DecoderModel:
    """Fresh decoder over the world's vocabulary, trained on the corpus."""
    config = decoder_config or DecoderConfig(input_dim=world.dim)
    model = DecoderModel(world.vocab, config, seed=train_config.seed)
    return train(model, corpus, world.encoder(), train_config, log=log)


def text_cloud(world: ToyWorld, captions: list[str]) -> np.ndarray:
    rows = [normalize(world.encoder()(c))[0] for c in captions]
    return np.stack(rows)


def image_cloud(world: ToyWorld, captions: list[str], gap: GapSpec) -> np.ndarray:
    return np.stack([toy_image_encoder(c, world, gap) for c in captions])


def reconstruction_rate(
    model: DecoderModel,
    world: ToyWorld,
    captions: list[str],
    prefixes: np.ndarray,
) -> float:
    """Exact-match rate of greedy decodes from the given prefix rows."""
    hyps = [decode_greedy(model, prefixes[i]) for i in range(len(captions))]
    refs = [world.vocab.encode(c) for c in captions]
    return exact_match_rate(hyps, refs)


def run_gap_experiment(
    model: DecoderModel,
    world: ToyWorld,
    memory: SupportMemory,
    captions: list[str],
    gap: GapSpec,
    config: ProjectionConfig,
) -> GapExperiment:
    """Decode every caption's image view through all four strategies."""
    texts = text_cloud(world, captions)
    images = image_cloud(world, captions, gap)
    refs = [world.vocab.encode(c) for c in captions]

    pd_prefixes = np.stack([prefix_pd(images[i], memory, config) for i in range(len(captions))])
    nnd_prefixes = np.stack([prefix_nnd(images[i], memory)[0] for i in range(len(captions))])
    vd_prefixes = np.stack([prefix_vd(images[i]) for i in range(len(captions))])

    def rate(prefixes: np.ndarray) -> float:
        hyps = [decode_greedy(model, prefixes[i]) for i in range(len(captions))]
        return exact_match_rate(hyps, refs)

    retrieval_hits = sum(
        1
        for i, caption in enumerate(captions)
        if retrieve_cliprre(images[i], memory, k=1)[0][0] == caption
    )
    scores = StrategyScores(
        pd=rate(pd_prefixes),
        nnd=rate(nnd_prefixes),
        vd=rate(vd_prefixes),
        retrieval=retrieval_hits / len(captions),
    )
    return GapExperiment(
        scores=scores,
        text_to_image=gap_metrics(texts, images),
        text_to_projected=gap_metrics(texts, pd_prefixes),
    )


def memory_fraction_sweep(
    model: DecoderModel,
    world: ToyWorld,
    memory: SupportMemory,
    captions: list[str],
    gap: GapSpec,
    config: ProjectionConfig,
    fractions: list[float],
    seed: int = 0,
) -> dict[float, float]:
    """PD exact-match rate for each memory fraction (sampled without replacement)."""
    images = image_cloud(world, captions, gap)
    refs = [world.vocab.encode(c) for c in captions]
    results: dict[float, float] = {}
    for fraction in fractions:
        sub = memory if fraction >= 1.0 else sample_memory(memory, fraction, seed)
        hyps = [
            decode_greedy(model, prefix_pd(images[i], sub, config))
            for i in range(len(captions))
        ]
        results[fraction] = exact_match_rate(hyps, refs)
    return results


@dataclass
class PipelineReport:
    """One full simulate -> build -> train -> decode -> eval run."""

    caption_count: int
    memory_count: int
    train_steps: int
    text_reconstruction: float
    scores: StrategyScores
    centroid_text_image: float
    centroid_text_projected: float
    fraction_sweep: dict[float, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "caption_count": self.caption_count,
            "memory_count": self.memory_count,
            "train_steps": self.train_steps,
            "text_reconstruction": self.text_reconstruction,
            "exact_match": {
                "pd": self.scores.pd,
                "nnd": self.scores.nnd,
                "vd": self.scores.vd,
                "retrieval": self.scores.retrieval,
            },
            "centroid_text_image": self.centroid_text_image,
            "centroid_text_projected": self.centroid_text_projected,
            "fraction_sweep": {str(k): v for k, v in self.fraction_sweep.items()},
        }


def run_toy_pipeline(
    dim: int = 16,
    captions: int = 360,
    memory_repeats: int = 40,
    steps: int = 1000,
    seed: int = 0,
    gap: GapSpec | None = None,
    temperature: float = 0.01,
    fractions: list[float] | None = None,
) -> PipelineReport:
    """The full toy run used by the CLI `pipeline` command and the acceptance suite."""
    gap = gap or GapSpec(rotation_angle=0.5, offset_scale=0.3, noise_sigma=0.05, seed=seed)
    world = ToyWorld(dim=dim, seed=seed)
    distinct = world.generate_captions(captions, seed=seed)
    train_corpus = [CorpusEntry(text=c) for c in distinct]
    model = train_toy_decoder(world, train_corpus, TrainConfig(steps=steps, seed=seed))

    memory_corpus = [CorpusEntry(text=c) for c in distinct for _ in range(memory_repeats)]
    memory = build_memory(memory_corpus, world.encoder())

    texts = text_cloud(world, distinct)
    text_recon = reconstruction_rate(model, world, distinct, texts)

    config = ProjectionConfig(temperature=temperature)
    experiment = run_gap_experiment(model, world, memory, distinct, gap, config)
    sweep = (
        memory_fraction_sweep(model, world, memory, distinct, gap, config, fractions, seed)
        if fractions
        else {}
    )
    return PipelineReport(
        caption_count=len(distinct),
        memory_count=memory.count,
        train_steps=steps,
        text_reconstruction=text_recon,
        scores=experiment.scores,
        centroid_text_image=experiment.text_to_image.centroid_distance,
        centroid_text_projected=experiment.text_to_projected.centroid_distance,
        fraction_sweep=sweep,
    )

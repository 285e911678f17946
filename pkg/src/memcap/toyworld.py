"""Synthetic dual-encoder world with a controllable modality gap.

Captions follow a closed template grammar over attribute words ("a small red
cube"). The text encoder sums fixed seeded unit vectors assigned to the
attribute words, so captions sharing attributes are measurably closer. The
"image" encoder derives a second view of the same caption: a fixed planar
rotation, a constant offset direction, and per-caption Gaussian noise, then
re-normalization. That displacement stands in for the systematic gap between
the two halves of a contrastive embedding space and makes the projection
mechanism testable without any pre-trained model.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .decoder import Vocab
from .embedding import normalize
from .errors import LengthMismatchError, UnparseableCaptionError
from .memory import CorpusEntry

_SIZES = ("small", "large", "tiny", "huge", "shiny", "matte", "fuzzy", "smooth")
_COLORS = ("red", "green", "blue", "yellow", "purple", "orange", "black", "white")
_SHAPES = ("cube", "sphere", "cone", "torus", "prism", "disk", "slab", "wedge")


@dataclass(frozen=True)
class GapSpec:
    """Displacement applied to text embeddings to synthesize the image view.

    `rotation_angle` turns a fixed random plane; `offset_scale` shifts every
    vector along one fixed direction; `noise_sigma` is the per-component
    standard deviation of caption-specific Gaussian noise. All three at zero
    make the modalities identical.
    """

    rotation_angle: float = 0.0
    offset_scale: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rotation_angle <= np.pi:
            raise ValueError(f"rotation_angle must lie in [0, pi], got {self.rotation_angle}")
        if self.offset_scale < 0 or self.noise_sigma < 0:
            raise ValueError("offset_scale and noise_sigma must be nonnegative")


@dataclass(frozen=True)
class GapReport:
    centroid_distance: float
    mean_paired_cosine: float


class ToyWorld:
    """Attribute grammar, closed vocabulary, and fixed attribute vectors."""

    def __init__(
        self,
        dim: int = 16,
        seed: int = 0,
        sizes: tuple[str, ...] = _SIZES,
        colors: tuple[str, ...] = _COLORS,
        shapes: tuple[str, ...] = _SHAPES,
    ):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        self.sizes = sizes
        self.colors = colors
        self.shapes = shapes
        attribute_words = [*sizes, *colors, *shapes]
        if len(set(attribute_words)) != len(attribute_words):
            raise ValueError("attribute words must be unique across categories")
        self.vocab = Vocab(["a", *sorted(attribute_words)])
        rng = np.random.default_rng(seed)
        self._vectors = {}
        for word in attribute_words:
            v = rng.standard_normal(dim)
            self._vectors[word] = v / np.linalg.norm(v)

    def caption(self, size: str, color: str, shape: str) -> str:
        return f"a {size} {color} {shape}"

    def parse(self, text: str) -> tuple[str, str, str]:
        words = text.split()
        if (
            len(words) != 4
            or words[0] != "a"
            or words[1] not in self.sizes
            or words[2] not in self.colors
            or words[3] not in self.shapes
        ):
            raise UnparseableCaptionError(f"caption {text!r} does not match the grammar")
        return words[1], words[2], words[3]

    def all_captions(self) -> list[str]:
        return [
            self.caption(s, c, sh)
            for s in self.sizes
            for c in self.colors
            for sh in self.shapes
        ]

    def generate_captions(self, n: int, seed: int = 0) -> list[str]:
        """n distinct captions, sampled without replacement, deterministic per seed."""
        space = self.all_captions()
        if n > len(space):
            raise ValueError(f"requested {n} captions but the grammar has {len(space)}")
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(space), size=n, replace=False)
        return [space[i] for i in idx]

    def corpus(self, n: int, seed: int = 0, repeats: int = 1) -> list[CorpusEntry]:
        """Corpus of n distinct captions, each repeated `repeats` times."""
        captions = self.generate_captions(n, seed=seed)
        return [CorpusEntry(text=c) for c in captions for _ in range(repeats)]

    def encoder(self):
        """Raw text-encoder handle compatible with memory building and training."""

        def encode(text: str) -> np.ndarray:
            return toy_text_encoder(text, self)

        encode.dim = self.dim  # type: ignore[attr-defined]
        return encode

    def image_encoder(self, gap: GapSpec):
        def encode(text: str) -> np.ndarray:
            return toy_image_encoder(text, self, gap)

        encode.dim = self.dim  # type: ignore[attr-defined]
        return encode


def toy_text_encoder(text: str, world: ToyWorld) -> np.ndarray:
    """Raw (pre-normalization) embedding: sum of the caption's attribute vectors."""
    attrs = world.parse(text)
    result = np.zeros(world.dim)
    for word in attrs:
        result += world._vectors[word]
    return result


def _rotation_basis(dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    e1 = rng.standard_normal(dim)
    e1 /= np.linalg.norm(e1)
    y = rng.standard_normal(dim)
    e2 = y - (y @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return e1, e2


def rotate_in_plane(v: np.ndarray, e1: np.ndarray, e2: np.ndarray, angle: float) -> np.ndarray:
    """Orthogonal rotation of v by `angle` within the plane spanned by (e1, e2)."""
    c1, c2 = v @ e1, v @ e2
    return (
        v
        + (np.cos(angle) - 1.0) * (c1 * e1 + c2 * e2)
        + np.sin(angle) * (c1 * e2 - c2 * e1)
    )


def gap_geometry(dim: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The fixed (rotation plane e1, e2, offset direction) drawn for a gap seed."""
    rng = np.random.default_rng(seed)
    e1, e2 = _rotation_basis(dim, rng)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return e1, e2, direction


def toy_image_encoder(text: str, world: ToyWorld, gap: GapSpec) -> np.ndarray:
    """Unit-norm "image" view of a caption under the given gap.

    Pipeline: normalize the text embedding, rotate it by `rotation_angle` in a
    fixed seeded plane, add `offset_scale` times a fixed unit direction, add
    per-caption Gaussian noise, re-normalize.
    """
    emb, _ = normalize(toy_text_encoder(text, world))
    e1, e2, direction = gap_geometry(world.dim, gap.seed)
    rotated = rotate_in_plane(emb, e1, e2, gap.rotation_angle)
    shifted = rotated + gap.offset_scale * direction
    if gap.noise_sigma > 0:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence((gap.seed & 0xFFFFFFFF, zlib.crc32(text.encode("utf-8"))))
        )
        shifted = shifted + noise_rng.normal(0.0, gap.noise_sigma, size=world.dim)
    out, _ = normalize(shifted)
    return out


def gap_metrics(
    text_cloud: list[np.ndarray] | np.ndarray,
    other_cloud: list[np.ndarray] | np.ndarray,
) -> GapReport:
    """Centroid distance between two clouds plus mean cosine over aligned pairs."""
    a = np.asarray(text_cloud, dtype=np.float64)
    b = np.asarray(other_cloud, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("gap_metrics requires two nonempty 2-D clouds")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"clouds differ in dimension: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] != b.shape[0]:
        raise LengthMismatchError(
            f"paired cosine needs equal cloud sizes: {a.shape[0]} vs {b.shape[0]}"
        )
    centroid_distance = float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))
    paired = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    return GapReport(
        centroid_distance=centroid_distance,
        mean_paired_cosine=float(paired.mean()),
    )

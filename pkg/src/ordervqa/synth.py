"""Synthetic corpora with known ground truth, plus ground-truth-backed oracles.

The world is built so that every algorithm in the toolkit has a realizable
target: facial-image features evolve additively (image after step k = base
face + the cumulative effects of steps 1..k), each step's effect is a
deterministic function of its caption tokens, token effects share a common
"progress" direction so pair orientation is linearly separable, and
segment-level video features during a step carry that step's caption
embedding.  Temporal spans tile the video duration.

The oracles are built from annotations alone, so they work unchanged on real
annotation files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    N_FACE_REGIONS,
    StepAnnotation,
    TemporalSpan,
    VideoAnnotation,
    image_item_id,
    parse_image_item_id,
    segment_item_id,
)
from .io import FeatureStore

PROGRESS_WEIGHT = 0.5  # share of each token effect along the common direction


@dataclass(frozen=True)
class WorldConfig:
    n_videos: int = 100
    steps_range: tuple[int, int] = (5, 10)  # inclusive
    feature_dim: int = 64
    effect_magnitude: float = 1.0
    noise_magnitude: float = 0.1
    vocab_size: int = 50
    tokens_per_caption: tuple[int, int] = (3, 6)  # inclusive
    duration_range: tuple[float, float] = (60.0, 120.0)
    n_segments: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.effect_magnitude <= 0:
            raise ValueError("effect magnitude must be positive")
        if self.noise_magnitude < 0:
            raise ValueError("noise magnitude must be non-negative")
        if self.steps_range[0] < 1 or self.steps_range[0] > self.steps_range[1]:
            raise ValueError("bad steps range")
        if self.n_videos < 1 or self.feature_dim < 1 or self.vocab_size < 2:
            raise ValueError("bad world size")


@dataclass
class World:
    config: WorldConfig
    annotations: list[VideoAnnotation]
    features: FeatureStore
    token_effects: np.ndarray  # (vocab, dim), the per-token additive effects


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def gen_world(cfg: WorldConfig) -> World:
    """Generate annotations, features, and the token effect table; seed-deterministic."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dim = cfg.feature_dim

    progress = _unit(rng, dim)
    token_effects = np.empty((cfg.vocab_size, dim))
    for t in range(cfg.vocab_size):
        token_effects[t] = cfg.effect_magnitude * (
            PROGRESS_WEIGHT * progress + _unit(rng, dim)
        )

    store = FeatureStore(dim)
    annotations: list[VideoAnnotation] = []
    seen_captions: set[str] = set()
    lo_k, hi_k = cfg.steps_range
    lo_t, hi_t = cfg.tokens_per_caption
    for vi in range(cfg.n_videos):
        video_id = f"synth{vi:05d}"
        n_steps = int(rng.integers(lo_k, hi_k + 1))
        duration = float(rng.uniform(*cfg.duration_range))

        captions: list[str] = []
        token_ids: list[list[int]] = []
        for _ in range(n_steps):
            while True:
                toks = rng.integers(0, cfg.vocab_size, size=int(rng.integers(lo_t, hi_t + 1)))
                caption = " ".join(f"w{t:03d}" for t in toks)
                if caption not in seen_captions:
                    break
            seen_captions.add(caption)
            captions.append(caption)
            token_ids.append([int(t) for t in toks])

        steps = tuple(
            StepAnnotation(
                index=k + 1,
                caption=captions[k],
                span=TemporalSpan(
                    duration * k / n_steps,
                    # the quotient can exceed duration by one ulp at the last step
                    duration if k + 1 == n_steps else duration * (k + 1) / n_steps,
                ),
                areas=frozenset(t % N_FACE_REGIONS for t in token_ids[k]),
            )
            for k in range(n_steps)
        )
        annotations.append(VideoAnnotation(video_id, duration, steps))

        base = rng.normal(size=dim)
        face = base.copy()
        store.put(image_item_id(video_id, 0), face)
        for k in range(n_steps):
            face = face + token_effects[token_ids[k]].sum(axis=0)
            noisy = face + cfg.noise_magnitude * _unit(rng, dim)
            store.put(image_item_id(video_id, k + 1), noisy)

        # Segment features carry the caption embedding of the step they fall in.
        for t in range(cfg.n_segments):
            center = (t + 0.5) * duration / cfg.n_segments
            k = min(n_steps - 1, int(center * n_steps / duration))
            seg = token_effects[token_ids[k]].mean(axis=0)
            seg = seg + cfg.noise_magnitude * _unit(rng, dim)
            store.put(segment_item_id(video_id, t), seg)

    return World(cfg, annotations, store, token_effects)


def video_segments(store: FeatureStore, video_id: str, n_segments: int) -> np.ndarray:
    """Stack a video's segment features into an (n_segments, dim) array."""
    return np.stack([store.get(segment_item_id(video_id, t)) for t in range(n_segments)])


# ---------------------------------------------------------------------------
# Annotation-backed oracles


def _caption_index(annotations: Sequence[VideoAnnotation]) -> dict[str, tuple[str, int]]:
    """Map caption -> (video_id, step index).  Duplicate captions are rejected."""
    idx: dict[str, tuple[str, int]] = {}
    for a in annotations:
        for s in a.steps:
            if s.caption in idx:
                raise ValueError(f"duplicate caption across videos: {s.caption!r}")
            idx[s.caption] = (a.video_id, s.index)
    return idx


class OraclePairwiseComparator:
    """Ground-truth comparator: P(a earlier than b) in {0, 0.5, 1}.

    Items may be facial-image ids (step index parsed from the id) or step
    captions (looked up in the annotations).
    """

    def __init__(self, annotations: Sequence[VideoAnnotation]):
        self._captions = _caption_index(annotations)

    def _step(self, item: str) -> int:
        if item in self._captions:
            return self._captions[item][1]
        return parse_image_item_id(item)[1]

    def probability(self, a: str, b: str) -> float:
        sa, sb = self._step(a), self._step(b)
        if sa == sb:
            return 0.5
        return 1.0 if sa < sb else 0.0


class OracleCompositionScorer:
    """Ground-truth compositional scorer.

    Scores 1.0 when the candidate target is the end image of the last caption
    in the text, else 0.0.
    """

    def __init__(self, annotations: Sequence[VideoAnnotation]):
        self._captions = _caption_index(annotations)

    def score(self, source: str, captions: Sequence[str], target: str) -> float:
        if not captions:
            return 1.0 if target == source else 0.0
        video_id, step = self._captions[captions[-1]]
        return 1.0 if target == image_item_id(video_id, step) else 0.0


class OracleLocalizer:
    """Ground-truth localizer: returns the annotated span of a caption."""

    def __init__(self, annotations: Sequence[VideoAnnotation]):
        self._spans: dict[str, TemporalSpan] = {}
        for a in annotations:
            for s in a.steps:
                if s.caption in self._spans:
                    raise ValueError(f"duplicate caption across videos: {s.caption!r}")
                self._spans[s.caption] = s.span

    def localize(self, video_id: str, caption: str) -> tuple[TemporalSpan, float]:
        span = self._spans[caption]
        return span, 1.0

"""Text-aware image ordering via compositional retrieval.

A gated-residual composition model maps (source image feature, text) to a
modified feature that should be close, in cosine similarity, to the target
image taken after the described steps.  Ordering a shuffled image set then
proceeds greedily: anchor the first image with the pairwise comparator and
repeatedly retrieve the best (next image, caption prefix) pair; the final
answer is the candidate permutation with the lowest edit distance to the
predicted order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
import torch
from torch import nn

from .core import OrderingQuestion, Permutation5, VideoAnnotation, image_item_id
from .io import FeatureStore
from .metrics import levenshtein
from .pairwise import Comparator
from .text import RecurrentTextEncoder, Vocabulary


class CompositionScorer(Protocol):
    def score(self, source: str, captions: Sequence[str], target: str) -> float:
        """Higher when ``target`` matches ``source`` modified by the captions."""


@dataclass(frozen=True)
class CompositionTriplet:
    source_image: str
    text: str  # concatenation of one or more step captions, in order
    target_image: str
    video_id: str
    step_gap: int  # number of steps covered by the text


def build_triplets(
    annotation: VideoAnnotation, n_parts: int | None = None, seed: int = 0
) -> list[CompositionTriplet]:
    """Randomly split a video's steps into contiguous parts, one triplet each.

    Part p's source is the last image before the part (the pre-makeup face
    for part 1), its text the concatenated captions, its target the image at
    the part's last step.  Videos with fewer steps than parts yield [].
    """
    k = len(annotation.steps)
    if n_parts is None:
        n_parts = max(1, k // 2)
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if k < n_parts:
        return []
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(k - 1, size=n_parts - 1, replace=False)) + 1 if n_parts > 1 else []
    bounds = [0, *[int(c) for c in cuts], k]
    out = []
    for p in range(n_parts):
        lo, hi = bounds[p], bounds[p + 1]
        part = annotation.steps[lo:hi]
        out.append(
            CompositionTriplet(
                source_image=image_item_id(annotation.video_id, lo),
                text=" ".join(s.caption for s in part),
                target_image=image_item_id(annotation.video_id, hi),
                video_id=annotation.video_id,
                step_gap=hi - lo,
            )
        )
    return out


def build_triplet_dataset(
    annotations: Sequence[VideoAnnotation],
    features: FeatureStore | None = None,
    n_parts: int | None = None,
    seed: int = 0,
) -> list[CompositionTriplet]:
    out = []
    for ann in annotations:
        triplets = build_triplets(ann, n_parts, seed)
        if features is not None:
            triplets = [
                t
                for t in triplets
                if t.source_image in features and t.target_image in features
            ]
        out.extend(triplets)
    return out


# ---------------------------------------------------------------------------
# Model


class CompositionModel(nn.Module):
    """Gated-residual composition over stored image features.

    The gate and residual heads are zero-initialized, so an untrained model
    (and any model given empty text) passes the source feature through
    unchanged: target rankings then equal those of the raw source feature.
    """

    def __init__(
        self,
        features: FeatureStore,
        vocab: Vocabulary,
        text_hidden: int = 256,  # bidirectional, so encodings have width 2x
        embed_dim: int = 64,
    ):
        super().__init__()
        self.features = features
        self.vocab = vocab
        self.text_encoder = RecurrentTextEncoder(
            len(vocab), embed_dim, text_hidden, cell="lstm"
        )
        dim = features.dimension
        joint = dim + self.text_encoder.out_dim
        self.gate = nn.Linear(joint, dim)
        self.residual = nn.Linear(joint, dim)
        nn.init.zeros_(self.gate.weight)
        nn.init.zeros_(self.gate.bias)
        nn.init.zeros_(self.residual.weight)
        nn.init.zeros_(self.residual.bias)
        self.log_scale = nn.Parameter(torch.zeros(()))

    def _feats(self, items: Sequence[str]) -> torch.Tensor:
        return torch.as_tensor(
            np.stack([self.features.get(i) for i in items]), dtype=torch.float32
        )

    def compose(self, x: torch.Tensor, texts: Sequence[str]) -> torch.Tensor:
        token_ids = [self.vocab.encode(t) for t in texts]
        t = self.text_encoder.encode_mean(token_ids)
        h = torch.cat([x, t], dim=1)
        gate = 1.0 + torch.tanh(self.gate(h))
        return gate * x + self.residual(h)

    def similarities(self, modified: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        m = nn.functional.normalize(modified, dim=-1)
        t = nn.functional.normalize(targets, dim=-1)
        return torch.exp(self.log_scale) * m @ t.T

    @torch.no_grad()
    def score(self, source: str, captions: Sequence[str], target: str) -> float:
        was_training = self.training
        self.eval()
        try:
            x = self._feats([source])
            text = " ".join(captions).strip()
            modified = x if not text else self.compose(x, [text])
            return float(self.similarities(modified, self._feats([target]))[0, 0])
        finally:
            self.train(was_training)


def retrieval_scores(
    m: CompositionScorer, source: str, text: str, candidates: Sequence[str]
) -> list[float]:
    """One score per candidate target; higher means more likely."""
    captions = [text] if text.strip() else []
    return [m.score(source, captions, c) for c in candidates]


# ---------------------------------------------------------------------------
# Training and retrieval evaluation


@dataclass
class CompositionTrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 3e-3
    seed: int = 0


def train_composition(
    model: CompositionModel,
    triplets: Sequence[CompositionTriplet],
    config: CompositionTrainConfig,
) -> list[dict]:
    """In-batch softmax contrastive training; other targets act as negatives.

    Shuffling is done at video granularity, keeping each video's triplets
    adjacent, so batches contain same-video negatives (the hard ones for
    within-video retrieval) alongside cross-video negatives.
    """
    if config.batch_size < 2:
        raise ValueError("batch size must be >= 2")
    if not triplets:
        raise ValueError("empty triplet dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    by_video: dict[str, list[CompositionTriplet]] = {}
    for t in triplets:
        by_video.setdefault(t.video_id, []).append(t)
    video_ids = sorted(by_video)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = [t for i in rng.permutation(len(video_ids)) for t in by_video[video_ids[int(i)]]]
        model.train()
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            if len(batch) < 2:
                continue  # a singleton batch has no negatives
            x = model._feats([t.source_image for t in batch])
            targets = model._feats([t.target_image for t in batch])
            modified = model.compose(x, [t.text for t in batch])
            logits = model.similarities(modified, targets)
            loss = nn.functional.cross_entropy(logits, torch.arange(len(batch)))
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch offset {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        log.append({"epoch": epoch, "loss": total / max(1, count)})
    return log


def retrieval_ranks(
    scorer: CompositionScorer,
    triplets: Sequence[CompositionTriplet],
    candidates_by_video: Mapping[str, Sequence[str]],
) -> dict[str, list[int]]:
    """1-based rank of the true target per query, grouped by video.

    Candidates are the video's images minus the query's source.
    """
    ranks: dict[str, list[int]] = {}
    for t in triplets:
        cands = [c for c in candidates_by_video[t.video_id] if c != t.source_image]
        scores = [scorer.score(t.source_image, [t.text], c) for c in cands]
        order = sorted(range(len(cands)), key=lambda i: (-scores[i], i))
        rank = 1 + order.index(cands.index(t.target_image))
        ranks.setdefault(t.video_id, []).append(rank)
    return ranks


# ---------------------------------------------------------------------------
# Greedy sorting (text-aware ordering) and answer selection


def greedy_sort(
    images: Sequence[str],
    steps: Sequence[str],
    f_img: Comparator,
    f_tirg: CompositionScorer,
    start_caption: int = 2,
    bound: str = "feasible",
) -> list[str]:
    """Order shuffled images against the ordered caption parts.

    The first image is the one with the highest average pairwise-comparison
    probability of preceding the others.  Then, repeatedly, every remaining
    image is scored against every feasible caption prefix starting at the
    next unconsumed caption; the globally best (image, prefix end) pair is
    appended and the prefix consumed.  Caption consumption is monotone.

    ``start_caption`` is the 1-based index of the first caption available to
    the second image (2 when the first caption is deemed consumed by the
    anchor image).  ``bound="feasible"`` reserves one caption for each image
    not yet placed; ``bound="strict"`` additionally reserves one for the
    image being placed, which leaves the last image without captions and is
    only provided for comparison.
    """
    n, m = len(images), len(steps)
    if n < 1:
        raise ValueError("need at least one image")
    if len(set(images)) != n:
        raise ValueError("duplicate images")
    if n == 1:
        return [images[0]]
    if bound not in ("feasible", "strict"):
        raise ValueError(f"unknown bound {bound!r}")
    reserve = 1 if bound == "strict" else 0
    # Feasibility before any scoring: each image after the first consumes
    # at least one caption part.
    if m - start_caption + 1 < (n - 1) + reserve:
        raise ValueError(
            f"{m} caption parts starting at {start_caption} cannot cover {n} images"
        )

    avg = [
        float(np.mean([f_img.probability(i, j) for j in images if j != i]))
        for i in images
    ]
    first = int(np.argmax(avg))
    placed = [images[first]]
    remaining = [img for idx, img in enumerate(images) if idx != first]
    y = start_caption
    x = 1
    while remaining:
        j_max = m - (n - x - 1) - reserve
        best: tuple[float, int, int] | None = None  # (score, j, remaining position)
        for j in range(y, j_max + 1):
            captions = list(steps[y - 1 : j])
            for pos, img in enumerate(remaining):
                s = f_tirg.score(placed[-1], captions, img)
                if best is None or s > best[0]:
                    best = (s, j, pos)
        if best is None:
            raise ValueError("caption parts exhausted before placing all images")
        _, j, pos = best
        placed.append(remaining.pop(pos))
        y = j + 1
        x += 1
    return placed


def predicted_permutation(images: Sequence[str], predicted: Sequence[str]) -> Permutation5:
    """Express a predicted image order as a permutation of presentation indices."""
    index = {img: i for i, img in enumerate(images)}
    return Permutation5(tuple(index[img] for img in predicted))


def select_answer_by_edit_distance(predicted: Permutation5, q: OrderingQuestion) -> int:
    """Candidate with the lowest edit distance to the prediction; ties to lowest index."""
    distances = [levenshtein(predicted.order, c.order) for c in q.candidates]
    return int(np.argmin(distances))


def answer_question_greedy(
    q: OrderingQuestion,
    annotation: VideoAnnotation,
    f_img: Comparator,
    f_tirg: CompositionScorer,
) -> int:
    """Full text-aware strategy for one image-ordering question."""
    from .core import parse_image_item_id

    step_idx = {s.index: s for s in annotation.steps}
    indices = sorted(parse_image_item_id(item)[1] for item in q.items)
    captions = [step_idx[i].caption for i in indices]
    order = greedy_sort(list(q.items), captions, f_img, f_tirg)
    return select_answer_by_edit_distance(predicted_permutation(q.items, order), q)

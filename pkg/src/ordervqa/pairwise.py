"""Siamese pairwise-comparison baseline and its ordering strategy.

One model family serves both instantiations: items are either facial-image
ids backed by stored features, or step captions encoded by a recurrent text
encoder.  Both branches of the twin share one encoder; the classifier is an
MLP over the concatenation of the two encodings with a logistic output.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import nn

from .core import OrderingQuestion, Permutation5, VideoAnnotation, image_item_id
from .io import FeatureStore
from .text import RecurrentTextEncoder, Vocabulary


class Comparator(Protocol):
    def probability(self, a: str, b: str) -> float:
        """P(item a occurs earlier than item b), in [0, 1]."""


@dataclass(frozen=True)
class PairSample:
    item_a: str
    item_b: str
    label: int  # 1 iff item_a occurs earlier
    step_gap: int
    video_id: str


def build_pair_dataset(
    annotations: Sequence[VideoAnnotation],
    features: FeatureStore | None,
    seed: int,
    item_kind: str = "images",
    max_pairs_per_video: int | None = None,
) -> list[PairSample]:
    """Pairs of items from distinct steps of the same video, exactly balanced.

    Every sampled unordered pair is emitted in both orientations, so the
    label counts are equal by construction.  With ``item_kind="images"``
    items are step-end image ids (skipped if absent from ``features``);
    with ``"captions"`` items are the step captions.
    """
    if item_kind not in ("images", "captions"):
        raise ValueError(f"unknown item kind {item_kind!r}")
    rng = np.random.default_rng(seed)
    out: list[PairSample] = []
    for ann in annotations:
        if item_kind == "images":
            items = [
                (s.index, image_item_id(ann.video_id, s.index))
                for s in ann.steps
                if features is None or image_item_id(ann.video_id, s.index) in features
            ]
        else:
            items = [(s.index, s.caption) for s in ann.steps]
        if len(items) < 2:
            continue
        pairs = list(itertools.combinations(range(len(items)), 2))
        if max_pairs_per_video is not None and len(pairs) > max_pairs_per_video:
            keep = rng.choice(len(pairs), size=max_pairs_per_video, replace=False)
            pairs = [pairs[int(i)] for i in np.sort(keep)]
        for i, j in pairs:
            (ki, a), (kj, b) = items[i], items[j]
            gap = abs(kj - ki)
            out.append(PairSample(a, b, 1, gap, ann.video_id))
            out.append(PairSample(b, a, 0, gap, ann.video_id))
    perm = rng.permutation(len(out))
    return [out[int(i)] for i in perm]


# ---------------------------------------------------------------------------
# Model


class StoredFeatureEncoder(nn.Module):
    """Identity encoder over precomputed features; not trainable."""

    def __init__(self, store: FeatureStore):
        super().__init__()
        self.store = store
        self.out_dim = store.dimension

    def encode(self, items: Sequence[str]) -> torch.Tensor:
        return torch.as_tensor(
            np.stack([self.store.get(i) for i in items]), dtype=torch.float32
        )


class CaptionEncoder(nn.Module):
    """Trainable caption branch: embedding + bidirectional GRU, mean-pooled."""

    def __init__(self, vocab: Vocabulary, embed_dim: int = 64, hidden: int = 64):
        super().__init__()
        self.vocab = vocab
        self.rnn = RecurrentTextEncoder(len(vocab), embed_dim, hidden, cell="gru")
        self.out_dim = self.rnn.out_dim

    def encode(self, items: Sequence[str]) -> torch.Tensor:
        return self.rnn.encode_mean([self.vocab.encode(c) for c in items])


class SiameseComparator(nn.Module):
    """Twin encoder + MLP binary classifier returning P(a earlier than b)."""

    def __init__(self, encoder: nn.Module, hidden: tuple[int, ...] = (256, 64)):
        super().__init__()
        self.encoder = encoder
        layers: list[nn.Module] = []
        width = 2 * encoder.out_dim
        for h in hidden:
            layers += [nn.Linear(width, h), nn.ReLU()]
            width = h
        layers.append(nn.Linear(width, 1))
        self.classifier = nn.Sequential(*layers)

    def logits(self, a_items: Sequence[str], b_items: Sequence[str]) -> torch.Tensor:
        ea = self.encoder.encode(a_items)
        eb = self.encoder.encode(b_items)
        return self.classifier(torch.cat([ea, eb], dim=1)).squeeze(-1)

    @torch.no_grad()
    def probability(self, a: str, b: str) -> float:
        was_training = self.training
        self.eval()
        try:
            return float(torch.sigmoid(self.logits([a], [b]))[0])
        finally:
            self.train(was_training)

    @torch.no_grad()
    def probabilities(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            a_items = [p[0] for p in pairs]
            b_items = [p[1] for p in pairs]
            return torch.sigmoid(self.logits(a_items, b_items)).numpy()
        finally:
            self.train(was_training)


def pairwise_probability(c: Comparator, a: str, b: str) -> float:
    return c.probability(a, b)


# ---------------------------------------------------------------------------
# Candidate scoring and answer selection


def candidate_score(c: Comparator, perm: Permutation5, items: Sequence[str]) -> float:
    """Mean pairwise probability over the C(5,2) ordered pairs implied by perm."""
    if len(items) != 5:
        raise ValueError("exactly 5 items expected")
    ordered = perm.apply(list(items))
    probs = [
        c.probability(ordered[u], ordered[v])
        for u in range(5)
        for v in range(u + 1, 5)
    ]
    return float(np.mean(probs))


def select_answer_pairwise(c: Comparator, q: OrderingQuestion) -> int:
    """Argmax of candidate_score over the 4 candidates; ties to the lowest index."""
    scores = [candidate_score(c, cand, q.items) for cand in q.candidates]
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# Training, curriculum, evaluation


@dataclass
class PairwiseTrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.1
    curriculum_phases: int = 1  # 1 = no curriculum
    hidden: tuple[int, ...] = (256, 64)


def curriculum_schedule(dataset: Sequence[PairSample], n_phases: int) -> list[list[PairSample]]:
    """Cumulative easy-to-hard phases by descending step-gap quantiles.

    Phase k's pool contains every sample whose gap is at or above the
    ``1 - k/n_phases`` quantile, so later phases are supersets of earlier
    ones and the final phase is the whole dataset.
    """
    if n_phases < 1:
        raise ValueError("n_phases must be >= 1")
    gaps = np.array([s.step_gap for s in dataset], dtype=float)
    pools = []
    for k in range(1, n_phases + 1):
        thr = np.quantile(gaps, 1.0 - k / n_phases) if len(gaps) else 0.0
        pools.append([s for s in dataset if s.step_gap >= thr])
    return pools


def _split(dataset: Sequence[PairSample], val_fraction: float, rng: np.random.Generator):
    idx = rng.permutation(len(dataset))
    n_val = int(round(val_fraction * len(dataset)))
    val = [dataset[int(i)] for i in idx[:n_val]]
    train = [dataset[int(i)] for i in idx[n_val:]]
    return train, val


def classification_results(
    model: Comparator, samples: Sequence[PairSample]
) -> list[tuple[int, bool]]:
    """(step_gap, correct) per evaluated pair."""
    if isinstance(model, SiameseComparator):
        probs = model.probabilities([(s.item_a, s.item_b) for s in samples])
    else:
        probs = np.array([model.probability(s.item_a, s.item_b) for s in samples])
    return [(s.step_gap, (p > 0.5) == bool(s.label)) for s, p in zip(samples, probs)]


def classification_accuracy(model: Comparator, samples: Sequence[PairSample]) -> float:
    results = classification_results(model, samples)
    return sum(ok for _, ok in results) / len(results)


def stepgap_accuracy(results: Sequence[tuple[int, bool]], bucket_from: int = 5) -> dict[int, float]:
    """Accuracy grouped by step gap; gaps >= bucket_from share one bucket."""
    grouped: dict[int, list[bool]] = {}
    for gap, ok in results:
        grouped.setdefault(min(gap, bucket_from), []).append(ok)
    return {g: sum(oks) / len(oks) for g, oks in sorted(grouped.items())}


def train_pairwise(
    model: SiameseComparator,
    dataset: Sequence[PairSample],
    config: PairwiseTrainConfig,
) -> list[dict]:
    """Train with binary cross-entropy; returns the per-epoch training log.

    With ``curriculum_phases > 1`` the epochs are spread evenly over the
    cumulative easy-to-hard pools from :func:`curriculum_schedule`.
    """
    if not dataset:
        raise ValueError("empty pair dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    train_set, val_set = _split(dataset, config.val_fraction, rng)
    pools = curriculum_schedule(train_set, config.curriculum_phases)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    log: list[dict] = []
    epochs_per_phase = max(1, config.epochs // config.curriculum_phases)
    epoch = 0
    for phase, pool in enumerate(pools, start=1):
        last = phase == len(pools)
        n_epochs = config.epochs - epoch if last else epochs_per_phase
        for _ in range(n_epochs):
            epoch += 1
            order = rng.permutation(len(pool))
            model.train()
            total, count = 0.0, 0
            for start in range(0, len(pool), config.batch_size):
                batch = [pool[int(i)] for i in order[start : start + config.batch_size]]
                labels = torch.tensor([float(s.label) for s in batch])
                logits = model.logits([s.item_a for s in batch], [s.item_b for s in batch])
                loss = loss_fn(logits, labels)
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, batch offset {start}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(batch)
                count += len(batch)
            entry = {"epoch": epoch, "phase": phase, "loss": total / max(1, count)}
            if val_set:
                entry["val_accuracy"] = classification_accuracy(model, val_set)
            log.append(entry)
    return log

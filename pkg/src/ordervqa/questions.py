"""Deterministic construction of the two multi-choice ordering question types.

Each question draws five distinct steps from one eligible video (five or more
steps), shuffles their presentation, and offers four candidate permutations:
the one restoring chronological order plus three random shuffles, re-drawn
until all four are pairwise distinct.  Randomness is derived per video from
the master seed so generation order never affects the output.
"""

from __future__ import annotations

import hashlib
import math
from typing import Iterable, Sequence

import numpy as np

from .core import (
    IMAGE_ORDERING,
    OrderingQuestion,
    Permutation5,
    STEP_ORDERING,
    VideoAnnotation,
    image_item_id,
)

MIN_STEPS = 5  # both tasks present five items


class GenerationError(RuntimeError):
    pass


def _video_rng(seed: int, video_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{video_id}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _draw_candidates(rng: np.random.Generator, correct: tuple[int, ...]):
    """Three distinct random negatives plus the correct answer, in shuffled order."""
    negatives: list[tuple[int, ...]] = []
    while len(negatives) < 3:
        draw = tuple(int(x) for x in rng.permutation(5))
        if draw != correct and draw not in negatives:
            negatives.append(draw)
    slots = [correct, *negatives]
    placement = rng.permutation(4)
    candidates = [None] * 4
    for src, dst in enumerate(placement):
        candidates[dst] = Permutation5(slots[src])
    return tuple(candidates), int(placement[0])


def _gen_question(
    rng: np.random.Generator, ann: VideoAnnotation, task: str, qid: str
) -> OrderingQuestion:
    chosen = np.sort(rng.choice(len(ann.steps), size=5, replace=False))
    steps = [ann.steps[int(i)] for i in chosen]  # chronological
    if task == IMAGE_ORDERING:
        chron_items = [image_item_id(ann.video_id, s.index) for s in steps]
    else:
        chron_items = [s.caption for s in steps]
    shuffle = rng.permutation(5)
    items = tuple(chron_items[int(i)] for i in shuffle)
    # correct candidate restores chronology: items[correct[k]] == chron_items[k]
    correct = tuple(int(x) for x in np.argsort(shuffle))
    candidates, answer = _draw_candidates(rng, correct)
    return OrderingQuestion(qid, task, ann.video_id, items, candidates, answer)


def _generate(
    annotations: Sequence[VideoAnnotation],
    task: str,
    n_questions: int,
    seed: int,
    excluded_video_ids: Iterable[str] = (),
    per_video_cap: int | None = None,
) -> list[OrderingQuestion]:
    excluded = set(excluded_video_ids)
    eligible = sorted(
        (a for a in annotations if len(a.steps) >= MIN_STEPS and a.video_id not in excluded),
        key=lambda a: a.video_id,
    )
    if not eligible:
        raise GenerationError("no video with at least five steps is available")
    cap = per_video_cap if per_video_cap is not None else math.ceil(n_questions / len(eligible))
    rngs = {a.video_id: _video_rng(seed, a.video_id) for a in eligible}
    questions: list[OrderingQuestion] = []
    for round_idx in range(cap):
        for ann in eligible:
            if len(questions) >= n_questions:
                return questions
            qid = f"{task}_{ann.video_id}_{round_idx:03d}"
            questions.append(_gen_question(rngs[ann.video_id], ann, task, qid))
    return questions


def gen_image_ordering(
    annotations: Sequence[VideoAnnotation],
    n_questions: int,
    seed: int,
    per_video_cap: int | None = None,
) -> list[OrderingQuestion]:
    """Facial-image ordering questions; items are step-end facial image ids."""
    return _generate(annotations, IMAGE_ORDERING, n_questions, seed, (), per_video_cap)


def gen_step_ordering(
    annotations: Sequence[VideoAnnotation],
    n_questions: int,
    seed: int,
    excluded_video_ids: Iterable[str] = (),
    per_video_cap: int | None = None,
) -> list[OrderingQuestion]:
    """Step ordering questions; items are step captions.

    ``excluded_video_ids`` keeps the pool disjoint from another task's videos.
    """
    return _generate(
        annotations, STEP_ORDERING, n_questions, seed, excluded_video_ids, per_video_cap
    )


def answer_key(questions: Iterable[OrderingQuestion]) -> dict[str, int]:
    key = {}
    for q in questions:
        if q.answer_index is None:
            raise ValueError(f"question {q.question_id} has no answer")
        key[q.question_id] = q.answer_index
    return key


def strip_answers(questions: Iterable[OrderingQuestion]) -> list[OrderingQuestion]:
    return [
        OrderingQuestion(q.question_id, q.task, q.video_id, q.items, q.candidates, None)
        for q in questions
    ]

"""Domain types shared across the toolkit.

All types are plain frozen dataclasses and are immutable after construction,
so they can be shared freely between threads.  Construction is deliberately
permissive for annotation types (malformed annotations must be representable
so that :func:`validate_annotation` can report on them); question types
enforce their invariants eagerly because the toolkit itself produces them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

N_FACE_REGIONS = 24

IMAGE_ORDERING = "image_ordering"
STEP_ORDERING = "step_ordering"
TASKS = (IMAGE_ORDERING, STEP_ORDERING)


@dataclass(frozen=True)
class TemporalSpan:
    """Closed time interval in seconds."""

    start_s: float
    end_s: float

    def is_valid(self) -> bool:
        return (
            math.isfinite(self.start_s)
            and math.isfinite(self.end_s)
            and self.start_s >= 0.0
            and self.start_s < self.end_s
        )

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def center(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


@dataclass(frozen=True)
class FacialArea:
    """One of the 24 categorical face regions, with an optional display label."""

    region_id: int
    label: str = ""

    def is_valid(self) -> bool:
        return 0 <= self.region_id < N_FACE_REGIONS


@dataclass(frozen=True)
class StepAnnotation:
    index: int  # 1-based ordinal within the video
    caption: str
    span: TemporalSpan
    areas: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class VideoAnnotation:
    video_id: str
    duration_s: float
    steps: tuple[StepAnnotation, ...]


def validate_annotation(a: VideoAnnotation) -> list[str]:
    """Return a list of invariant violations; empty iff the annotation is well formed.

    This is a reporting operation: it never raises on bad content.
    """
    violations: list[str] = []
    if not a.video_id:
        violations.append("empty video_id")
    if not (math.isfinite(a.duration_s) and a.duration_s > 0):
        violations.append("duration_s must be finite and positive")
    prev_start = -math.inf
    for pos, step in enumerate(a.steps, start=1):
        where = f"step {step.index} (position {pos})"
        if step.index != pos:
            violations.append(f"non-contiguous index at position {pos}")
        if not step.caption:
            violations.append(f"{where}: empty caption")
        if not (math.isfinite(step.span.start_s) and math.isfinite(step.span.end_s)):
            violations.append(f"{where}: non-finite span")
        elif step.span.start_s >= step.span.end_s:
            violations.append(f"{where}: start >= end")
        elif step.span.start_s < 0 or step.span.end_s > a.duration_s:
            violations.append(f"{where}: span outside [0, duration]")
        if step.span.start_s < prev_start:
            violations.append(f"{where}: start time decreases")
        prev_start = step.span.start_s
        for area in step.areas:
            if not (0 <= area < N_FACE_REGIONS):
                violations.append(f"{where}: facial area {area} out of range")
    return violations


@dataclass(frozen=True)
class Permutation5:
    """A permutation of {0,1,2,3,4}; ``order[k]`` is the presentation index placed k-th."""

    order: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.order) != [0, 1, 2, 3, 4]:
            raise ValueError(f"not a permutation of 0..4: {self.order!r}")

    def apply(self, items: list) -> list:
        """Reorder 5 presented items into the order this permutation encodes."""
        return [items[i] for i in self.order]

    def reversed(self) -> "Permutation5":
        return Permutation5(tuple(reversed(self.order)))


@dataclass(frozen=True)
class OrderingQuestion:
    question_id: str
    task: str
    video_id: str
    items: tuple[str, ...]  # 5 item references in presentation order
    candidates: tuple[Permutation5, ...]  # 4 candidate answers
    answer_index: int | None = None  # withheld for test sets

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if len(self.items) != 5:
            raise ValueError("a question has exactly 5 items")
        if len(self.candidates) != 4:
            raise ValueError("a question has exactly 4 candidates")
        if len({c.order for c in self.candidates}) != 4:
            raise ValueError("candidates must be pairwise distinct")
        if self.answer_index is not None and not 0 <= self.answer_index <= 3:
            raise ValueError("answer_index out of range [0, 3]")


def image_item_id(video_id: str, step_index: int) -> str:
    """Canonical item id of the facial image taken at the end of a step.

    Step index 0 denotes the pre-makeup face.
    """
    return f"{video_id}#s{step_index}"


def parse_image_item_id(item_id: str) -> tuple[str, int]:
    video_id, _, tail = item_id.rpartition("#s")
    if not video_id or not tail.isdigit():
        raise ValueError(f"not an image item id: {item_id!r}")
    return video_id, int(tail)


def segment_item_id(video_id: str, segment: int) -> str:
    """Canonical item id of a segment-level video feature."""
    return f"{video_id}#v{segment}"

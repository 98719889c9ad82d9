"""Byte-exact file formats and the frame sampling plan.

Formats:

* annotations (UTF-8 JSON): ``{"videos": [...]}``
* questions (UTF-8 JSON): ``{"task": ..., "questions": [...]}``
* predictions / answer keys (UTF-8 JSON): ``{"qid": choice, ...}``
* feature store (binary): magic ``OVQF``, u32-LE dimension, u32-LE count,
  then per record: u16-LE id length, UTF-8 id bytes, ``dimension`` float32-LE.
* model checkpoints (binary): magic ``OVQC``, u32-LE header length, UTF-8 JSON
  header (model type, config echo, training log, tensor names/shapes), then
  the tensors as float32-LE in header order.

All writers are deterministic: identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import (
    FacialArea,
    OrderingQuestion,
    Permutation5,
    StepAnnotation,
    TASKS,
    TemporalSpan,
    VideoAnnotation,
    validate_annotation,
)

FEATURE_MAGIC = b"OVQF"
CHECKPOINT_MAGIC = b"OVQC"

FRAMES_PER_CLIP = 10
SHORT_CLIP_SECONDS = 10.0  # below this the frame gap is 1 instead of 5
LONG_CLIP_GAP = 5


class ParseError(ValueError):
    """Raised when an input file does not match its schema."""


@dataclass(frozen=True)
class FrameSamplePlan:
    """Frame numbers to extract at the end of one step's clip."""

    video_id: str
    step_index: int
    frame_indices: tuple[int, ...]
    warning: str | None = None


def plan_frames(
    span: TemporalSpan, fps: float, video_id: str = "", step_index: int = 0
) -> FrameSamplePlan:
    """Plan the 10 end-of-clip frames for one step.

    The last frame is ``floor(end_s * fps)``.  Clips shorter than 10 s walk
    backwards one frame at a time; longer clips use a gap of 5 frames.
    Indices never go below the clip's first frame; duplicates created by
    clamping are retained and flagged in ``warning``.
    """
    if not (math.isfinite(fps) and fps > 0):
        raise ValueError(f"fps must be finite and positive, got {fps}")
    if not span.is_valid():
        raise ValueError(f"invalid span ({span.start_s}, {span.end_s})")
    last = math.floor(span.end_s * fps)
    first = max(0, math.floor(span.start_s * fps))
    gap = 1 if span.duration < SHORT_CLIP_SECONDS else LONG_CLIP_GAP
    indices = tuple(max(first, last - i * gap) for i in range(FRAMES_PER_CLIP))
    warning = None
    if len(set(indices)) != len(indices):
        warning = "clamping at the clip start produced duplicate frame indices"
    return FrameSamplePlan(video_id, step_index, indices, warning)


class FeatureStore:
    """In-memory map from item id to a fixed-dimension float32 vector."""

    def __init__(self, dimension: int):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = int(dimension)
        self.entries: dict[str, np.ndarray] = {}

    def put(self, item_id: str, values) -> None:
        vec = np.asarray(values, dtype=np.float32)
        if vec.shape != (self.dimension,):
            raise ValueError(
                f"vector for {item_id!r} has shape {vec.shape}, "
                f"expected ({self.dimension},)"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"vector for {item_id!r} has non-finite entries")
        self.entries[item_id] = vec

    def get(self, item_id: str) -> np.ndarray:
        try:
            return self.entries[item_id]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# JSON helpers


def _load_json(path) -> object:
    data = Path(path).read_bytes()
    try:
        return json.loads(data.decode("utf-8"))
    except json.JSONDecodeError as e:
        # e.pos is a character offset; the prefix is valid UTF-8 so the byte
        # offset is the encoded length of everything before it.
        offset = len(data.decode("utf-8", errors="replace")[: e.pos].encode("utf-8"))
        raise ParseError(f"{path}: {e.msg} at byte offset {offset}") from None


def _dump_json(path, obj) -> None:
    text = json.dumps(obj, indent=1, sort_keys=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _require(mapping: Mapping, key: str, context: str):
    if not isinstance(mapping, Mapping) or key not in mapping:
        raise ParseError(f"{context}: missing field {key!r}")
    return mapping[key]


# ---------------------------------------------------------------------------
# Annotations


def write_annotations(path, annotations: Iterable[VideoAnnotation]) -> None:
    doc = {
        "videos": [
            {
                "video_id": a.video_id,
                "duration_s": a.duration_s,
                "steps": [
                    {
                        "index": s.index,
                        "caption": s.caption,
                        "start_s": s.span.start_s,
                        "end_s": s.span.end_s,
                        "areas": sorted(s.areas),
                    }
                    for s in a.steps
                ],
            }
            for a in annotations
        ]
    }
    _dump_json(path, doc)


def read_annotations(path, strict: bool = False) -> list[VideoAnnotation]:
    """Read an annotations file.

    Validation violations are collected per video; they are fatal only in
    strict mode.
    """
    doc = _load_json(path)
    videos = _require(doc, "videos", str(path))
    out: list[VideoAnnotation] = []
    problems: list[str] = []
    for vi, v in enumerate(videos):
        ctx = f"{path}: videos[{vi}]"
        steps = []
        for si, s in enumerate(_require(v, "steps", ctx)):
            sctx = f"{ctx}.steps[{si}]"
            steps.append(
                StepAnnotation(
                    index=int(_require(s, "index", sctx)),
                    caption=str(_require(s, "caption", sctx)),
                    span=TemporalSpan(
                        float(_require(s, "start_s", sctx)),
                        float(_require(s, "end_s", sctx)),
                    ),
                    areas=frozenset(int(x) for x in s.get("areas", [])),
                )
            )
        ann = VideoAnnotation(
            video_id=str(_require(v, "video_id", ctx)),
            duration_s=float(_require(v, "duration_s", ctx)),
            steps=tuple(steps),
        )
        problems.extend(f"{ann.video_id}: {p}" for p in validate_annotation(ann))
        out.append(ann)
    if strict and problems:
        raise ParseError(f"{path}: invalid annotations: " + "; ".join(problems))
    return out


# ---------------------------------------------------------------------------
# Questions, predictions, answer keys


def write_questions(path, task: str, questions: Iterable[OrderingQuestion]) -> None:
    qs = list(questions)
    for q in qs:
        if q.task != task:
            raise ValueError(f"question {q.question_id} has task {q.task}, file is {task}")
    doc = {
        "task": task,
        "questions": [
            {
                "qid": q.question_id,
                "video_id": q.video_id,
                "items": list(q.items),
                "candidates": [list(c.order) for c in q.candidates],
                **({} if q.answer_index is None else {"answer": q.answer_index}),
            }
            for q in qs
        ],
    }
    _dump_json(path, doc)


def read_questions(path) -> tuple[str, list[OrderingQuestion]]:
    doc = _load_json(path)
    task = _require(doc, "task", str(path))
    if task not in TASKS:
        raise ParseError(f"{path}: unknown task {task!r}")
    out: list[OrderingQuestion] = []
    seen: set[str] = set()
    for qi, q in enumerate(_require(doc, "questions", str(path))):
        ctx = f"{path}: questions[{qi}]"
        qid = str(_require(q, "qid", ctx))
        if qid in seen:
            raise ParseError(f"{ctx}: duplicate question id {qid!r}")
        seen.add(qid)
        answer = q.get("answer")
        try:
            out.append(
                OrderingQuestion(
                    question_id=qid,
                    task=task,
                    video_id=str(_require(q, "video_id", ctx)),
                    items=tuple(str(x) for x in _require(q, "items", ctx)),
                    candidates=tuple(
                        Permutation5(tuple(int(x) for x in c))
                        for c in _require(q, "candidates", ctx)
                    ),
                    answer_index=None if answer is None else int(answer),
                )
            )
        except ValueError as e:
            raise ParseError(f"{ctx}: {e}") from None
    return task, out


def write_predictions(path, predictions: Mapping[str, int]) -> None:
    for qid, choice in predictions.items():
        if not 0 <= int(choice) <= 3:
            raise ValueError(f"choice for {qid!r} out of range [0, 3]: {choice}")
    _dump_json(path, {qid: int(c) for qid, c in sorted(predictions.items())})


def read_predictions(path) -> dict[str, int]:
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: predictions file must be a JSON object")
    out: dict[str, int] = {}
    for qid, choice in doc.items():
        if not isinstance(choice, int) or not 0 <= choice <= 3:
            raise ParseError(f"{path}: choice for {qid!r} out of range [0, 3]: {choice!r}")
        out[qid] = choice
    return out


# Answer keys use the predictions schema (qid -> correct choice).
write_answer_key = write_predictions
read_answer_key = read_predictions


# ---------------------------------------------------------------------------
# Feature store (binary)


def write_features(path, store: FeatureStore) -> None:
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", store.dimension, len(store.entries)))
        for item_id in sorted(store.entries):
            raw = item_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"item id too long: {item_id!r}")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(store.entries[item_id].astype("<f4").tobytes())


def read_features(path) -> FeatureStore:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise ParseError(f"{path}: bad magic at byte offset 0")
    if len(data) < 12:
        raise ParseError(f"{path}: truncated header at byte offset {len(data)}")
    dim, count = struct.unpack_from("<II", data, 4)
    store = FeatureStore(dim)
    off = 12
    for _ in range(count):
        if off + 2 > len(data):
            raise ParseError(f"{path}: truncated record at byte offset {off}")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        item_id = data[off : off + id_len].decode("utf-8")
        off += id_len
        end = off + 4 * dim
        if end > len(data):
            raise ParseError(f"{path}: truncated vector at byte offset {off}")
        vec = np.frombuffer(data[off:end], dtype="<f4").copy()
        if item_id in store:
            raise ParseError(f"{path}: duplicate item id {item_id!r}")
        store.entries[item_id] = vec
        off = end
    if off != len(data):
        raise ParseError(f"{path}: trailing garbage at byte offset {off}")
    return store


# ---------------------------------------------------------------------------
# Checkpoints (shared container for every learned model)


def save_checkpoint(
    path,
    model_type: str,
    config: Mapping,
    tensors: Mapping[str, np.ndarray],
    log: list | None = None,
) -> None:
    names = sorted(tensors)
    header = {
        "model_type": model_type,
        "config": dict(config),
        "log": log or [],
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray], list]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic at byte offset 0")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    off = 8 + hlen
    tensors: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = off + 4 * n
        if end > len(data):
            raise ParseError(f"{path}: truncated tensor at byte offset {off}")
        tensors[spec["name"]] = np.frombuffer(data[off:end], dtype="<f4").reshape(shape).copy()
        off = end
    if off != len(data):
        raise ParseError(f"{path}: trailing garbage at byte offset {off}")
    return header["model_type"], header["config"], tensors, header["log"]

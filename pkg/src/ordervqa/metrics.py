"""Evaluation metrics and report assembly.

Everything here is a pure function over plain data, so these double as
independent cross-checks for the model modules.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .core import TemporalSpan


def tiou(a: TemporalSpan, b: TemporalSpan) -> float:
    """Temporal intersection-over-union of two spans; 0 when disjoint."""
    inter = min(a.end_s, b.end_s) - max(a.start_s, b.start_s)
    if inter <= 0:
        return 0.0
    union = max(a.end_s, b.end_s) - min(a.start_s, b.start_s)
    return inter / union


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance (insert/delete/substitute) between two sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, xa in enumerate(a, start=1):
        cur = [i]
        for j, xb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (xa != xb)))
        prev = cur
    return prev[len(b)]


def multi_choice_accuracy(predictions: Mapping[str, int], key: Mapping[str, int]) -> float:
    """Fraction of keyed questions answered correctly.

    The prediction set must cover the key exactly.
    """
    missing = sorted(set(key) - set(predictions))
    if missing:
        raise ValueError(f"missing prediction for qid {missing[0]!r}")
    extra = sorted(set(predictions) - set(key))
    if extra:
        raise ValueError(f"prediction for unknown qid {extra[0]!r}")
    if not key:
        raise ValueError("empty answer key")
    return sum(predictions[q] == key[q] for q in key) / len(key)


def recall_at_k_retrieval(ranks_by_video: Mapping[str, Sequence[int]], k: int) -> float:
    """Per-video retrieval R@K, averaged over videos with equal weight.

    ``ranks_by_video`` maps a video id to the 1-based rank of the true target
    for each of its queries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    per_video = []
    for vid, ranks in ranks_by_video.items():
        if not ranks:
            raise ValueError(f"video {vid!r} has no queries")
        per_video.append(sum(r <= k for r in ranks) / len(ranks))
    if not per_video:
        raise ValueError("no videos")
    return sum(per_video) / len(per_video)


def recall_at_k_tiou(
    localizations: Mapping[str, Sequence[tuple[TemporalSpan, float]]],
    groundtruths: Mapping[str, TemporalSpan],
    k: int,
    m: float,
) -> float:
    """Fraction of queries whose top-k predictions contain a span with tIoU >= m.

    Predictions are (span, score) pairs; the top k are taken by score,
    descending, with input order breaking ties.
    """
    missing = sorted(set(groundtruths) - set(localizations))
    if missing:
        raise ValueError(f"no localization for query {missing[0]!r}")
    if not groundtruths:
        raise ValueError("no queries")
    hits = 0
    for qid, gt in groundtruths.items():
        preds = localizations[qid]
        if k > len(preds):
            raise ValueError(f"k={k} exceeds {len(preds)} predictions for {qid!r}")
        top = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))[:k]
        hits += any(tiou(preds[i][0], gt) >= m for i in top)
    return hits / len(groundtruths)


def mean_iou(
    localizations: Mapping[str, Sequence[tuple[TemporalSpan, float]]],
    groundtruths: Mapping[str, TemporalSpan],
) -> float:
    """Mean tIoU of the top-1 prediction over all queries."""
    missing = sorted(set(groundtruths) - set(localizations))
    if missing:
        raise ValueError(f"no localization for query {missing[0]!r}")
    if not groundtruths:
        raise ValueError("no queries")
    total = 0.0
    for qid, gt in groundtruths.items():
        preds = localizations[qid]
        if not preds:
            raise ValueError(f"no predictions for {qid!r}")
        best = min(range(len(preds)), key=lambda i: (-preds[i][1], i))
        total += tiou(preds[best][0], gt)
    return total / len(groundtruths)


def make_report(
    task: str,
    n: int,
    accuracy: float,
    per_gap: Mapping[int, float] | None = None,
    recall: Mapping[str, float] | None = None,
) -> dict:
    """Assemble the report JSON: 2-decimal percentage display, full-precision raw."""
    raw: dict = {"accuracy": accuracy}
    report: dict = {"task": task, "n": n, "accuracy": round(100.0 * accuracy, 2)}
    if per_gap is not None:
        report["per_gap"] = {str(g): round(100.0 * a, 2) for g, a in sorted(per_gap.items())}
        raw["per_gap"] = {str(g): a for g, a in sorted(per_gap.items())}
    if recall is not None:
        report["recall"] = {name: round(100.0 * v, 2) for name, v in sorted(recall.items())}
        raw["recall"] = dict(sorted(recall.items()))
    report["raw"] = raw
    return report

"""Toolkit for fine-grained ordering VQA: question generation, baselines, scoring."""

from .core import (
    FacialArea,
    OrderingQuestion,
    Permutation5,
    StepAnnotation,
    TemporalSpan,
    VideoAnnotation,
    validate_annotation,
)

__all__ = [
    "FacialArea",
    "OrderingQuestion",
    "Permutation5",
    "StepAnnotation",
    "TemporalSpan",
    "VideoAnnotation",
    "validate_annotation",
]

__version__ = "0.1.0"

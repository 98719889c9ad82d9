"""Semantically-modulated temporal grounding and the localization ordering strategy.

The model fuses segment-level video features with the mean sentence encoding,
runs a temporal convolution pyramid where every level is first standardized
across its cells and rescaled/shifted by sentence-attended gates, and predicts
per (cell, anchor) an overlap probability plus center/width offsets.  The
extended variant adds a 24-region facial-area head trained as an auxiliary
multilabel task.  Inference picks the anchor with the highest overlap score
and decodes the offsets; ordering a set of captions sorts them by decoded
span center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .core import N_FACE_REGIONS, Permutation5, TemporalSpan
from .metrics import tiou
from .text import RecurrentTextEncoder

PROB_EPS = 1e-7  # probability clamp inside cross-entropy terms
STD_FLOOR = 1e-5  # sigma floor in the modulation normalizer
FACE_SEED_OFFSET = 0x0FACE  # keeps the face head's init out of the trunk's RNG stream


@dataclass
class GroundingConfig:
    feature_dim: int = 64
    max_video_segments: int = 1024
    max_sentence_tokens: int = 20
    pyramid_sizes: tuple[int, ...] = (256, 128, 64, 32, 16)
    anchor_ratios: tuple[float, ...] = (1.0, 1.5)
    hidden_dim: int = 128
    embed_dim: int = 64
    sentence_hidden: int = 64  # bidirectional GRU, token states have width 2x
    attention_dim: int = 64
    lambda_over: float = 100.0
    lambda_loc: float = 10.0
    lambda_face: float = 0.5
    learning_rate: float = 1e-4

    def validate(self) -> None:
        sizes = self.pyramid_sizes
        if not sizes:
            raise ValueError("pyramid_sizes must be non-empty")
        if any(s2 >= s1 for s1, s2 in zip(sizes, sizes[1:])):
            raise ValueError("pyramid sizes must be strictly decreasing")
        prev = self.max_video_segments
        for s in sizes:
            if s < 1 or prev % s != 0:
                raise ValueError(
                    f"each pyramid size must divide the previous length ({prev} -> {s})"
                )
            prev = s
        if min(self.lambda_over, self.lambda_loc) <= 0 or self.lambda_face < 0:
            raise ValueError("loss weights must be positive (face weight may be 0)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class SentenceFeatures:
    """Per-token recurrent states plus their arithmetic mean."""

    tokens: torch.Tensor  # (n_tokens, dim)
    mean: torch.Tensor  # (dim,)

    @classmethod
    def from_tokens(cls, tokens: torch.Tensor) -> "SentenceFeatures":
        return cls(tokens, tokens.mean(dim=0))


@dataclass(frozen=True)
class AnchorPrediction:
    anchor: TemporalSpan
    p_over: float
    delta_c: float
    delta_w: float
    face_probs: tuple[float, ...] | None = None


# ---------------------------------------------------------------------------
# Anchors and labels


def anchor_spans(config: GroundingConfig, duration: float) -> list[TemporalSpan]:
    """All candidate spans, flattened in (level, cell, ratio) order.

    Anchors may extend past the video bounds; decoded spans are clamped at
    inference time instead.
    """
    spans = []
    for size in config.pyramid_sizes:
        cell_w = duration / size
        for i in range(size):
            center = (i + 0.5) * cell_w
            for r in config.anchor_ratios:
                w = r * cell_w
                spans.append(TemporalSpan(center - 0.5 * w, center + 0.5 * w))
    return spans


def assign_labels(
    anchors: Sequence[TemporalSpan], groundtruth: TemporalSpan
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-anchor (soft overlap target, positive flag, center offset, width offset).

    The overlap target is the tIoU itself; an anchor is positive iff it
    exceeds 0.5 strictly.
    """
    if not anchors:
        raise ValueError("need at least one anchor")
    g_over = np.array([tiou(a, groundtruth) for a in anchors])
    positive = g_over > 0.5
    ac = np.array([a.center for a in anchors])
    aw = np.array([a.duration for a in anchors])
    dc = (groundtruth.center - ac) / aw
    dw = np.log(groundtruth.duration / aw)
    return g_over, positive, dc, dw


# ---------------------------------------------------------------------------
# Losses (public, oracle-checked)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=torch.float64)


def _soft_ce(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    # clamping each log argument (not p itself) keeps exact targets at 0 loss
    return -(
        g * torch.log(p.clamp_min(PROB_EPS))
        + (1.0 - g) * torch.log((1.0 - p).clamp_min(PROB_EPS))
    )


def loss_over(p_over, g_over, positive) -> torch.Tensor:
    """Overlap loss: soft-target cross-entropy, normalized per positive/negative set."""
    p, g = _as_tensor(p_over), _as_tensor(g_over)
    pos = torch.as_tensor(np.asarray(positive), dtype=torch.bool)
    if not bool(pos.any()):
        raise ValueError("positive set is empty")
    if bool(pos.all()):
        raise ValueError("negative set is empty")
    ce = _soft_ce(p, g)
    return ce[pos].mean() + ce[~pos].mean()


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def loss_loc(dc_pred, dw_pred, dc_target, dw_target, positive) -> torch.Tensor:
    """Smooth-L1 offset regression, averaged over positive anchors."""
    pos = torch.as_tensor(np.asarray(positive), dtype=torch.bool)
    if not bool(pos.any()):
        raise ValueError("positive set is empty")
    dc_err = _as_tensor(dc_pred)[pos] - _as_tensor(dc_target)[pos]
    dw_err = _as_tensor(dw_pred)[pos] - _as_tensor(dw_target)[pos]
    return (smooth_l1(dc_err) + smooth_l1(dw_err)).mean()


def loss_face(face_probs, face_labels, positive) -> torch.Tensor:
    """Multilabel facial-area loss over positive anchors, summed across regions."""
    pos = torch.as_tensor(np.asarray(positive), dtype=torch.bool)
    if not bool(pos.any()):
        raise ValueError("positive set is empty")
    p = _as_tensor(face_probs)[pos]  # (n_pos, 24)
    g = _as_tensor(face_labels)[pos]
    return _soft_ce(p, g).mean(dim=0).sum()


def loss_all(
    l_over, l_loc, l_face=0.0, weights: tuple[float, float, float] = (100.0, 10.0, 0.5)
) -> torch.Tensor:
    """Weighted joint objective; a zero face weight recovers the plain model."""
    w_over, w_loc, w_face = weights
    return w_over * _as_tensor(l_over) + w_loc * _as_tensor(l_loc) + w_face * _as_tensor(l_face)


# ---------------------------------------------------------------------------
# Model


class GroundingModel(nn.Module):
    def __init__(self, vocab_size: int, config: GroundingConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.sentence_encoder = RecurrentTextEncoder(
            vocab_size, config.embed_dim, config.sentence_hidden, cell="gru"
        )
        ds = self.sentence_encoder.out_dim
        d = config.hidden_dim
        da = config.attention_dim
        self.fuse_linear = nn.Linear(ds + config.feature_dim, d)
        n_levels = len(config.pyramid_sizes)
        self.attn_ws = nn.ModuleList(nn.Linear(ds, da, bias=False) for _ in range(n_levels))
        self.attn_wa = nn.ModuleList(nn.Linear(d, da) for _ in range(n_levels))
        self.attn_w = nn.ModuleList(nn.Linear(da, 1, bias=False) for _ in range(n_levels))
        self.mod_lambda = nn.ModuleList(nn.Linear(ds, d) for _ in range(n_levels))
        self.mod_psi = nn.ModuleList(nn.Linear(ds, d) for _ in range(n_levels))
        strides = []
        prev = config.max_video_segments
        for s in config.pyramid_sizes:
            strides.append(prev // s)
            prev = s
        self.convs = nn.ModuleList(
            nn.Conv1d(d, d, kernel_size=3, stride=st, padding=1) for st in strides
        )
        n_anchors = len(config.anchor_ratios)
        self.pos_heads = nn.ModuleList(nn.Linear(d, 3 * n_anchors) for _ in range(n_levels))
        self.face_heads: nn.ModuleList | None = None

    def add_face_heads(self) -> None:
        d = self.config.hidden_dim
        self.face_heads = nn.ModuleList(
            nn.Linear(d, N_FACE_REGIONS) for _ in self.config.pyramid_sizes
        )
        # match the trunk's dtype/device
        self.face_heads.to(self.fuse_linear.weight.dtype)

    @property
    def use_face(self) -> bool:
        return self.face_heads is not None

    # -- blocks ------------------------------------------------------------

    def encode_sentence(self, token_ids: Sequence[int]) -> SentenceFeatures:
        ids = list(token_ids)[: self.config.max_sentence_tokens]
        return SentenceFeatures.from_tokens(self.sentence_encoder.token_states(ids))

    def pad_segments(self, video_feats: torch.Tensor) -> torch.Tensor:
        """Truncate or zero-pad to ``max_video_segments`` rows."""
        t_max = self.config.max_video_segments
        if video_feats.shape[0] >= t_max:
            return video_feats[:t_max]
        pad = torch.zeros(
            t_max - video_feats.shape[0], video_feats.shape[1], dtype=video_feats.dtype
        )
        return torch.cat([video_feats, pad], dim=0)

    def fuse(self, video_feats: torch.Tensor, sentence_mean: torch.Tensor) -> torch.Tensor:
        """Early fusion: relu(W [mean ; v_t] + b) per segment."""
        t = video_feats.shape[0]
        joint = torch.cat([sentence_mean.expand(t, -1), video_feats], dim=1)
        return torch.relu(self.fuse_linear(joint))

    def attend(self, sentence: SentenceFeatures, cells: torch.Tensor, level: int) -> torch.Tensor:
        """Per-cell attention over sentence tokens; returns contexts (n_cells, ds)."""
        scores = self.attn_w[level](
            torch.tanh(
                self.attn_ws[level](sentence.tokens).unsqueeze(0)
                + self.attn_wa[level](cells).unsqueeze(1)
            )
        ).squeeze(-1)  # (n_cells, n_tokens)
        alpha = torch.softmax(scores, dim=1)
        return alpha @ sentence.tokens

    def modulate(self, cells: torch.Tensor, contexts: torch.Tensor, level: int) -> torch.Tensor:
        """Channel-wise standardization across cells, gated by sentence contexts."""
        mu = cells.mean(dim=0)
        sigma = cells.std(dim=0, unbiased=False).clamp_min(STD_FLOOR)
        lam = torch.tanh(self.mod_lambda[level](contexts))
        psi = torch.tanh(self.mod_psi[level](contexts))
        return lam * (cells - mu) / sigma + psi

    def pyramid_forward(
        self, video_feats: torch.Tensor, sentence: SentenceFeatures
    ) -> tuple[list[torch.Tensor], dict[str, torch.Tensor]]:
        """Run the full pyramid.

        Returns the per-level feature maps and flat per-anchor outputs
        ``p_over``, ``delta_c``, ``delta_w`` (and ``face_probs`` per anchor
        when the face head is present), in (level, cell, ratio) order.
        """
        fused = self.fuse(self.pad_segments(video_feats), sentence.mean)
        maps: list[torch.Tensor] = []
        p_over, dc, dw, face = [], [], [], []
        current = fused
        n_anchors = len(self.config.anchor_ratios)
        for level, size in enumerate(self.config.pyramid_sizes):
            contexts = self.attend(sentence, current, level)
            modulated = self.modulate(current, contexts, level)
            out = self.convs[level](modulated.T.unsqueeze(0)).squeeze(0).T
            if not torch.isfinite(out).all():
                raise RuntimeError(f"non-finite activation at pyramid level {level}")
            assert out.shape[0] == size, (out.shape, size)
            maps.append(out)
            pos = self.pos_heads[level](out).reshape(size, n_anchors, 3)
            p_over.append(torch.sigmoid(pos[..., 0]).reshape(-1))
            dc.append(pos[..., 1].reshape(-1))
            dw.append(pos[..., 2].reshape(-1))
            if self.face_heads is not None:
                probs = torch.sigmoid(self.face_heads[level](out))  # (size, 24)
                face.append(probs.repeat_interleave(n_anchors, dim=0))
            current = out
        outputs = {
            "p_over": torch.cat(p_over),
            "delta_c": torch.cat(dc),
            "delta_w": torch.cat(dw),
        }
        if face:
            outputs["face_probs"] = torch.cat(face, dim=0)
        return maps, outputs


def build_grounding_model(
    vocab_size: int, config: GroundingConfig, use_face: bool, seed: int = 0
) -> GroundingModel:
    """Seed-deterministic construction.

    The face head draws from a separate RNG stream so the trunk
    initialization is identical with and without it.
    """
    torch.manual_seed(seed)
    model = GroundingModel(vocab_size, config)
    if use_face:
        torch.manual_seed(seed + FACE_SEED_OFFSET)
        model.add_face_heads()
    return model


# ---------------------------------------------------------------------------
# Inference


def decode_anchor(anchor: TemporalSpan, delta_c: float, delta_w: float, duration: float) -> TemporalSpan:
    center = anchor.center + delta_c * anchor.duration
    width = anchor.duration * math.exp(delta_w)
    start = min(max(center - 0.5 * width, 0.0), duration)
    end = min(max(center + 0.5 * width, 0.0), duration)
    if end <= start:
        end = min(duration, start + 1e-6)
    return TemporalSpan(start, end)


@torch.no_grad()
def localize(
    model: GroundingModel,
    video_feats: torch.Tensor,
    token_ids: Sequence[int],
    duration: float,
    top_k: int = 1,
) -> list[tuple[TemporalSpan, float]]:
    """Decode the ``top_k`` anchors by overlap score; ties go to the earliest anchor."""
    was_training = model.training
    model.eval()
    try:
        sentence = model.encode_sentence(token_ids)
        _, out = model.pyramid_forward(video_feats, sentence)
    finally:
        model.train(was_training)
    anchors = anchor_spans(model.config, duration)
    p = out["p_over"].numpy()
    order = sorted(range(len(anchors)), key=lambda i: (-p[i], anchors[i].start_s, i))
    return [
        (
            decode_anchor(
                anchors[i], float(out["delta_c"][i]), float(out["delta_w"][i]), duration
            ),
            float(p[i]),
        )
        for i in order[:top_k]
    ]


def order_steps_by_centers(centers: Sequence[float]) -> Permutation5:
    """Sort 5 presented captions by localized span center; ties keep presentation order."""
    if len(centers) != 5:
        raise ValueError("exactly 5 captions expected")
    return Permutation5(tuple(int(i) for i in np.argsort(np.asarray(centers), kind="stable")))


def order_steps_by_localization(
    localizer: Callable[[str], tuple[TemporalSpan, float]], captions: Sequence[str]
) -> Permutation5:
    """Localize each caption independently and sort by span center."""
    return order_steps_by_centers([localizer(c)[0].center for c in captions])


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class GroundingSample:
    video_id: str
    segments: np.ndarray  # (n_segments, feature_dim)
    token_ids: tuple[int, ...]
    span: TemporalSpan
    duration: float
    face_label: np.ndarray | None = None  # (24,)


@dataclass
class GroundingTrainConfig:
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0


def _sample_losses(model: GroundingModel, sample: GroundingSample) -> torch.Tensor:
    cfg = model.config
    sentence = model.encode_sentence(sample.token_ids)
    feats = torch.as_tensor(sample.segments, dtype=torch.float32)
    _, out = model.pyramid_forward(feats, sentence)
    anchors = anchor_spans(cfg, sample.duration)
    g_over, positive, dc_t, dw_t = assign_labels(anchors, sample.span)
    if not positive.any():
        positive = positive.copy()
        positive[int(np.argmax(g_over))] = True  # keep the best-overlap anchor trainable
    if positive.all():
        raise RuntimeError("every anchor is positive; widen the anchor set")
    l_over = loss_over(out["p_over"], g_over, positive)
    l_loc = loss_loc(out["delta_c"], out["delta_w"], dc_t, dw_t, positive)
    if model.use_face and cfg.lambda_face > 0:
        if sample.face_label is None:
            raise ValueError(f"sample for {sample.video_id} lacks a face label")
        labels = np.broadcast_to(sample.face_label, (len(anchors), N_FACE_REGIONS)).copy()
        l_face = loss_face(out["face_probs"], labels, positive)
    else:
        l_face = torch.zeros(())
    return loss_all(l_over, l_loc, l_face, (cfg.lambda_over, cfg.lambda_loc, cfg.lambda_face))


def train_grounding(
    model: GroundingModel,
    samples: Sequence[GroundingSample],
    config: GroundingTrainConfig,
) -> list[dict]:
    """Adam training over per-query samples; returns the per-epoch log."""
    if not samples:
        raise ValueError("empty training set")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=model.config.learning_rate)
    log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        model.train()
        total = 0.0
        for start in range(0, len(samples), config.batch_size):
            batch = [samples[int(i)] for i in order[start : start + config.batch_size]]
            loss = torch.stack([_sample_losses(model, s) for s in batch]).mean()
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch offset {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        log.append({"epoch": epoch, "loss": total / len(samples)})
    return log


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Sequence[torch.Tensor],
    eps: float = 1e-4,
) -> float:
    """Max relative error between autograd and central finite differences.

    Uses the fourth-order five-point central stencil, whose truncation error
    (O(eps**4)) stays below the 1e-6 relative-error floor even for parameters
    with near-zero gradients.  ``loss_fn`` must be a pure function of
    ``parameters`` (float64).
    """
    params = list(parameters)
    for p in params:
        if p.dtype != torch.float64:
            raise ValueError("gradient checks require float64 parameters")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    with torch.no_grad():
        for p in params:
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            flat = p.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                samples = []
                for k in (-2, -1, 1, 2):
                    flat[i] = orig + k * eps
                    samples.append(float(loss_fn()))
                flat[i] = orig
                m2, m1, p1, p2 = samples
                fd = (m2 - 8 * m1 + 8 * p1 - p2) / (12 * eps)
                ag = float(gflat[i])
                denom = max(abs(fd), abs(ag), 1e-6)
                worst = max(worst, abs(fd - ag) / denom)
    return worst

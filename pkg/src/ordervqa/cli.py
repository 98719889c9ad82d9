"""Command-line surface: ovqa gensynth | genq | plan-frames | train | predict | score.

Every command exits 0 on success; failures print a machine-readable JSON
error record to stderr and exit non-zero.  All randomness flows from the
seed given on the command line or in the config file, so identical
invocations produce byte-identical outputs.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import torch

from . import checkpoints, composition, grounding, io, metrics, pairwise, questions, synth
from .core import IMAGE_ORDERING, STEP_ORDERING, TASKS, parse_image_item_id
from .text import Vocabulary


def _fail(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(1)


def command_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (io.ParseError,) as e:
            _fail("parse_error", str(e))
        except FileNotFoundError as e:
            _fail("missing_file", str(e))
        except (ValueError, KeyError, RuntimeError) as e:
            _fail(type(e).__name__.lower(), str(e))

    return wrapper


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


@click.group()
def main() -> None:
    """Ordering-VQA toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@command_errors
def gensynth(config_path, out_dir, seed):
    """Build a synthetic world (annotations + features + config echo)."""
    cfg_dict = _read_config(config_path).get("world", {})
    if seed is not None:
        cfg_dict["seed"] = seed
    for key in ("steps_range", "tokens_per_caption", "duration_range"):
        if key in cfg_dict:
            cfg_dict[key] = tuple(cfg_dict[key])
    cfg = synth.WorldConfig(**cfg_dict)
    world = synth.gen_world(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_annotations(out / "annotations.json", world.annotations)
    io.write_features(out / "features.bin", world.features)
    (out / "world.json").write_text(
        json.dumps(asdict(cfg), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    click.echo(f"wrote {len(world.annotations)} videos to {out}")


@main.command()
@click.option("--task", type=click.Choice(TASKS), required=True)
@click.option("--annotations", "ann_path", type=click.Path(exists=True), required=True)
@click.option("--n", "n_questions", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--exclude", "exclude_path", type=click.Path(exists=True), default=None,
              help="Questions file or JSON list of video ids to exclude.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--key", "key_path", type=click.Path(), default=None,
              help="Answer key output (default: OUT with a .key.json suffix).")
@click.option("--strip-answers", is_flag=True, help="Withhold answers in the questions file.")
@command_errors
def genq(task, ann_path, n_questions, seed, exclude_path, out_path, key_path, strip_answers):
    """Generate multi-choice ordering questions plus a separate answer key."""
    anns = io.read_annotations(ann_path)
    excluded: set[str] = set()
    if exclude_path:
        doc = json.loads(Path(exclude_path).read_text(encoding="utf-8"))
        if isinstance(doc, dict) and "questions" in doc:
            excluded = {q["video_id"] for q in doc["questions"]}
        elif isinstance(doc, list):
            excluded = {str(v) for v in doc}
        else:
            raise ValueError(f"{exclude_path}: expected a questions file or a JSON list")
    if task == IMAGE_ORDERING:
        qs = questions.gen_image_ordering(anns, n_questions, seed)
    else:
        qs = questions.gen_step_ordering(anns, n_questions, seed, excluded)
    key = questions.answer_key(qs)
    if strip_answers:
        qs = questions.strip_answers(qs)
    io.write_questions(out_path, task, qs)
    key_file = key_path or f"{out_path}.key.json"
    io.write_answer_key(key_file, key)
    click.echo(f"wrote {len(qs)} questions to {out_path} (key: {key_file})")


@main.command("plan-frames")
@click.option("--annotations", "ann_path", type=click.Path(exists=True), required=True)
@click.option("--fps", type=float, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@command_errors
def plan_frames_cmd(ann_path, fps, out_path):
    """Emit the per-step frame sampling plan for an external extractor."""
    anns = io.read_annotations(ann_path)
    plans = []
    for ann in anns:
        for step in ann.steps:
            p = io.plan_frames(step.span, fps, ann.video_id, step.index)
            entry = {
                "video_id": p.video_id,
                "step_index": p.step_index,
                "frame_indices": list(p.frame_indices),
            }
            if p.warning:
                entry["warning"] = p.warning
            plans.append(entry)
    Path(out_path).write_text(
        json.dumps({"fps": fps, "plans": plans}, indent=1) + "\n", encoding="utf-8"
    )
    click.echo(f"wrote {len(plans)} frame plans to {out_path}")


MODEL_CHOICES = [
    checkpoints.PAIRWISE_IMAGE,
    checkpoints.PAIRWISE_TEXT,
    checkpoints.COMPOSITION,
    checkpoints.SCDM,
    checkpoints.SCDM_PLUS,
]


def _world_samples(anns, features, n_segments, max_tokens, vocab):
    samples = []
    for ann in anns:
        segs = synth.video_segments(features, ann.video_id, n_segments)
        for step in ann.steps:
            face = np.zeros(24, dtype=np.float64)
            for a in step.areas:
                face[a] = 1.0
            samples.append(
                grounding.GroundingSample(
                    ann.video_id,
                    segs,
                    tuple(vocab.encode(step.caption, max_tokens)),
                    step.span,
                    ann.duration_s,
                    face,
                )
            )
    return samples


def _count_segments(features, video_id):
    n = 0
    while synth.segment_item_id(video_id, n) in features:
        n += 1
    if n == 0:
        raise ValueError(f"no segment features found for video {video_id!r}")
    return n


@main.command()
@click.option("--model", "model_type", type=click.Choice(MODEL_CHOICES), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True,
              help="Directory with annotations.json and features.bin.")
@click.option("--out", "ckpt_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@command_errors
def train(model_type, config_path, data_dir, ckpt_path, seed):
    """Train a model and write its checkpoint."""
    cfg = _read_config(config_path)
    data = Path(data_dir)
    anns = io.read_annotations(data / "annotations.json")
    features = io.read_features(data / "features.bin")

    if model_type in (checkpoints.PAIRWISE_IMAGE, checkpoints.PAIRWISE_TEXT):
        section = dict(cfg.get("pairwise", {}))
        if seed is not None:
            section["seed"] = seed
        if "hidden" in section:
            section["hidden"] = tuple(section["hidden"])
        tc = pairwise.PairwiseTrainConfig(**section)
        kind = "images" if model_type == checkpoints.PAIRWISE_IMAGE else "captions"
        dataset = pairwise.build_pair_dataset(anns, features, tc.seed, item_kind=kind)
        torch.manual_seed(tc.seed)
        if model_type == checkpoints.PAIRWISE_IMAGE:
            encoder = pairwise.StoredFeatureEncoder(features)
            ckpt_cfg = {"hidden": list(tc.hidden)}
        else:
            vocab = Vocabulary.build(s.caption for a in anns for s in a.steps)
            encoder = pairwise.CaptionEncoder(vocab)
            ckpt_cfg = {
                "hidden": list(tc.hidden),
                "vocab": vocab.id_to_token[2:],
                "embed_dim": 64,
                "rnn_hidden": 64,
            }
        model = pairwise.SiameseComparator(encoder, hidden=tc.hidden)
        log = pairwise.train_pairwise(model, dataset, tc)
        checkpoints.save_pairwise(ckpt_path, model, model_type, ckpt_cfg, log)

    elif model_type == checkpoints.COMPOSITION:
        section = dict(cfg.get("composition", {}))
        if seed is not None:
            section["seed"] = seed
        n_parts = section.pop("n_parts", None)
        text_hidden = section.pop("text_hidden", 256)
        embed_dim = section.pop("embed_dim", 64)
        tc = composition.CompositionTrainConfig(**section)
        triplets = composition.build_triplet_dataset(anns, features, n_parts, tc.seed)
        vocab = Vocabulary.build(s.caption for a in anns for s in a.steps)
        torch.manual_seed(tc.seed)
        model = composition.CompositionModel(features, vocab, text_hidden, embed_dim)
        log = composition.train_composition(model, triplets, tc)
        checkpoints.save_composition(
            ckpt_path, model, {"text_hidden": text_hidden, "embed_dim": embed_dim}, log
        )

    else:  # scdm / scdmplus
        section = dict(cfg.get("grounding", {}))
        train_section = dict(cfg.get("grounding_train", {}))
        if seed is not None:
            train_section["seed"] = seed
        for key in ("pyramid_sizes", "anchor_ratios"):
            if key in section:
                section[key] = tuple(section[key])
        gconf = grounding.GroundingConfig(feature_dim=features.dimension, **section)
        tc = grounding.GroundingTrainConfig(**train_section)
        vocab = Vocabulary.build(s.caption for a in anns for s in a.steps)
        n_segments = _count_segments(features, anns[0].video_id)
        samples = _world_samples(anns, features, n_segments, gconf.max_sentence_tokens, vocab)
        model = grounding.build_grounding_model(
            len(vocab), gconf, use_face=model_type == checkpoints.SCDM_PLUS, seed=tc.seed
        )
        log = grounding.train_grounding(model, samples, tc)
        checkpoints.save_grounding(ckpt_path, model, vocab, log)

    click.echo(f"wrote checkpoint {ckpt_path}")


STRATEGIES = ("pairwise", "greedy_tirg", "localize_center")


@main.command()
@click.option("--strategy", type=click.Choice(STRATEGIES), required=True)
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), default=None)
@click.option("--pairwise-ckpt", type=click.Path(exists=True), default=None,
              help="Pairwise comparator used by greedy_tirg to anchor the first image.")
@click.option("--questions", "q_path", type=click.Path(exists=True), required=True)
@click.option("--features", "feat_path", type=click.Path(exists=True), default=None)
@click.option("--annotations", "ann_path", type=click.Path(exists=True), default=None)
@click.option("--oracle", is_flag=True,
              help="Use ground-truth oracles built from --annotations instead of checkpoints.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@command_errors
def predict(strategy, ckpt_path, pairwise_ckpt, q_path, feat_path, ann_path, oracle, out_path):
    """Answer questions with a trained model or a ground-truth oracle."""
    task, qs = io.read_questions(q_path)
    features = io.read_features(feat_path) if feat_path else None
    anns = io.read_annotations(ann_path) if ann_path else None
    anns_by_id = {a.video_id: a for a in anns} if anns else None
    predictions: dict[str, int] = {}

    if strategy == "pairwise":
        if oracle:
            if anns is None:
                raise ValueError("--oracle requires --annotations")
            comparator = synth.OraclePairwiseComparator(anns)
        else:
            if ckpt_path is None:
                raise ValueError("--ckpt is required without --oracle")
            _, comparator, _, _ = checkpoints.load_model(ckpt_path, features)
        for q in qs:
            predictions[q.question_id] = pairwise.select_answer_pairwise(comparator, q)

    elif strategy == "greedy_tirg":
        if task != IMAGE_ORDERING:
            raise ValueError("greedy_tirg applies to image_ordering questions only")
        if anns_by_id is None:
            raise ValueError("greedy_tirg requires --annotations for the step captions")
        if oracle:
            f_img = synth.OraclePairwiseComparator(anns)
            f_tirg = synth.OracleCompositionScorer(anns)
        else:
            if ckpt_path is None or pairwise_ckpt is None:
                raise ValueError("greedy_tirg requires --ckpt and --pairwise-ckpt")
            _, f_tirg, _, _ = checkpoints.load_model(ckpt_path, features)
            _, f_img, _, _ = checkpoints.load_model(pairwise_ckpt, features)
        for q in qs:
            predictions[q.question_id] = composition.answer_question_greedy(
                q, anns_by_id[q.video_id], f_img, f_tirg
            )

    else:  # localize_center
        if task != STEP_ORDERING:
            raise ValueError("localize_center applies to step_ordering questions only")
        if anns_by_id is None:
            raise ValueError("localize_center requires --annotations for durations")
        if oracle:
            loc = synth.OracleLocalizer(anns)
            for q in qs:
                perm = grounding.order_steps_by_localization(
                    lambda c: loc.localize(q.video_id, c), q.items
                )
                predictions[q.question_id] = composition.select_answer_by_edit_distance(perm, q)
        else:
            if ckpt_path is None or features is None:
                raise ValueError("localize_center requires --ckpt and --features")
            _, model, _, _ = checkpoints.load_model(ckpt_path, features)
            vocab = model.vocab
            for q in qs:
                ann = anns_by_id[q.video_id]
                n_seg = _count_segments(features, q.video_id)
                feats = torch.as_tensor(
                    synth.video_segments(features, q.video_id, n_seg), dtype=torch.float32
                )
                centers = []
                for caption in q.items:
                    ids = vocab.encode(caption, model.config.max_sentence_tokens)
                    span, _ = grounding.localize(model, feats, ids, ann.duration_s)[0]
                    centers.append(span.center)
                perm = grounding.order_steps_by_centers(centers)
                predictions[q.question_id] = composition.select_answer_by_edit_distance(perm, q)

    io.write_predictions(out_path, predictions)
    click.echo(f"wrote {len(predictions)} predictions to {out_path}")


@main.command()
@click.option("--predictions", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--key", "key_path", type=click.Path(exists=True), required=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--per-gap", is_flag=True,
              help="Break accuracy down by the minimum step gap among a question's items.")
@click.option("--questions", "q_path", type=click.Path(exists=True), default=None)
@click.option("--annotations", "ann_path", type=click.Path(exists=True), default=None)
@command_errors
def score(pred_path, key_path, report_path, per_gap, q_path, ann_path):
    """Score predictions against an answer key and write a report."""
    preds = io.read_predictions(pred_path)
    key = io.read_answer_key(key_path)
    acc = metrics.multi_choice_accuracy(preds, key)
    per_gap_acc = None
    task = "multi_choice"
    n = len(key)
    if q_path:
        task, qs = io.read_questions(q_path)
        if per_gap:
            if ann_path is None:
                raise ValueError("--per-gap requires --annotations")
            anns_by_id = {a.video_id: a for a in io.read_annotations(ann_path)}
            results = []
            for q in qs:
                if q.question_id not in key:
                    continue
                gap = _question_min_gap(q, anns_by_id[q.video_id])
                results.append((gap, preds[q.question_id] == key[q.question_id]))
            per_gap_acc = pairwise.stepgap_accuracy(results)
    elif per_gap:
        raise ValueError("--per-gap requires --questions")
    report = metrics.make_report(task, n, acc, per_gap=per_gap_acc)
    Path(report_path).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    click.echo(f"accuracy {report['accuracy']:.2f} over {n} questions -> {report_path}")


def _question_min_gap(q, ann) -> int:
    if q.task == IMAGE_ORDERING:
        steps = sorted(parse_image_item_id(i)[1] for i in q.items)
    else:
        by_caption = {s.caption: s.index for s in ann.steps}
        steps = sorted(by_caption[c] for c in q.items)
    return min(b - a for a, b in zip(steps, steps[1:]))


if __name__ == "__main__":
    main()

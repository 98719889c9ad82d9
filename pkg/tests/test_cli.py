import json

import pytest
from click.testing import CliRunner

from ordervqa import io
from ordervqa.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def _world_config(tmp_path, **world):
    defaults = dict(n_videos=6, feature_dim=8, n_segments=4, seed=5)
    defaults.update(world)
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"world": defaults}))
    return str(path)


def _gensynth(runner, tmp_path, out="world", **world):
    cfg = _world_config(tmp_path, **world)
    out_dir = tmp_path / out
    result = runner.invoke(main, ["gensynth", "--config", cfg, "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    return out_dir


class TestGensynth:
    def test_writes_world(self, runner, tmp_path):
        out = _gensynth(runner, tmp_path)
        assert (out / "annotations.json").exists()
        assert (out / "features.bin").exists()
        assert json.loads((out / "world.json").read_text())["seed"] == 5
        anns = io.read_annotations(out / "annotations.json", strict=True)
        assert len(anns) == 6

    def test_seed_flag_overrides_config(self, runner, tmp_path):
        cfg = _world_config(tmp_path)
        out = tmp_path / "w"
        result = runner.invoke(
            main, ["gensynth", "--config", cfg, "--out", str(out), "--seed", "9"]
        )
        assert result.exit_code == 0
        assert json.loads((out / "world.json").read_text())["seed"] == 9


class TestGenq:
    def test_questions_and_key(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        q_path = tmp_path / "q.json"
        result = runner.invoke(main, [
            "genq", "--task", "image_ordering", "--annotations", str(world / "annotations.json"),
            "--n", "10", "--seed", "1", "--out", str(q_path),
        ])
        assert result.exit_code == 0, result.output
        task, qs = io.read_questions(q_path)
        assert task == "image_ordering" and len(qs) == 10
        key = io.read_answer_key(f"{q_path}.key.json")
        assert key == {q.question_id: q.answer_index for q in qs}

    def test_strip_answers(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        q_path = tmp_path / "q.json"
        result = runner.invoke(main, [
            "genq", "--task", "step_ordering", "--annotations", str(world / "annotations.json"),
            "--n", "6", "--seed", "1", "--out", str(q_path), "--strip-answers",
        ])
        assert result.exit_code == 0, result.output
        _, qs = io.read_questions(q_path)
        assert all(q.answer_index is None for q in qs)
        assert len(io.read_answer_key(f"{q_path}.key.json")) == 6

    def test_exclude_questions_file(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        q1 = tmp_path / "q1.json"
        runner.invoke(main, [
            "genq", "--task", "image_ordering", "--annotations", str(world / "annotations.json"),
            "--n", "3", "--seed", "1", "--out", str(q1),
        ])
        q2 = tmp_path / "q2.json"
        result = runner.invoke(main, [
            "genq", "--task", "step_ordering", "--annotations", str(world / "annotations.json"),
            "--n", "3", "--seed", "1", "--exclude", str(q1), "--out", str(q2),
        ])
        assert result.exit_code == 0, result.output
        used = {q["video_id"] for q in json.loads(q1.read_text())["questions"]}
        _, qs = io.read_questions(q2)
        assert used.isdisjoint({q.video_id for q in qs})


class TestPlanFrames:
    def test_plan_file(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        out = tmp_path / "plans.json"
        result = runner.invoke(main, [
            "plan-frames", "--annotations", str(world / "annotations.json"),
            "--fps", "25", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text())
        assert doc["fps"] == 25
        n_steps = sum(
            len(a.steps) for a in io.read_annotations(world / "annotations.json")
        )
        assert len(doc["plans"]) == n_steps
        assert all(len(p["frame_indices"]) == 10 for p in doc["plans"])


class TestTrainPredictScore:
    def test_pairwise_train_and_predict(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path, n_videos=8)
        train_cfg = tmp_path / "train.json"
        train_cfg.write_text(json.dumps({"pairwise": {"epochs": 2, "hidden": [16]}}))
        ckpt = tmp_path / "pw.ckpt"
        result = runner.invoke(main, [
            "train", "--model", "pairwise_image", "--config", str(train_cfg),
            "--data", str(world), "--out", str(ckpt), "--seed", "0",
        ])
        assert result.exit_code == 0, result.output
        q_path = tmp_path / "q.json"
        runner.invoke(main, [
            "genq", "--task", "image_ordering", "--annotations", str(world / "annotations.json"),
            "--n", "8", "--seed", "2", "--out", str(q_path),
        ])
        preds = tmp_path / "p.json"
        result = runner.invoke(main, [
            "predict", "--strategy", "pairwise", "--ckpt", str(ckpt),
            "--questions", str(q_path), "--features", str(world / "features.bin"),
            "--out", str(preds),
        ])
        assert result.exit_code == 0, result.output
        assert len(io.read_predictions(preds)) == 8

    def test_oracle_predict_and_score(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        ann = str(world / "annotations.json")
        q_path = tmp_path / "q.json"
        runner.invoke(main, [
            "genq", "--task", "step_ordering", "--annotations", ann,
            "--n", "10", "--seed", "3", "--out", str(q_path),
        ])
        preds = tmp_path / "p.json"
        result = runner.invoke(main, [
            "predict", "--strategy", "localize_center", "--oracle",
            "--questions", str(q_path), "--annotations", ann, "--out", str(preds),
        ])
        assert result.exit_code == 0, result.output
        report_path = tmp_path / "report.json"
        result = runner.invoke(main, [
            "score", "--predictions", str(preds), "--key", f"{q_path}.key.json",
            "--report", str(report_path), "--per-gap", "--questions", str(q_path),
            "--annotations", ann,
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert report["accuracy"] == 100.0
        assert report["raw"]["accuracy"] == 1.0
        assert report["per_gap"]

    def test_strategy_task_mismatch(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        ann = str(world / "annotations.json")
        q_path = tmp_path / "q.json"
        runner.invoke(main, [
            "genq", "--task", "image_ordering", "--annotations", ann,
            "--n", "4", "--seed", "3", "--out", str(q_path),
        ])
        result = runner.invoke(main, [
            "predict", "--strategy", "localize_center", "--oracle",
            "--questions", str(q_path), "--annotations", ann,
            "--out", str(tmp_path / "p.json"),
        ])
        assert result.exit_code == 1
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert record["error"] == "valueerror"
        assert "step_ordering" in record["message"]


class TestErrorRecords:
    def test_parse_error_record(self, runner, tmp_path):
        bad = tmp_path / "ann.json"
        bad.write_text("{not json")
        result = runner.invoke(main, [
            "genq", "--task", "image_ordering", "--annotations", str(bad),
            "--n", "1", "--seed", "0", "--out", str(tmp_path / "q.json"),
        ])
        assert result.exit_code == 1
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert record["error"] == "parse_error"
        assert "byte offset" in record["message"]

    def test_missing_ckpt_flag(self, runner, tmp_path):
        world = _gensynth(runner, tmp_path)
        q_path = tmp_path / "q.json"
        runner.invoke(main, [
            "genq", "--task", "image_ordering",
            "--annotations", str(world / "annotations.json"),
            "--n", "2", "--seed", "0", "--out", str(q_path),
        ])
        result = runner.invoke(main, [
            "predict", "--strategy", "pairwise", "--questions", str(q_path),
            "--out", str(tmp_path / "p.json"),
        ])
        assert result.exit_code == 1
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert "--ckpt" in record["message"]

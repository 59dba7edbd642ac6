from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from helpers import (
    CONSOLIDATION_MATCH,
    JUDGE_MATCH,
    annotation_entry,
    dataset_entry,
    write_dataset,
)
from sumassess.assessor import AssessmentConfig, assess_sample, save_predictions
from sumassess.cli import main
from sumassess.dataset import load_dataset
from sumassess.gateway import CompletionResponse, make_request, write_cache_entry
from sumassess.taxonomy import ErrorType, default_guidelines

from helpers import scripted_gateway, three_step_fixtures

runner = CliRunner()


def _write_fixtures(path: Path, fixtures: list[dict]) -> Path:
    path.write_text(json.dumps(fixtures), encoding="utf-8")
    return path


def _basic_dataset(tmp_path: Path, count: int = 2, with_annotations: bool = True) -> Path:
    entries = []
    for i in range(count):
        annotations = None
        if with_annotations:
            annotations = {"OM": annotation_entry(2, reasoning="misses the deadline")}
        entries.append(
            dataset_entry(
                f"m{i}",
                summary=f"Summary number {i}.",
                transcript=f"ALICE: point {i}.\nBOB: noted.",
                annotations=annotations,
            )
        )
    return write_dataset(tmp_path / "dataset.json", entries)


SHORT_CIRCUIT_FIXTURES = [{"match": "Step 1 is to collect", "response": "[]"}]


def test_evaluate_writes_one_line_per_sample(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path, count=2)
    fixtures = _write_fixtures(tmp_path / "fixtures.json", SHORT_CIRCUIT_FIXTURES)
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out),
         "--backend", "scripted", "--fixtures", str(fixtures)],
    )
    assert result.exit_code == 0, result.output
    prediction_file = out / "predictions_three_step_off_iter0.jsonl"
    lines = prediction_file.read_text().splitlines()
    assert len(lines) == 2
    assert "tokens:" in result.output
    first = json.loads(lines[0])
    assert first["sample_id"] == "m0"
    assert len(first["assessments"]) == 8


def test_evaluate_error_type_subset(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path)
    fixtures = _write_fixtures(tmp_path / "fixtures.json", SHORT_CIRCUIT_FIXTURES)
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out),
         "--backend", "scripted", "--fixtures", str(fixtures),
         "--error-types", "OM,HAL"],
    )
    assert result.exit_code == 0, result.output
    line = json.loads((out / "predictions_three_step_off_iter0.jsonl").read_text().splitlines()[0])
    assert set(line["assessments"]) == {"OM", "HAL"}


def test_evaluate_is_byte_identical_across_runs(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path, count=3)
    fixtures = _write_fixtures(tmp_path / "fixtures.json", SHORT_CIRCUIT_FIXTURES)

    def run(out: Path) -> bytes:
        result = runner.invoke(
            main,
            ["evaluate", "--dataset", str(dataset), "--out", str(out),
             "--backend", "scripted", "--fixtures", str(fixtures)],
        )
        assert result.exit_code == 0, result.output
        return (out / "predictions_three_step_off_iter0.jsonl").read_bytes()

    assert run(tmp_path / "a") == run(tmp_path / "b")


def test_evaluate_feedback_guidance_reaches_prompts(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path)
    feedback = tmp_path / "feedback.json"
    feedback.write_text(
        json.dumps(
            {
                "OM": {
                    "iteration": 1,
                    "guidance": "watch for unstated deadlines",
                    "item_count": 1,
                    "label_histogram": {"no_difference": 1},
                }
            }
        ),
        encoding="utf-8",
    )
    # this fixture only matches when the guidance text is inside the prompt
    fixtures = _write_fixtures(
        tmp_path / "fixtures.json", [{"match": "watch for unstated deadlines", "response": "[]"}]
    )
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out),
         "--backend", "scripted", "--fixtures", str(fixtures),
         "--error-types", "OM", "--feedback", str(feedback)],
    )
    assert result.exit_code == 0, result.output
    assert (out / "predictions_three_step_off_iter1.jsonl").exists()


def test_evaluate_partial_failure_exit_code(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path)
    fixtures = _write_fixtures(
        tmp_path / "fixtures.json",
        [
            {"match": "*** Omission:", "response": "garbage"},
            {"match": "Step 1 is to collect", "response": "[]"},
        ],
    )
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out),
         "--backend", "scripted", "--fixtures", str(fixtures)],
    )
    assert result.exit_code == 3
    lines = (out / "predictions_three_step_off_iter0.jsonl").read_text().splitlines()
    assert len(lines) == 2  # predictions still written
    assert json.loads(lines[0])["partial"] is True


def test_evaluate_scripted_needs_fixtures(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path)
    result = runner.invoke(main, ["evaluate", "--dataset", str(dataset), "--backend", "scripted"])
    assert result.exit_code == 1
    assert "--fixtures" in result.output


def test_evaluate_missing_dataset_is_usage_error(tmp_path) -> None:
    result = runner.invoke(main, ["evaluate", "--dataset", str(tmp_path / "nope.json")])
    assert result.exit_code == 2


def test_config_file_supplies_defaults_and_flags_win(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path)
    fixtures = _write_fixtures(tmp_path / "fixtures.json", SHORT_CIRCUIT_FIXTURES)
    config = tmp_path / "config.yaml"
    config.write_text(
        "\n".join(
            [
                f"dataset: {dataset}",
                f"out: {tmp_path / 'from_config'}",
                "backend: scripted",
                f"fixtures: {fixtures}",
                "error-types: OM",
            ]
        ),
        encoding="utf-8",
    )
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--config", str(config),
         "--out", str(tmp_path / "from_flag")],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "from_flag" / "predictions_three_step_off_iter0.jsonl").exists()
    assert not (tmp_path / "from_config").exists()  # the flag overrode the config
    line = json.loads(
        (tmp_path / "from_flag" / "predictions_three_step_off_iter0.jsonl").read_text().splitlines()[0]
    )
    assert set(line["assessments"]) == {"OM"}  # config filled the unset flag


def test_replay_backend_runs_fully_offline(tmp_path, monkeypatch) -> None:
    import socket

    dataset = _basic_dataset(tmp_path, count=1)
    samples = load_dataset(dataset)
    cache_dir = tmp_path / "cache"
    # warm the cache with the exact requests the pipeline will issue
    from sumassess.prompt_kit import render_step1

    for guideline in default_guidelines():
        prompt = render_step1(guideline, samples[0])
        write_cache_entry(cache_dir, make_request("gpt-4o", prompt), CompletionResponse("[]", "gpt-4o"))

    monkeypatch.setattr(socket, "socket", lambda *a, **k: pytest.fail("network operation attempted"))
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out),
         "--backend", "replay", "--cache-dir", str(cache_dir)],
    )
    assert result.exit_code == 0, result.output


def test_replay_cold_cache_fails_fast_with_digest(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path, count=1)
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(tmp_path / "runs"),
         "--backend", "replay", "--cache-dir", str(tmp_path / "empty_cache")],
    )
    assert result.exit_code == 1
    assert "no cached response for request digest" in result.output


def test_self_train_then_evaluate_with_feedback(tmp_path) -> None:
    dataset_path = _basic_dataset(tmp_path)
    samples = load_dataset(dataset_path)
    config = AssessmentConfig(error_types=(ErrorType.OMISSION,))
    predictions = [
        assess_sample(s, config, scripted_gateway(three_step_fixtures(rating=4)), default_guidelines())
        for s in samples
    ]
    predictions_path = tmp_path / "predictions.jsonl"
    save_predictions(predictions, predictions_path)

    fixtures = _write_fixtures(
        tmp_path / "loop_fixtures.json",
        [
            {"match": JUDGE_MATCH, "response": '{"completeness": "c", "overlap": "o", "logic": "l"}'},
            {"match": CONSOLIDATION_MATCH, "response": '{"guidance": "lower omission ratings"}'},
        ],
    )
    feedback_path = tmp_path / "feedback.json"
    result = runner.invoke(
        main,
        ["self-train", "--dataset", str(dataset_path), "--predictions", str(predictions_path),
         "--out", str(feedback_path), "--backend", "scripted", "--fixtures", str(fixtures)],
    )
    assert result.exit_code == 0, result.output
    assert "OM:" in result.output and "critical_disagreement" not in result.output
    payload = json.loads(feedback_path.read_text())
    assert payload["OM"]["guidance"] == "lower omission ratings"
    assert payload["OM"]["item_count"] == 2

    # the feedback file drives the next evaluate run
    eval_fixtures = _write_fixtures(
        tmp_path / "eval_fixtures.json", [{"match": "lower omission ratings", "response": "[]"}]
    )
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset_path), "--out", str(tmp_path / "runs"),
         "--backend", "scripted", "--fixtures", str(eval_fixtures),
         "--error-types", "OM", "--feedback", str(feedback_path)],
    )
    assert result.exit_code == 0, result.output


def test_self_train_histogram_output(tmp_path) -> None:
    dataset_path = _basic_dataset(tmp_path)
    samples = load_dataset(dataset_path)
    config = AssessmentConfig(error_types=(ErrorType.OMISSION,))
    predictions = [
        assess_sample(s, config, scripted_gateway(three_step_fixtures(rating=2)), default_guidelines())
        for s in samples
    ]
    predictions_path = tmp_path / "predictions.jsonl"
    save_predictions(predictions, predictions_path)
    fixtures = _write_fixtures(
        tmp_path / "fx.json",
        [
            {"match": JUDGE_MATCH, "response": '{"completeness": "c", "overlap": "o", "logic": "l"}'},
            {"match": CONSOLIDATION_MATCH, "response": '{"guidance": "keep it up"}'},
        ],
    )
    result = runner.invoke(
        main,
        ["self-train", "--dataset", str(dataset_path), "--predictions", str(predictions_path),
         "--out", str(tmp_path / "fb.json"), "--backend", "scripted", "--fixtures", str(fixtures)],
    )
    assert result.exit_code == 0, result.output
    assert "no_difference=2" in result.output


def _matching_predictions(tmp_path: Path):
    """Dataset plus predictions whose ratings equal the annotations."""
    entries = []
    for index, score in enumerate([0, 1, 2, 3, 4, 5]):
        entries.append(
            dataset_entry(
                f"m{index}",
                annotations={"OM": annotation_entry(score, reasoning="r")},
            )
        )
    dataset_path = write_dataset(tmp_path / "dataset.json", entries)
    samples = load_dataset(dataset_path)
    predictions = []
    for sample in samples:
        score = sample.annotations[ErrorType.OMISSION].score
        gateway = scripted_gateway(three_step_fixtures(rating=score))
        config = AssessmentConfig(error_types=(ErrorType.OMISSION,))
        predictions.append(assess_sample(sample, config, gateway, default_guidelines()))
    predictions_path = tmp_path / "predictions.jsonl"
    save_predictions(predictions, predictions_path)
    return dataset_path, predictions_path


def test_metrics_writes_report_bundle(tmp_path) -> None:
    dataset_path, predictions_path = _matching_predictions(tmp_path)
    out = tmp_path / "reports"
    result = runner.invoke(
        main,
        ["metrics", "--predictions", str(predictions_path), "--dataset", str(dataset_path),
         "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["balanced_accuracy"]["per_type"]["OM"]["balanced_accuracy"] == 1.0
    assert report["correlations"]["per_type"]["OM"]["severity_spearman"]["coefficient"] == pytest.approx(-1.0)
    assert (out / "balanced_accuracy.tsv").exists()
    assert (out / "correlations.tsv").exists()
    assert (out / "gaps.tsv").exists()
    for figure in ("balanced_accuracy.png", "correlations.png", "gaps.png"):
        assert (out / figure).stat().st_size > 0
    assert "balanced accuracy" in result.output
    assert "q = 5 - rating" in result.output  # sign convention printed in header


def test_metrics_variance_needs_two_files(tmp_path) -> None:
    dataset_path, predictions_path = _matching_predictions(tmp_path)
    result = runner.invoke(
        main,
        ["metrics", "--predictions", str(predictions_path), "--dataset", str(dataset_path),
         "--out", str(tmp_path / "reports"), "--variance"],
    )
    assert result.exit_code != 0
    assert "2 prediction files" in result.output


def test_metrics_variance_with_two_files(tmp_path) -> None:
    dataset_path, predictions_path = _matching_predictions(tmp_path)
    second = tmp_path / "predictions2.jsonl"
    second.write_text(Path(predictions_path).read_text(), encoding="utf-8")
    out = tmp_path / "reports"
    result = runner.invoke(
        main,
        ["metrics", "--predictions", str(predictions_path), "--predictions", str(second),
         "--dataset", str(dataset_path), "--out", str(out), "--variance"],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["variance"]["per_type"]["OM"]["std"] == 0.0
    assert (out / "variance.png").exists()


def test_baseline_scores_and_skips(tmp_path) -> None:
    entries = [
        dataset_entry("g1", summary="the cat sat", gold_summary="the cat sat on the mat",
                      annotations={"OM": annotation_entry(2, reasoning="r")}),
        dataset_entry("g2", summary="totally different", gold_summary=None),
    ]
    dataset_path = write_dataset(tmp_path / "dataset.json", entries)
    out = tmp_path / "baseline.json"
    result = runner.invoke(main, ["baseline", "--dataset", str(dataset_path), "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads(out.read_text())
    assert payload["skipped"] == ["g2"]
    assert payload["per_sample"][0]["rouge_1"]["precision"] == pytest.approx(1.0)
    assert payload["mean"]["rouge_1"]["recall"] == pytest.approx(0.5)


def test_baseline_without_gold_summaries_reports_skip(tmp_path) -> None:
    dataset_path = _basic_dataset(tmp_path)
    out = tmp_path / "baseline.json"
    result = runner.invoke(main, ["baseline", "--dataset", str(dataset_path), "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads(out.read_text())
    assert payload["per_sample"] == []
    assert "note" in payload
    assert "skipped" in result.output


def test_agreement_command(tmp_path) -> None:
    matrix = tmp_path / "matrix.json"
    matrix.write_text(json.dumps({"level": "nominal", "units": [[1, 1], [2, 2], [1, 1]]}))
    result = runner.invoke(main, ["agreement", "--matrix", str(matrix)])
    assert result.exit_code == 0, result.output
    assert "krippendorff_alpha (nominal): 1" in result.output


def test_cache_commands(tmp_path) -> None:
    cache_dir = tmp_path / "cache"
    result = runner.invoke(main, ["cache", "stats", "--cache-dir", str(cache_dir)])
    assert result.exit_code == 0
    assert "entries: 0" in result.output

    write_cache_entry(cache_dir, make_request("m", "p"), CompletionResponse("r", "m"))
    result = runner.invoke(main, ["cache", "list", "--cache-dir", str(cache_dir)])
    assert result.exit_code == 0
    assert len(result.output.strip().splitlines()) == 1

    refused = runner.invoke(main, ["cache", "purge", "--cache-dir", str(cache_dir)])
    assert refused.exit_code == 1
    assert "refusing" in refused.output

    purged = runner.invoke(main, ["cache", "purge", "--cache-dir", str(cache_dir), "--yes"])
    assert purged.exit_code == 0
    assert "removed 1 entry" in purged.output


def test_evaluate_multi_aspect_mode(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path, count=1)
    blocks = {code: {"reasoning": "r", "confidence": 8, "rating": 1}
              for code in ("OM", "REP", "INC", "LAN", "COR", "HAL", "STR", "IRR")}
    fixtures = _write_fixtures(
        tmp_path / "fixtures.json",
        [{"match": "Rate the following meeting summary for every error type", "response": json.dumps(blocks)}],
    )
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out), "--mode", "multi-aspect",
         "--backend", "scripted", "--fixtures", str(fixtures)],
    )
    assert result.exit_code == 0, result.output
    line = json.loads((out / "predictions_multi_aspect_off_iter0.jsonl").read_text().splitlines()[0])
    assert len(line["assessments"]) == 8


def test_evaluate_single_step_mode(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path, count=1)
    fixtures = _write_fixtures(
        tmp_path / "fixtures.json",
        [{"match": "Rate the following meeting summary for one specific error type",
          "response": '{"reasoning": "r", "confidence": 8, "rating": 2}'}],
    )
    out = tmp_path / "runs"
    result = runner.invoke(
        main,
        ["evaluate", "--dataset", str(dataset), "--out", str(out), "--mode", "single-step",
         "--backend", "scripted", "--fixtures", str(fixtures)],
    )
    assert result.exit_code == 0, result.output
    line = json.loads((out / "predictions_single_step_off_iter0.jsonl").read_text().splitlines()[0])
    assert all(a["rating"] == 2 for a in line["assessments"].values())


def test_max_concurrency_preserves_order_and_content(tmp_path) -> None:
    dataset = _basic_dataset(tmp_path, count=3)
    fixtures = _write_fixtures(tmp_path / "fixtures.json", SHORT_CIRCUIT_FIXTURES)

    def run(out: Path, concurrency: str) -> bytes:
        result = runner.invoke(
            main,
            ["evaluate", "--dataset", str(dataset), "--out", str(out),
             "--backend", "scripted", "--fixtures", str(fixtures),
             "--max-concurrency", concurrency],
        )
        assert result.exit_code == 0, result.output
        return (out / "predictions_three_step_off_iter0.jsonl").read_bytes()

    assert run(tmp_path / "serial", "1") == run(tmp_path / "parallel", "4")

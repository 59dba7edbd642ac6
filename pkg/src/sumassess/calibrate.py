"""Self-training loop: compare machine assessments to human annotations, then
consolidate per-type feedback reports that get appended to future prompts.

Score discrepancies are labeled deterministically; only the reasoning
comparison and the per-type consolidation use a model.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .assessor import SummaryEvaluation, predicted_existence
from .dataset import MeetingSample
from .errors import SchemaError, SumassessError
from .gateway import Gateway, make_request
from .prompt_kit import (
    JudgeSummary,
    ParseError,
    ValidationError,
    parse_structured,
    query_structured,
    render_consolidation,
    render_judge,
)
from .taxonomy import ErrorType, parse_error_code

logger = logging.getLogger(__name__)

# Prompt size cap: consolidation sees at most this many items per type,
# uniformly downsampled with a fixed seed.
MAX_CONSOLIDATION_ITEMS = 50


class CalibrationError(SumassessError):
    pass


class DiscrepancyLabel(Enum):
    NO_DIFFERENCE = "no_difference"
    MINOR_DIFFERENCE = "minor_difference"
    MODERATE_DIFFERENCE = "moderate_difference"
    MAJOR_DIFFERENCE = "major_difference"
    CRITICAL_DISAGREEMENT = "critical_disagreement"


def discrepancy_label(
    machine_rating: int,
    machine_exists: bool,
    human_rating: int,
    human_exists: bool,
) -> DiscrepancyLabel:
    """Deterministic label for a machine/human score pair.

    Conflicting existence always dominates; otherwise the label depends only
    on the absolute rating difference (0, 1, 2, >=3).
    """
    for name, value in (("machine_rating", machine_rating), ("human_rating", human_rating)):
        if not 0 <= value <= 5:
            raise ValueError(f"{name} must be in 0..5, got {value}")
    if machine_exists != human_exists:
        return DiscrepancyLabel.CRITICAL_DISAGREEMENT
    delta = abs(machine_rating - human_rating)
    if delta == 0:
        return DiscrepancyLabel.NO_DIFFERENCE
    if delta == 1:
        return DiscrepancyLabel.MINOR_DIFFERENCE
    if delta == 2:
        return DiscrepancyLabel.MODERATE_DIFFERENCE
    return DiscrepancyLabel.MAJOR_DIFFERENCE


@dataclass(frozen=True)
class JudgeOutcome:
    summary: JudgeSummary | None
    raw: str
    note: str = ""
    flagged: bool = False


def judge_reasoning(
    machine_reasoning: str,
    human_reasoning: str,
    gateway: Gateway,
    *,
    model_id: str,
    temperature: float = 0.0,
    max_tokens: int = 1024,
    seed: int | None = None,
) -> JudgeOutcome:
    """One judge call comparing the two reasoning traces.

    Empty human reasoning skips the call (with a recorded note); a judge
    response that fails to parse keeps the raw text and flags the outcome.
    """
    if not human_reasoning.strip():
        return JudgeOutcome(summary=None, raw="", note="skipped: human reasoning is empty")
    if not machine_reasoning.strip():
        return JudgeOutcome(summary=None, raw="", note="skipped: machine reasoning is empty")
    prompt = render_judge(machine_reasoning, human_reasoning)
    response = gateway.complete(
        make_request(model_id, prompt, temperature=temperature, max_tokens=max_tokens, seed=seed)
    )
    try:
        summary = parse_structured(response.text, "judge")
    except (ParseError, ValidationError) as exc:
        logger.warning("judge response failed to parse: %s", exc)
        return JudgeOutcome(summary=None, raw=response.text, note=f"judge output unparseable: {exc}", flagged=True)
    return JudgeOutcome(summary=summary, raw=response.text)


@dataclass(frozen=True)
class FeedbackItem:
    sample_id: str
    error_type: ErrorType
    label: DiscrepancyLabel
    machine_rating: int
    human_rating: int
    reasoning_judgment: str
    judge_raw: str
    flagged: bool = False


@dataclass(frozen=True)
class FeedbackReport:
    error_type: ErrorType
    iteration: int
    guidance: str
    item_count: int
    label_histogram: Mapping[str, int]

    def __post_init__(self) -> None:
        if self.iteration < 1:
            raise ValueError(f"iteration must be >= 1, got {self.iteration}")
        if self.item_count > 0 and not self.guidance.strip():
            raise ValueError("guidance must be non-empty when items were consolidated")
        if sum(self.label_histogram.values()) != self.item_count:
            raise ValueError("label_histogram must sum to item_count")


def _judgment_text(outcome: JudgeOutcome) -> str:
    if outcome.summary is None:
        return outcome.note
    summary = outcome.summary
    return f"completeness: {summary.completeness}; overlap: {summary.overlap}; logic: {summary.logic}"


def build_feedback_item(
    sample: MeetingSample,
    error_type: ErrorType,
    evaluation: SummaryEvaluation,
    gateway: Gateway,
    *,
    model_id: str,
    existence_from_verdicts: bool = False,
    temperature: float = 0.0,
    seed: int | None = None,
) -> FeedbackItem:
    assessment = evaluation.assessments[error_type]
    annotation = sample.annotations[error_type]  # type: ignore[index]
    label = discrepancy_label(
        machine_rating=assessment.rating,
        machine_exists=predicted_existence(assessment, from_verdicts=existence_from_verdicts),
        human_rating=annotation.score,
        human_exists=annotation.exists,
    )
    outcome = judge_reasoning(
        assessment.reasoning,
        annotation.reasoning,
        gateway,
        model_id=model_id,
        temperature=temperature,
        seed=seed,
    )
    return FeedbackItem(
        sample_id=sample.id,
        error_type=error_type,
        label=label,
        machine_rating=assessment.rating,
        human_rating=annotation.score,
        reasoning_judgment=_judgment_text(outcome),
        judge_raw=outcome.raw,
        flagged=outcome.flagged,
    )


def _format_items(items: Sequence[FeedbackItem]) -> str:
    lines = []
    for item in items:
        lines.append(
            json.dumps(
                {
                    "sample_id": item.sample_id,
                    "label": item.label.value,
                    "evaluator_rating": item.machine_rating,
                    "human_rating": item.human_rating,
                    "reasoning_judgment": item.reasoning_judgment,
                },
                ensure_ascii=False,
            )
        )
    return "\n".join(lines)


def consolidate_feedback(
    items: Sequence[FeedbackItem],
    gateway: Gateway,
    *,
    model_id: str,
    iteration: int = 1,
    max_items: int = MAX_CONSOLIDATION_ITEMS,
    seed: int = 0,
    temperature: float = 0.0,
    parse_retries: int = 2,
) -> FeedbackReport:
    """One consolidation call over all items of a single error type."""
    if not items:
        raise CalibrationError("consolidate_feedback needs at least one item")
    types = {item.error_type for item in items}
    if len(types) != 1:
        raise CalibrationError(f"items must share one error type, got {sorted(t.code for t in types)}")
    error_type = items[0].error_type
    shown = list(items)
    if len(shown) > max_items:
        rng = random.Random(seed)
        shown = [shown[i] for i in sorted(rng.sample(range(len(shown)), max_items))]
    prompt = render_consolidation(error_type.display_name, _format_items(shown))
    try:
        guidance, _ = query_structured(
            gateway, model_id, prompt, "consolidation", retries=parse_retries, temperature=temperature
        )
    except (ParseError, ValidationError) as exc:
        raise CalibrationError(f"consolidation failed for {error_type.code}: {exc}") from exc
    histogram = Counter(item.label.value for item in items)
    return FeedbackReport(
        error_type=error_type,
        iteration=iteration,
        guidance=guidance,
        item_count=len(items),
        label_histogram=dict(histogram),
    )


def run_self_training_iteration(
    predictions: Sequence[SummaryEvaluation],
    dataset: Sequence[MeetingSample],
    gateway: Gateway,
    *,
    model_id: str,
    prior: Mapping[ErrorType, FeedbackReport] | None = None,
    existence_from_verdicts: bool = False,
    seed: int = 0,
    out_path: str | Path | None = None,
) -> dict[ErrorType, FeedbackReport]:
    """Build feedback items for every (sample, type) with both machine and human
    data, then consolidate them per error type.

    Guidance accumulates across iterations: when a prior report map is given,
    the new guidance is appended to the prior text and the iteration counter
    advances, so later prompts still contain earlier guidance verbatim.
    """
    by_id = {sample.id: sample for sample in dataset}
    items: dict[ErrorType, list[FeedbackItem]] = {}
    for evaluation in predictions:
        sample = by_id.get(evaluation.sample_id)
        if sample is None or not sample.annotations:
            continue
        for error_type in evaluation.assessments:
            if error_type not in sample.annotations:
                continue
            item = build_feedback_item(
                sample,
                error_type,
                evaluation,
                gateway,
                model_id=model_id,
                existence_from_verdicts=existence_from_verdicts,
                seed=None,
            )
            items.setdefault(error_type, []).append(item)
    if not items:
        raise CalibrationError("no overlapping annotated samples between predictions and dataset")

    reports: dict[ErrorType, FeedbackReport] = {}
    for error_type, type_items in items.items():
        previous = prior.get(error_type) if prior else None
        iteration = previous.iteration + 1 if previous else 1
        report = consolidate_feedback(
            type_items, gateway, model_id=model_id, iteration=iteration, seed=seed
        )
        if previous:
            report = FeedbackReport(
                error_type=error_type,
                iteration=iteration,
                guidance=f"{previous.guidance}\n\n{report.guidance}",
                item_count=report.item_count,
                label_histogram=report.label_histogram,
            )
        reports[error_type] = report
    if out_path is not None:
        save_feedback(reports, out_path)
    return reports


def feedback_prompt_map(reports: Mapping[ErrorType, FeedbackReport]) -> dict[ErrorType, str]:
    """Guidance texts keyed by type, the shape AssessmentConfig.feedback expects."""
    return {error_type: report.guidance for error_type, report in reports.items()}


def save_feedback(reports: Mapping[ErrorType, FeedbackReport], path: str | Path) -> None:
    payload = {
        error_type.code: {
            "iteration": report.iteration,
            "guidance": report.guidance,
            "item_count": report.item_count,
            "label_histogram": dict(report.label_histogram),
        }
        for error_type, report in reports.items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def load_feedback(path: str | Path) -> dict[ErrorType, FeedbackReport]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: feedback file must be a JSON object keyed by error code")
    reports = {}
    for code, entry in raw.items():
        error_type = parse_error_code(code)
        for required in ("iteration", "guidance", "item_count", "label_histogram"):
            if required not in entry:
                raise SchemaError(f"{path}: entry {code} is missing field '{required}'")
        reports[error_type] = FeedbackReport(
            error_type=error_type,
            iteration=entry["iteration"],
            guidance=entry["guidance"],
            item_count=entry["item_count"],
            label_histogram=dict(entry["label_histogram"]),
        )
    return reports

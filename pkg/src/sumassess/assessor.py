"""Per-error-type assessment pipelines: three-step, single-step, and multi-aspect.

Each error type is evaluated in isolation (its prompts never mention another
type's definition). The three-step pipeline identifies candidate instances,
rates each candidate, then assigns the final 0-5 rating; every step is one
model round-trip informed by the previous step's result, optionally wrapped
in a debate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping

from .aggregate import DegenerateWeightsError, WeightedRating, impact_score, quality_score, scale_confidence
from .dataset import MeetingSample
from .debate import DebateFailedError, DiscussionTranscript, default_rosters, run_debate
from .errors import SumassessError
from .gateway import Gateway, ProviderError
from .prompt_kit import (
    CandidateInstance,
    InstanceVerdict,
    ParseError,
    StepThreeVerdict,
    ValidationError,
    query_structured,
    render_multi_aspect,
    render_single_step,
    render_step1,
    render_step2,
    render_step3,
)
from .taxonomy import ErrorGuideline, ErrorType, GuidelineSet, parse_error_code

logger = logging.getLogger(__name__)

MODES = ("three_step", "single_step", "multi_aspect")
DEBATE_KINDS = ("off", "single_model", "multi_model")

# Emitted when step 1 finds nothing and steps 2/3 are skipped.
NO_CANDIDATES_REASONING = "No candidate error instances were identified for this error type."


class AssessmentFailedError(SumassessError):
    """A pipeline step could not produce a valid result within its retry budget."""

    def __init__(self, step: str, sample_id: str, error_type: ErrorType, cause: Exception):
        super().__init__(f"sample {sample_id!r}, error type {error_type.code}, {step}: {cause}")
        self.step = step
        self.sample_id = sample_id
        self.error_type = error_type


@dataclass(frozen=True)
class AssessmentConfig:
    mode: str = "three_step"
    debate: str = "off"
    challenger_count: int = 3
    primary_model: str = "gpt-4o"
    alternate_models: tuple[str, ...] = ()
    feedback: Mapping[ErrorType, str] | None = None
    feedback_iteration: int = 0
    error_types: tuple[ErrorType, ...] | None = None
    temperature: float = 0.0
    max_tokens: int = 2048
    seed: int | None = None
    parse_retries: int = 2
    existence_from_verdicts: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.debate not in DEBATE_KINDS:
            raise ValueError(f"unknown debate kind {self.debate!r}; expected one of {DEBATE_KINDS}")
        if self.debate != "off" and self.challenger_count < 1:
            raise ValueError("challenger_count must be >= 1 when debate is on")
        if self.debate == "multi_model":
            distinct = {self.primary_model, *self.alternate_models}
            if len(distinct) < 2:
                raise ValueError("multi_model debate requires at least 2 distinct model ids")
            if len(self.alternate_models) < self.challenger_count:
                raise ValueError(
                    f"multi_model debate with {self.challenger_count} challengers needs that many alternate models"
                )

    def feedback_for(self, error_type: ErrorType) -> str | None:
        if self.feedback is None:
            return None
        return self.feedback.get(error_type)


@dataclass
class ErrorTypeAssessment:
    """Full trace of one error type's evaluation."""

    error_type: ErrorType
    candidates: list[CandidateInstance] = field(default_factory=list)
    verdicts: list[InstanceVerdict] = field(default_factory=list)
    rating: int = 0
    confidence: int = 10
    reasoning: str = ""
    short_circuited: bool = False
    debate_transcripts: dict[str, DiscussionTranscript] | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.rating <= 5:
            raise ValueError(f"rating must be in 0..5, got {self.rating}")
        if not 0 <= self.confidence <= 10:
            raise ValueError(f"confidence must be in 0..10, got {self.confidence}")
        if self.short_circuited and (self.candidates or self.rating != 0 or self.confidence != 10):
            raise ValueError("a short-circuited assessment must have no candidates, rating 0, confidence 10")
        known_instances = {c.instance for c in self.candidates}
        for verdict in self.verdicts:
            if verdict.instance not in known_instances:
                raise ValueError(f"verdict references unknown candidate instance {verdict.instance!r}")

    def to_dict(self) -> dict:
        entry: dict = {
            "error_type": self.error_type.code,
            "candidates": [c.to_dict() for c in self.candidates],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "rating": self.rating,
            "confidence": self.confidence,
            "reasoning": self.reasoning,
            "short_circuited": self.short_circuited,
        }
        if self.debate_transcripts:
            entry["debate_transcripts"] = {step: t.to_dict() for step, t in self.debate_transcripts.items()}
        return entry

    @classmethod
    def from_dict(cls, entry: dict) -> "ErrorTypeAssessment":
        transcripts = None
        if entry.get("debate_transcripts"):
            transcripts = {
                step: DiscussionTranscript.from_dict(t) for step, t in entry["debate_transcripts"].items()
            }
        return cls(
            error_type=parse_error_code(entry["error_type"]),
            candidates=[CandidateInstance(**c) for c in entry["candidates"]],
            verdicts=[InstanceVerdict(**v) for v in entry["verdicts"]],
            rating=entry["rating"],
            confidence=entry["confidence"],
            reasoning=entry["reasoning"],
            short_circuited=entry["short_circuited"],
            debate_transcripts=transcripts,
        )


@dataclass(frozen=True)
class RunMetadata:
    mode: str
    debate: str
    feedback_iteration: int = 0
    # Populated on live runs only; scripted and replay runs stay byte-reproducible.
    timestamp: str | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "debate": self.debate,
            "feedback_iteration": self.feedback_iteration,
            "timestamp": self.timestamp,
        }


@dataclass
class SummaryEvaluation:
    """Per-type assessments plus the aggregate impact and quality scores."""

    sample_id: str
    assessments: dict[ErrorType, ErrorTypeAssessment]
    impact: float | None
    quality: float | None
    partial: bool
    failures: dict[ErrorType, str]
    run_metadata: RunMetadata

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "assessments": {t.code: a.to_dict() for t, a in self.assessments.items()},
            "impact": self.impact,
            "quality": self.quality,
            "partial": self.partial,
            "failures": {t.code: message for t, message in self.failures.items()},
            "run_metadata": self.run_metadata.to_dict(),
        }

    @classmethod
    def from_dict(cls, entry: dict) -> "SummaryEvaluation":
        metadata = entry["run_metadata"]
        return cls(
            sample_id=entry["sample_id"],
            assessments={
                parse_error_code(code): ErrorTypeAssessment.from_dict(a)
                for code, a in entry["assessments"].items()
            },
            impact=entry["impact"],
            quality=entry["quality"],
            partial=entry["partial"],
            failures={parse_error_code(code): message for code, message in entry["failures"].items()},
            run_metadata=RunMetadata(
                mode=metadata["mode"],
                debate=metadata["debate"],
                feedback_iteration=metadata.get("feedback_iteration", 0),
                timestamp=metadata.get("timestamp"),
            ),
        )


def predicted_existence(assessment: ErrorTypeAssessment, *, from_verdicts: bool = False) -> bool:
    """Whether the assessment claims the error type is present.

    Default: rating >= 1. The alternative reads the step-2 verdicts instead.
    """
    if from_verdicts:
        return any(v.error_exists for v in assessment.verdicts)
    return assessment.rating >= 1


def _step_value(
    gateway: Gateway,
    config: AssessmentConfig,
    prompt: str,
    schema: str,
    step_name: str,
    sample_id: str,
    error_type: ErrorType,
    transcripts: dict[str, DiscussionTranscript],
) -> Any:
    try:
        if config.debate == "off":
            value, _ = query_structured(
                gateway,
                config.primary_model,
                prompt,
                schema,
                retries=config.parse_retries,
                temperature=config.temperature,
                max_tokens=config.max_tokens,
                seed=config.seed,
            )
        else:
            agents = default_rosters(
                config.debate, config.primary_model, config.alternate_models, config.challenger_count
            )
            value, transcript = run_debate(
                prompt,
                schema,
                agents,
                gateway,
                parse_retries=config.parse_retries,
                temperature=config.temperature,
                max_tokens=config.max_tokens,
                seed=config.seed,
            )
            transcripts[step_name] = transcript
    except (ParseError, ValidationError, DebateFailedError) as exc:
        raise AssessmentFailedError(step_name, sample_id, error_type, exc) from exc
    return value


def assess_error_type(
    sample: MeetingSample,
    guideline: ErrorGuideline,
    config: AssessmentConfig,
    gateway: Gateway,
) -> ErrorTypeAssessment:
    """Three-step assessment of one error type on one sample.

    An empty step-1 candidate list short-circuits the pipeline: no step 2/3
    calls, rating 0 with full confidence.
    """
    if config.mode != "three_step":
        raise ValueError(f"assess_error_type requires mode 'three_step', config has {config.mode!r}")
    error_type = guideline.error_type
    feedback = config.feedback_for(error_type)
    transcripts: dict[str, DiscussionTranscript] = {}

    prompt1 = render_step1(guideline, sample, feedback)
    candidates: list[CandidateInstance] = _step_value(
        gateway, config, prompt1, "step1", "step1", sample.id, error_type, transcripts
    )
    if not candidates:
        return ErrorTypeAssessment(
            error_type=error_type,
            reasoning=NO_CANDIDATES_REASONING,
            short_circuited=True,
            debate_transcripts=transcripts or None,
        )

    prompt2 = render_step2(guideline, sample, candidates, feedback)
    verdicts: list[InstanceVerdict] = _step_value(
        gateway, config, prompt2, "step2", "step2", sample.id, error_type, transcripts
    )
    known = {c.instance for c in candidates}
    strays = [v.instance for v in verdicts if v.instance not in known]
    if strays:
        raise AssessmentFailedError(
            "step2",
            sample.id,
            error_type,
            ValidationError("instance", f"verdicts reference unknown candidates: {strays[:3]!r}"),
        )

    prompt3 = render_step3(guideline, sample, verdicts, feedback)
    scoring: StepThreeVerdict = _step_value(
        gateway, config, prompt3, "step3", "step3", sample.id, error_type, transcripts
    )
    return ErrorTypeAssessment(
        error_type=error_type,
        candidates=candidates,
        verdicts=verdicts,
        rating=scoring.rating,
        confidence=scoring.confidence,
        reasoning=scoring.reasoning,
        debate_transcripts=transcripts or None,
    )


def single_step_assess(
    sample: MeetingSample,
    guideline: ErrorGuideline,
    config: AssessmentConfig,
    gateway: Gateway,
) -> ErrorTypeAssessment:
    """One direct rating prompt for one error type; no candidates or verdicts."""
    if config.mode != "single_step":
        raise ValueError(f"single_step_assess requires mode 'single_step', config has {config.mode!r}")
    error_type = guideline.error_type
    transcripts: dict[str, DiscussionTranscript] = {}
    prompt = render_single_step(guideline, sample, config.feedback_for(error_type))
    scoring: StepThreeVerdict = _step_value(
        gateway, config, prompt, "step3", "single_step", sample.id, error_type, transcripts
    )
    return ErrorTypeAssessment(
        error_type=error_type,
        rating=scoring.rating,
        confidence=scoring.confidence,
        reasoning=scoring.reasoning,
        debate_transcripts=transcripts or None,
    )


def multi_aspect_assess(
    sample: MeetingSample,
    guidelines: Iterable[ErrorGuideline],
    config: AssessmentConfig,
    gateway: Gateway,
) -> dict[ErrorType, ErrorTypeAssessment]:
    """One combined prompt covering all requested error types.

    The response must contain exactly one rating block per requested type.
    """
    if config.mode != "multi_aspect":
        raise ValueError(f"multi_aspect_assess requires mode 'multi_aspect', config has {config.mode!r}")
    guidelines = list(guidelines)
    requested = [g.error_type for g in guidelines]
    feedback = None
    if config.feedback:
        feedback = {t.code: text for t, text in config.feedback.items() if t in requested}
    prompt = render_multi_aspect(guidelines, sample, feedback or None)
    transcripts: dict[str, DiscussionTranscript] = {}
    # The combined prompt carries every requested type, so failures apply to all of them.
    first_type = requested[0]
    blocks: dict[str, StepThreeVerdict] = _step_value(
        gateway, config, prompt, "multi_aspect", "multi_aspect", sample.id, first_type, transcripts
    )
    missing = [t.code for t in requested if t.code not in blocks]
    if missing:
        raise AssessmentFailedError(
            "multi_aspect",
            sample.id,
            first_type,
            ValidationError(",".join(missing), "response is missing rating blocks for requested error types"),
        )
    extra = [code for code in blocks if code not in {t.code for t in requested}]
    if extra:
        raise AssessmentFailedError(
            "multi_aspect",
            sample.id,
            first_type,
            ValidationError(",".join(extra), "response contains rating blocks for unrequested error types"),
        )
    assessments = {}
    for error_type in requested:
        scoring = blocks[error_type.code]
        assessments[error_type] = ErrorTypeAssessment(
            error_type=error_type,
            rating=scoring.rating,
            confidence=scoring.confidence,
            reasoning=scoring.reasoning,
            debate_transcripts=transcripts or None,
        )
    return assessments


def _requested_guidelines(config: AssessmentConfig, guidelines: GuidelineSet) -> list[ErrorGuideline]:
    if config.error_types is None:
        return list(guidelines)
    return [guidelines.get(t) for t in config.error_types]


def assess_sample(
    sample: MeetingSample,
    config: AssessmentConfig,
    gateway: Gateway,
    guidelines: GuidelineSet,
) -> SummaryEvaluation:
    """Assess every requested error type and aggregate impact and quality.

    A per-type failure marks that type failed and flags the evaluation as
    partial; the aggregate is computed over the surviving types.
    """
    requested = _requested_guidelines(config, guidelines)
    assessments: dict[ErrorType, ErrorTypeAssessment] = {}
    failures: dict[ErrorType, str] = {}
    live_calls_before = getattr(gateway, "live_call_count", 0)

    if config.mode == "multi_aspect":
        try:
            assessments = multi_aspect_assess(sample, requested, config, gateway)
        except (AssessmentFailedError, ProviderError) as exc:
            failures = {g.error_type: str(exc) for g in requested}
    else:
        assess_one = assess_error_type if config.mode == "three_step" else single_step_assess
        for guideline in requested:
            try:
                assessments[guideline.error_type] = assess_one(sample, guideline, config, gateway)
            except (AssessmentFailedError, ProviderError) as exc:
                logger.warning("sample %r: %s", sample.id, exc)
                failures[guideline.error_type] = str(exc)

    impact: float | None = None
    quality: float | None = None
    if assessments:
        by_type = {g.error_type: g for g in requested}
        try:
            impact = impact_score(
                WeightedRating(
                    rating=a.rating,
                    confidence=scale_confidence(a.confidence),
                    importance=by_type[t].importance,
                )
                for t, a in assessments.items()
            )
            quality = quality_score(impact)
        except DegenerateWeightsError as exc:
            logger.warning("sample %r: aggregate undefined: %s", sample.id, exc)

    # wall-clock metadata only when the provider was actually hit: fully cached,
    # scripted, and replay evaluations stay byte-reproducible
    timestamp = None
    if getattr(gateway, "live_call_count", 0) > live_calls_before:
        timestamp = datetime.now(timezone.utc).isoformat()

    return SummaryEvaluation(
        sample_id=sample.id,
        assessments=assessments,
        impact=impact,
        quality=quality,
        partial=bool(failures),
        failures=failures,
        run_metadata=RunMetadata(
            mode=config.mode,
            debate=config.debate,
            feedback_iteration=config.feedback_iteration,
            timestamp=timestamp,
        ),
    )


def save_predictions(evaluations: Iterable[SummaryEvaluation], path: str | Path) -> None:
    """Write one JSON document per evaluation as JSON lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for evaluation in evaluations:
            handle.write(json.dumps(evaluation.to_dict(), ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[SummaryEvaluation]:
    evaluations = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                evaluations.append(SummaryEvaluation.from_dict(json.loads(line)))
    return evaluations

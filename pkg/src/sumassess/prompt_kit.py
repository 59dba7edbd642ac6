"""Prompt templates and structured-output handling for the assessment pipeline.

Templates are plain UTF-8 files with ``{placeholder}`` slots, shipped with the
package. Rendering is strict: every required placeholder must be bound, and
bindings for unknown placeholders are rejected. Model responses are parsed
through a tolerant pipeline (fence stripping, prose trimming, quote repair)
followed by strict range validation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

from .dataset import MeetingSample
from .errors import SumassessError
from .gateway import Gateway, make_request
from .taxonomy import ErrorGuideline, UnknownErrorCodeError, parse_error_code

FEEDBACK_HEADER = "Additional guidance from prior calibration:"
RETRY_REMINDER = "Return valid JSON only."

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```", re.DOTALL)

SCHEMAS = ("step1", "step2", "step3", "judge", "consolidation", "multi_aspect")


class TemplateError(SumassessError):
    pass


class ParseError(SumassessError):
    """The response is not valid JSON, even after repair. Carries the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ValidationError(SumassessError):
    """Parsed JSON violates the schema. Names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"field '{field}': {message}")
        self.field = field


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    template_text: str
    required_placeholders: frozenset[str]

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.template_text))

    def render(self, bindings: Mapping[str, str]) -> str:
        known = self.placeholders
        unknown = set(bindings) - known
        if unknown:
            raise TemplateError(f"template {self.name}: unknown placeholders in bindings: {sorted(unknown)}")
        missing = self.required_placeholders - set(bindings)
        if missing:
            raise TemplateError(f"template {self.name}: unbound required placeholders: {sorted(missing)}")

        def substitute(match: re.Match) -> str:
            name = match.group(1)
            return str(bindings[name]) if name in bindings else match.group(0)

        return _PLACEHOLDER_RE.sub(substitute, self.template_text)


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    """Load a packaged template; trailing newlines are stripped so the feedback
    append rule controls terminal whitespace."""
    text = resources.files("sumassess.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    text = text.rstrip("\n")
    required = frozenset(_PLACEHOLDER_RE.findall(text))
    return PromptTemplate(name=name, template_text=text, required_placeholders=required)


# ---------------------------------------------------------------------------
# Structured values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateInstance:
    """A possible error instance proposed in step 1."""

    instance: str
    reasoning: str
    certainty: int  # 0..100

    def __post_init__(self) -> None:
        if not self.instance:
            raise ValueError("instance must be non-empty")
        if not 0 <= self.certainty <= 100:
            raise ValueError(f"certainty must be in 0..100, got {self.certainty}")

    def to_dict(self) -> dict:
        return {"instance": self.instance, "reasoning": self.reasoning, "certainty": self.certainty}


@dataclass(frozen=True)
class InstanceVerdict:
    """Step-2 decision for one candidate instance."""

    instance: str
    reasoning: str
    severity: int  # 0..10
    certainty: int  # accepted on either a 0-10 or a 0-100 scale, see certainty_scale
    error_exists: bool

    def __post_init__(self) -> None:
        if not 0 <= self.severity <= 10:
            raise ValueError(f"severity must be in 0..10, got {self.severity}")
        if self.severity == 0 and self.error_exists:
            raise ValueError("severity 0 implies error_exists false")
        if not 0 <= self.certainty <= 100:
            raise ValueError(f"certainty must be in 0..100, got {self.certainty}")

    @property
    def certainty_scale(self) -> str:
        """Which scale the response appears to use for certainty."""
        return "0-10" if self.certainty <= 10 else "0-100"

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "reasoning": self.reasoning,
            "severity": self.severity,
            "certainty": self.certainty,
            "error_exists": self.error_exists,
        }


@dataclass(frozen=True)
class StepThreeVerdict:
    """Final per-type scoring: 0-5 rating with a 0-10 confidence."""

    reasoning: str
    confidence: int
    rating: int

    def __post_init__(self) -> None:
        if not 0 <= self.confidence <= 10:
            raise ValueError(f"confidence must be in 0..10, got {self.confidence}")
        if not 0 <= self.rating <= 5:
            raise ValueError(f"rating must be in 0..5, got {self.rating}")

    def to_dict(self) -> dict:
        return {"reasoning": self.reasoning, "confidence": self.confidence, "rating": self.rating}


@dataclass(frozen=True)
class JudgeSummary:
    """Three-aspect judgment of a reasoning trace."""

    completeness: str
    overlap: str
    logic: str

    def to_dict(self) -> dict:
        return {"completeness": self.completeness, "overlap": self.overlap, "logic": self.logic}


def serialize_candidates(candidates: Sequence[CandidateInstance]) -> str:
    """Canonical JSON for a candidate list (fixed key order, no ASCII escaping)."""
    return json.dumps([c.to_dict() for c in candidates], ensure_ascii=False)


def serialize_verdicts(verdicts: Sequence[InstanceVerdict]) -> str:
    return json.dumps([v.to_dict() for v in verdicts], ensure_ascii=False)


def serialize_scoring(verdict: StepThreeVerdict) -> str:
    return json.dumps(verdict.to_dict(), ensure_ascii=False)


def serialize_judge(summary: JudgeSummary) -> str:
    return json.dumps(summary.to_dict(), ensure_ascii=False)


def serialize_consolidation(guidance: str) -> str:
    return json.dumps({"guidance": guidance}, ensure_ascii=False)


def serialize_multi_aspect(blocks: Mapping[str, StepThreeVerdict]) -> str:
    return json.dumps({code: verdict.to_dict() for code, verdict in blocks.items()}, ensure_ascii=False)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def append_feedback(prompt: str, feedback: str | None) -> str:
    if feedback is None:
        return prompt
    return f"{prompt}\n\n{FEEDBACK_HEADER}\n{feedback}"


def render_step1(guideline: ErrorGuideline, sample: MeetingSample, feedback: str | None = None) -> str:
    prompt = load_template("step1").render(
        {
            "criteria": guideline.error_type.display_name,
            "criteria_definition": guideline.prompt_definition,
            "summary": sample.summary,
            "transcript": sample.transcript,
        }
    )
    return append_feedback(prompt, feedback)


def render_step2(
    guideline: ErrorGuideline,
    sample: MeetingSample,
    instances: Sequence[CandidateInstance],
    feedback: str | None = None,
) -> str:
    prompt = load_template("step2").render(
        {
            "criteria": guideline.error_type.display_name,
            "criteria_definition": guideline.prompt_definition,
            "list_of_instances": serialize_candidates(instances),
            "summary": sample.summary,
            "transcript": sample.transcript,
        }
    )
    return append_feedback(prompt, feedback)


def render_step3(
    guideline: ErrorGuideline,
    sample: MeetingSample,
    verdicts: Sequence[InstanceVerdict],
    feedback: str | None = None,
) -> str:
    prompt = load_template("step3").render(
        {
            "criteria": guideline.error_type.display_name,
            "criteria_definition": guideline.prompt_definition,
            "list_of_instances": serialize_verdicts(verdicts),
            "summary": sample.summary,
            "transcript": sample.transcript,
        }
    )
    return append_feedback(prompt, feedback)


def render_single_step(guideline: ErrorGuideline, sample: MeetingSample, feedback: str | None = None) -> str:
    prompt = load_template("single_step").render(
        {
            "criteria": guideline.error_type.display_name,
            "criteria_definition": guideline.prompt_definition,
            "summary": sample.summary,
            "transcript": sample.transcript,
        }
    )
    return append_feedback(prompt, feedback)


def format_criteria_list(guidelines: Sequence[ErrorGuideline]) -> str:
    return "\n".join(
        f"*** {g.error_type.code}: {g.prompt_definition} ***." for g in guidelines
    )


def render_multi_aspect(
    guidelines: Sequence[ErrorGuideline],
    sample: MeetingSample,
    feedback: Mapping[str, str] | None = None,
) -> str:
    prompt = load_template("multi_aspect").render(
        {
            "criteria_list": format_criteria_list(guidelines),
            "summary": sample.summary,
            "transcript": sample.transcript,
        }
    )
    if feedback:
        combined = "\n".join(f"[{code}] {text}" for code, text in feedback.items())
        prompt = append_feedback(prompt, combined)
    return prompt


def render_challenger(task_prompt: str, draft: str) -> str:
    return load_template("challenger").render({"task_prompt": task_prompt, "draft": draft})


def format_critiques(critiques: Sequence[str]) -> str:
    return "\n\n".join(f"Challenger {i + 1}:\n{text}" for i, text in enumerate(critiques))


def render_moderator(task_prompt: str, draft: str, critiques: Sequence[str]) -> str:
    return load_template("moderator").render(
        {"task_prompt": task_prompt, "draft": draft, "critiques": format_critiques(critiques)}
    )


def render_judge(machine_reasoning: str, human_reasoning: str) -> str:
    return load_template("judge").render(
        {"machine_reasoning": machine_reasoning, "human_reasoning": human_reasoning}
    )


def render_consolidation(criteria: str, items: str) -> str:
    return load_template("consolidation").render({"criteria": criteria, "items": items})


# ---------------------------------------------------------------------------
# Parsing and repair
# ---------------------------------------------------------------------------


def repair_quotes(text: str) -> str:
    """Convert single-quoted strings to double-quoted JSON strings.

    Content inside well-formed double-quoted strings is never touched. A
    single-quoted string is considered closed at a quote that is followed
    (after whitespace) by one of ``: , } ]`` or the end of input, which keeps
    apostrophes inside values intact.
    """
    out: list[str] = []
    i = 0
    n = len(text)
    in_double = False
    while i < n:
        ch = text[i]
        if in_double:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_double = False
            i += 1
            continue
        if ch == '"':
            in_double = True
            out.append(ch)
            i += 1
            continue
        if ch == "'":
            end = _find_single_quote_end(text, i)
            if end == -1:
                out.append(ch)
                i += 1
                continue
            out.append(json.dumps(text[i + 1 : end], ensure_ascii=False))
            i = end + 1
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def _find_single_quote_end(text: str, start: int) -> int:
    n = len(text)
    j = start + 1
    while j < n:
        if text[j] == "'":
            k = j + 1
            while k < n and text[k] in " \t\r\n":
                k += 1
            if k >= n or text[k] in ":,}]":
                return j
        j += 1
    return -1


def _extract_payload(text: str) -> str:
    fence = _FENCE_RE.search(text)
    if fence:
        text = fence.group(1)
    starts = [pos for pos in (text.find("["), text.find("{")) if pos != -1]
    ends = [pos for pos in (text.rfind("]"), text.rfind("}")) if pos != -1]
    if starts and ends and max(ends) > min(starts):
        text = text[min(starts) : max(ends) + 1]
    return text.strip()


def _coerce_int(value: Any, field: str) -> int:
    if isinstance(value, bool):
        raise ValidationError(field, f"expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        stripped = value.strip()
        if stripped.lstrip("+-").isdigit():
            return int(stripped)
    raise ValidationError(field, f"expected an integer, got {value!r}")


def _coerce_bool(value: Any, field: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered == "true":
            return True
        if lowered == "false":
            return False
    raise ValidationError(field, f"expected a boolean, got {value!r}")


def _require_str(entry: Mapping, field: str, *, allow_empty: bool = True) -> str:
    if field not in entry:
        raise ValidationError(field, "missing")
    value = entry[field]
    if not isinstance(value, str):
        raise ValidationError(field, f"expected a string, got {value!r}")
    if not allow_empty and not value:
        raise ValidationError(field, "must be non-empty")
    return value


def _require_int(entry: Mapping, field: str, low: int, high: int) -> int:
    if field not in entry:
        raise ValidationError(field, "missing")
    value = _coerce_int(entry[field], field)
    if not low <= value <= high:
        raise ValidationError(field, f"must be in {low}..{high}, got {value}")
    return value


def _require_list(value: Any) -> list:
    if not isinstance(value, list):
        raise ValidationError("(root)", f"expected a JSON array, got {type(value).__name__}")
    return value


def _require_objects(items: list) -> list[Mapping]:
    for index, item in enumerate(items):
        if not isinstance(item, Mapping):
            raise ValidationError(f"[{index}]", "expected a JSON object")
    return items


def _validate_step1(value: Any) -> list[CandidateInstance]:
    items = _require_objects(_require_list(value))
    candidates = []
    for entry in items:
        candidates.append(
            CandidateInstance(
                instance=_require_str(entry, "instance", allow_empty=False),
                reasoning=_require_str(entry, "reasoning"),
                certainty=_require_int(entry, "certainty", 0, 100),
            )
        )
    return candidates


def _validate_step2(value: Any) -> list[InstanceVerdict]:
    items = _require_objects(_require_list(value))
    verdicts = []
    for entry in items:
        exists = _coerce_bool(entry.get("error_exists"), "error_exists") if "error_exists" in entry else None
        if exists is None:
            raise ValidationError("error_exists", "missing")
        if "severity" in entry:
            severity = _require_int(entry, "severity", 0, 10)
        elif not exists:
            # The step-2 format block omits severity; absence is meaningful
            # only for non-errors.
            severity = 0
        else:
            raise ValidationError("severity", "missing for an instance marked error_exists=true")
        if severity == 0 and exists:
            raise ValidationError("severity", "severity 0 conflicts with error_exists=true")
        verdicts.append(
            InstanceVerdict(
                instance=_require_str(entry, "instance", allow_empty=False),
                reasoning=_require_str(entry, "reasoning"),
                severity=severity,
                certainty=_require_int(entry, "certainty", 0, 100),
                error_exists=exists,
            )
        )
    return verdicts


def _validate_step3(value: Any) -> StepThreeVerdict:
    if not isinstance(value, Mapping):
        raise ValidationError("(root)", "expected a JSON object")
    return StepThreeVerdict(
        reasoning=_require_str(value, "reasoning"),
        confidence=_require_int(value, "confidence", 0, 10),
        rating=_require_int(value, "rating", 0, 5),
    )


def _validate_judge(value: Any) -> JudgeSummary:
    if not isinstance(value, Mapping):
        raise ValidationError("(root)", "expected a JSON object")
    return JudgeSummary(
        completeness=_require_str(value, "completeness"),
        overlap=_require_str(value, "overlap"),
        logic=_require_str(value, "logic"),
    )


def _validate_consolidation(value: Any) -> str:
    if not isinstance(value, Mapping):
        raise ValidationError("(root)", "expected a JSON object")
    return _require_str(value, "guidance", allow_empty=False)


def _validate_multi_aspect(value: Any) -> dict[str, StepThreeVerdict]:
    if not isinstance(value, Mapping):
        raise ValidationError("(root)", "expected a JSON object")
    blocks: dict[str, StepThreeVerdict] = {}
    for code, block in value.items():
        try:
            error_type = parse_error_code(str(code))
        except UnknownErrorCodeError as exc:
            raise ValidationError(str(code), str(exc)) from exc
        if error_type.code in blocks:
            raise ValidationError(str(code), "duplicate error type in response")
        if not isinstance(block, Mapping):
            raise ValidationError(str(code), "expected a JSON object per error type")
        blocks[error_type.code] = _validate_step3(block)
    return blocks


_VALIDATORS: dict[str, Callable[[Any], Any]] = {
    "step1": _validate_step1,
    "step2": _validate_step2,
    "step3": _validate_step3,
    "judge": _validate_judge,
    "consolidation": _validate_consolidation,
    "multi_aspect": _validate_multi_aspect,
}


def parse_structured(text: str, schema: str):
    """Parse a model response against a schema.

    Pipeline: strip code fences and surrounding prose, try a strict JSON
    parse, on failure repair single quotes outside double-quoted strings and
    retry, then validate ranges. Raises ParseError (with the raw text) or
    ValidationError (naming the field).
    """
    if schema not in _VALIDATORS:
        raise ValueError(f"unknown schema {schema!r}; known: {', '.join(SCHEMAS)}")
    payload = _extract_payload(text)
    try:
        value = json.loads(payload)
    except json.JSONDecodeError:
        try:
            value = json.loads(repair_quotes(payload))
        except json.JSONDecodeError as exc:
            raise ParseError(f"response is not valid JSON after repair: {exc}", raw=text) from exc
    return _VALIDATORS[schema](value)


def query_structured(
    gateway: Gateway,
    model_id: str,
    prompt: str,
    schema: str,
    *,
    retries: int = 2,
    temperature: float = 0.0,
    max_tokens: int = 2048,
    seed: int | None = None,
):
    """Ask for a structured answer, re-asking on parse failure.

    Each re-ask appends a numbered "valid JSON" reminder so the retry is a
    distinct request (and a distinct cache entry). Returns (value, raw text);
    raises the last ParseError/ValidationError once the budget is exhausted.
    """
    last_error: SumassessError | None = None
    for attempt in range(retries + 1):
        attempt_prompt = prompt if attempt == 0 else f"{prompt}\n\n{RETRY_REMINDER} (attempt {attempt + 1})"
        response = gateway.complete(
            make_request(model_id, attempt_prompt, temperature=temperature, max_tokens=max_tokens, seed=seed)
        )
        try:
            return parse_structured(response.text, schema), response.text
        except (ParseError, ValidationError) as exc:
            last_error = exc
    assert last_error is not None
    raise last_error

"""Loading, validating, and summarizing meeting samples and their human annotations."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .errors import SchemaError
from .taxonomy import ErrorType, UnknownErrorCodeError, parse_error_code

logger = logging.getLogger(__name__)

_TURN_RE = re.compile(r"^\s*([^:\n]+?)\s*:\s?(.*)$")


@dataclass(frozen=True)
class HumanAnnotation:
    """Consensus human judgment for one error type on one sample.

    ``score`` is a 0-5 Likert rating (0 = no impact, 5 = severe impact).
    """

    score: int
    exists: bool
    reasoning: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.score, int) or isinstance(self.score, bool) or not 0 <= self.score <= 5:
            raise ValueError(f"annotation score must be an integer in 0..5, got {self.score!r}")


@dataclass(frozen=True)
class MeetingSample:
    """One transcript/summary pair, optionally with per-type human annotations."""

    id: str
    source: str
    transcript: str
    summary: str
    gold_summary: str | None = None
    annotations: Mapping[ErrorType, HumanAnnotation] | None = None

    def __post_init__(self) -> None:
        if not self.id.strip():
            raise ValueError("sample id must be non-empty")
        if not self.transcript.strip():
            raise ValueError(f"sample {self.id!r}: transcript must be non-empty")
        if not self.summary.strip():
            raise ValueError(f"sample {self.id!r}: summary must be non-empty")
        if self.annotations is not None:
            object.__setattr__(self, "annotations", MappingProxyType(dict(self.annotations)))

    def annotation_for(self, error_type: ErrorType) -> HumanAnnotation | None:
        if self.annotations is None:
            return None
        return self.annotations.get(error_type)


@dataclass(frozen=True)
class DatasetStats:
    sample_count: int
    mean_turns: float
    mean_speakers: float
    mean_transcript_words: float
    mean_summary_words: float
    erroneous_sample_count: int


def _annotation_from_dict(sample_id: str, code: str, entry: object) -> tuple[ErrorType, HumanAnnotation]:
    try:
        error_type = parse_error_code(code)
    except UnknownErrorCodeError as exc:
        raise SchemaError(f"sample {sample_id!r}: annotation key {code!r}: {exc}") from exc
    if not isinstance(entry, dict):
        raise SchemaError(f"sample {sample_id!r}: annotation {code} must be an object")
    if "score" not in entry:
        raise SchemaError(f"sample {sample_id!r}: annotation {code} is missing field 'score'")
    score = entry["score"]
    if not isinstance(score, int) or isinstance(score, bool) or not 0 <= score <= 5:
        raise SchemaError(
            f"sample {sample_id!r}: annotation {code}, field 'score': must be an integer in 0..5, got {score!r}"
        )
    derived_exists = score >= 1
    exists = entry.get("exists", derived_exists)
    if not isinstance(exists, bool):
        raise SchemaError(f"sample {sample_id!r}: annotation {code}, field 'exists': must be a boolean")
    if "exists" in entry and exists != derived_exists:
        # The file wins over the score-derived flag, but the mismatch is worth noticing.
        logger.warning(
            "sample %r, annotation %s: exists=%s conflicts with score=%d; keeping the file value",
            sample_id,
            code,
            exists,
            score,
        )
    reasoning = entry.get("reasoning", "")
    if not isinstance(reasoning, str):
        raise SchemaError(f"sample {sample_id!r}: annotation {code}, field 'reasoning': must be a string")
    return error_type, HumanAnnotation(score=score, exists=exists, reasoning=reasoning)


def sample_from_dict(entry: dict) -> MeetingSample:
    sample_id = entry.get("id")
    if not isinstance(sample_id, str) or not sample_id.strip():
        raise SchemaError(f"sample entry has a missing or empty 'id': {entry.get('id')!r}")
    for required in ("source", "transcript", "summary"):
        if required not in entry:
            raise SchemaError(f"sample {sample_id!r}: missing field '{required}'")
        if not isinstance(entry[required], str):
            raise SchemaError(f"sample {sample_id!r}: field '{required}' must be a string")
    annotations = None
    if entry.get("annotations") is not None:
        if not isinstance(entry["annotations"], dict):
            raise SchemaError(f"sample {sample_id!r}: field 'annotations' must be an object")
        annotations = dict(
            _annotation_from_dict(sample_id, code, value) for code, value in entry["annotations"].items()
        )
    gold = entry.get("gold_summary")
    if gold is not None and not isinstance(gold, str):
        raise SchemaError(f"sample {sample_id!r}: field 'gold_summary' must be a string")
    try:
        return MeetingSample(
            id=sample_id,
            source=entry["source"],
            transcript=entry["transcript"],
            summary=entry["summary"],
            gold_summary=gold,
            annotations=annotations,
        )
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def sample_to_dict(sample: MeetingSample) -> dict:
    entry: dict = {
        "id": sample.id,
        "source": sample.source,
        "transcript": sample.transcript,
        "summary": sample.summary,
    }
    if sample.gold_summary is not None:
        entry["gold_summary"] = sample.gold_summary
    if sample.annotations is not None:
        entry["annotations"] = {
            error_type.code: {
                "score": annotation.score,
                "exists": annotation.exists,
                "reasoning": annotation.reasoning,
            }
            for error_type, annotation in sample.annotations.items()
        }
    return entry


def load_dataset(path: str | Path) -> list[MeetingSample]:
    """Load and validate a dataset file, preserving file order."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: dataset file must be a JSON array")
    samples = []
    seen: set[str] = set()
    for entry in raw:
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: dataset entries must be objects")
        sample = sample_from_dict(entry)
        if sample.id in seen:
            raise SchemaError(f"{path}: duplicate sample id {sample.id!r}")
        seen.add(sample.id)
        samples.append(sample)
    return samples


def save_dataset(samples: Iterable[MeetingSample], path: str | Path) -> None:
    payload = [sample_to_dict(sample) for sample in samples]
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def transcript_turns(transcript: str) -> list[tuple[str, str]]:
    """Parse "SPEAKER: utterance" lines into (speaker, utterance) pairs."""
    turns = []
    for line in transcript.splitlines():
        match = _TURN_RE.match(line)
        if match:
            turns.append((match.group(1), match.group(2)))
    return turns


def dataset_stats(samples: Sequence[MeetingSample]) -> DatasetStats:
    """Corpus averages; word counts are whitespace-token counts."""
    if not samples:
        raise ValueError("dataset_stats requires a non-empty sample list")
    turn_counts = []
    speaker_counts = []
    transcript_words = []
    summary_words = []
    erroneous = 0
    for sample in samples:
        turns = transcript_turns(sample.transcript)
        turn_counts.append(len(turns))
        speaker_counts.append(len({speaker for speaker, _ in turns}))
        transcript_words.append(len(sample.transcript.split()))
        summary_words.append(len(sample.summary.split()))
        if sample.annotations and any(a.score >= 1 for a in sample.annotations.values()):
            erroneous += 1
    count = len(samples)
    return DatasetStats(
        sample_count=count,
        mean_turns=sum(turn_counts) / count,
        mean_speakers=sum(speaker_counts) / count,
        mean_transcript_words=sum(transcript_words) / count,
        mean_summary_words=sum(summary_words) / count,
        erroneous_sample_count=erroneous,
    )

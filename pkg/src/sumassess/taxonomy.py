"""The eight error types, their definitions, and the importance weights used in aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import SchemaError, SumassessError


class ErrorType(Enum):
    """Canonical error-type codes for meeting-summary assessment."""

    OMISSION = "OM"
    REPETITION = "REP"
    INCOHERENCE = "INC"
    LANGUAGE = "LAN"
    COREFERENCE = "COR"
    HALLUCINATION = "HAL"
    STRUCTURE = "STR"
    IRRELEVANCE = "IRR"

    @property
    def code(self) -> str:
        return self.value

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    def __str__(self) -> str:
        return self.value


_DISPLAY_NAMES = {
    ErrorType.OMISSION: "Omission",
    ErrorType.REPETITION: "Redundancy",
    ErrorType.INCOHERENCE: "Incoherence",
    ErrorType.LANGUAGE: "Language",
    ErrorType.COREFERENCE: "Coreference",
    ErrorType.HALLUCINATION: "Hallucination",
    ErrorType.STRUCTURE: "Structure",
    ErrorType.IRRELEVANCE: "Irrelevance",
}

# RED and REP both denote the redundancy/repetition type; REP is canonical.
_ALIASES = {"RED": ErrorType.REPETITION}

SHORT_DEFINITIONS = {
    ErrorType.REPETITION: (
        "The summary contains repeated or redundant information, which does not help "
        "the understanding or contextualization."
    ),
    ErrorType.INCOHERENCE: (
        "The model generates summaries containing characteristics that disrupt the "
        "logical flow, relevance, or clarity of content either within a sentence "
        "(intra-sentence) or across sentences (inter-sentence)."
    ),
    ErrorType.LANGUAGE: (
        "The model uses inappropriate, incorrect (ungrammatical), or ambiguous "
        "language or fails to capture unique linguistic styles."
    ),
    ErrorType.OMISSION: (
        "Missing information from the meeting, such as significant decisions or "
        "actions. Total omission: Relevant topics and key points are not stated. "
        "Partial omission: Salient topics are mentioned but not captured in detail."
    ),
    ErrorType.COREFERENCE: (
        "The model fails to resolve a reference to a participant or entity, "
        "misattributes statements, or omits necessary mentions."
    ),
    ErrorType.HALLUCINATION: (
        "The model produces inconsistencies not aligned with the meeting content. "
        "Intrinsic: Misrepresents information from the transcript. Extrinsic: "
        "Introduces content not present in the transcript."
    ),
    ErrorType.STRUCTURE: (
        "The model misrepresents the order or logic of the meeting's discourse, "
        "misplacing topics or events."
    ),
    ErrorType.IRRELEVANCE: (
        "The summary includes information that is unrelated or not central to the "
        "main topics or objectives of the meeting."
    ),
}

# Accuracy-critical types are weighted up, readability-only types down.
DEFAULT_IMPORTANCE = {
    ErrorType.OMISSION: 1.1,
    ErrorType.HALLUCINATION: 1.1,
    ErrorType.IRRELEVANCE: 1.1,
    ErrorType.REPETITION: 0.9,
    ErrorType.INCOHERENCE: 0.9,
    ErrorType.LANGUAGE: 0.9,
    ErrorType.COREFERENCE: 1.0,
    ErrorType.STRUCTURE: 1.0,
}


class UnknownErrorCodeError(SumassessError):
    """Raised when a string cannot be resolved to an error type."""

    def __init__(self, text: str):
        valid = sorted([t.code for t in ErrorType] + list(_ALIASES))
        super().__init__(f"unknown error code {text!r}; valid codes: {', '.join(valid)}")
        self.text = text


def parse_error_code(text: str) -> ErrorType:
    """Resolve a code such as "OM" or "red" to its canonical error type, case-insensitively."""
    normalized = text.strip().upper()
    if normalized in _ALIASES:
        return _ALIASES[normalized]
    for error_type in ErrorType:
        if error_type.code == normalized:
            return error_type
    raise UnknownErrorCodeError(text)


@dataclass(frozen=True)
class ErrorGuideline:
    """One error type with its definition text and aggregation weight.

    ``long_definition`` is the prompt-ready text; when empty it falls back to
    ``short_definition``.
    """

    error_type: ErrorType
    short_definition: str
    long_definition: str = ""
    importance: float = 1.0

    def __post_init__(self) -> None:
        if not self.short_definition.strip():
            raise ValueError(f"{self.error_type.code}: short_definition must be non-empty")
        if not self.importance > 0:
            raise ValueError(f"{self.error_type.code}: importance must be > 0, got {self.importance}")

    @property
    def prompt_definition(self) -> str:
        return self.long_definition or self.short_definition


class GuidelineSet:
    """Ordered, immutable collection of guidelines keyed by error type."""

    def __init__(self, guidelines: Iterable[ErrorGuideline]):
        entries: dict[ErrorType, ErrorGuideline] = {}
        for guideline in guidelines:
            if guideline.error_type in entries:
                raise SchemaError(f"duplicate guideline for error type {guideline.error_type.code}")
            entries[guideline.error_type] = guideline
        if not entries:
            raise SchemaError("a guideline set must contain at least one guideline")
        self._entries = entries

    def __iter__(self) -> Iterator[ErrorGuideline]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, error_type: ErrorType) -> bool:
        return error_type in self._entries

    def get(self, error_type: ErrorType) -> ErrorGuideline:
        try:
            return self._entries[error_type]
        except KeyError:
            raise KeyError(f"no guideline for error type {error_type.code}") from None

    @property
    def types(self) -> tuple[ErrorType, ...]:
        return tuple(self._entries)

    def subset(self, types: Iterable[ErrorType]) -> "GuidelineSet":
        return GuidelineSet(self.get(t) for t in types)


def default_guidelines() -> GuidelineSet:
    """All eight guidelines with the built-in definitions and importance weights."""
    return GuidelineSet(
        ErrorGuideline(
            error_type=error_type,
            short_definition=SHORT_DEFINITIONS[error_type],
            importance=DEFAULT_IMPORTANCE[error_type],
        )
        for error_type in ErrorType
    )


def load_guidelines(path: str | Path) -> GuidelineSet:
    """Load a guideline set from a JSON array of {code, short_definition, long_definition?, importance?}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: guideline file must be a JSON array")
    guidelines = []
    for position, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: entry {position} is not an object")
        for required in ("code", "short_definition"):
            if required not in entry:
                raise SchemaError(f"{path}: entry {position} is missing field '{required}'")
        try:
            error_type = parse_error_code(str(entry["code"]))
        except UnknownErrorCodeError as exc:
            raise SchemaError(f"{path}: entry {position}, field 'code': {exc}") from exc
        importance = entry.get("importance", 1.0)
        if not isinstance(importance, (int, float)) or isinstance(importance, bool) or importance <= 0:
            raise SchemaError(
                f"{path}: entry {position}, field 'importance': must be a positive number, got {importance!r}"
            )
        guidelines.append(
            ErrorGuideline(
                error_type=error_type,
                short_definition=str(entry["short_definition"]),
                long_definition=str(entry.get("long_definition", "")),
                importance=float(importance),
            )
        )
    return GuidelineSet(guidelines)

"""From-scratch ROUGE-1/2/L between a candidate and a reference summary.

No stemming or stopword removal; tokenization lowercases and splits on
non-alphanumeric runs.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _zero() -> RougeScore:
    return RougeScore(0.0, 0.0, 0.0)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap; precision over candidate n-grams, recall over reference."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    candidate_tokens = tokenize(candidate)
    reference_tokens = tokenize(reference)
    if len(reference_tokens) < n:
        logger.debug("reference shorter than n=%d; returning zero score", n)
        return _zero()
    if len(candidate_tokens) < n:
        return _zero()
    candidate_grams = _ngrams(candidate_tokens, n)
    reference_grams = _ngrams(reference_tokens, n)
    overlap = sum(min(count, reference_grams[gram]) for gram, count in candidate_grams.items())
    precision = overlap / sum(candidate_grams.values())
    recall = overlap / sum(reference_grams.values())
    return RougeScore(precision=precision, recall=recall, f1=_f1(precision, recall))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """Longest-common-subsequence overlap over token sequences."""
    candidate_tokens = tokenize(candidate)
    reference_tokens = tokenize(reference)
    if not candidate_tokens or not reference_tokens:
        return _zero()
    lcs = _lcs_length(candidate_tokens, reference_tokens)
    precision = lcs / len(candidate_tokens)
    recall = lcs / len(reference_tokens)
    return RougeScore(precision=precision, recall=recall, f1=_f1(precision, recall))


def score_all(candidate: str, reference: str) -> dict[str, RougeScore]:
    return {
        "rouge_1": rouge_n(candidate, reference, 1),
        "rouge_2": rouge_n(candidate, reference, 2),
        "rouge_l": rouge_l(candidate, reference),
    }

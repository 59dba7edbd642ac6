"""Shared builders and independent brute-force oracles for the test suite."""

from __future__ import annotations

import json
import math
from collections import Counter
from pathlib import Path

from sumassess.dataset import MeetingSample
from sumassess.gateway import Fixture, Gateway, scripted_backend
from sumassess.taxonomy import ErrorType

# ---------------------------------------------------------------------------
# Prompt anchors for scripted fixtures
# ---------------------------------------------------------------------------

STEP1_MATCH = "Step 1 is to collect possible error instances."
STEP2_MATCH = "Step 2 is to rate the severity of the potential error instances."
STEP3_MATCH = "Step 3 is to rate the summary considering the actual error instances and their severity."
SINGLE_STEP_MATCH = "Rate the following meeting summary for one specific error type."
MULTI_ASPECT_MATCH = "Rate the following meeting summary for every error type listed below."
JUDGE_MATCH = "Compare the reasoning of an automatic summary evaluator"
CONSOLIDATION_MATCH = "Below are per-sample comparisons between an automatic summary evaluator"
CHALLENGER_MATCH = "You are reviewing a draft solution to the task below."
MODERATOR_MATCH = "You are the moderator of a discussion about the task below."


def step_match(step: int, display_name: str | None = None) -> str:
    """Substring pinning a pipeline step, optionally narrowed to one error type."""
    prefix = {1: STEP1_MATCH, 2: STEP2_MATCH, 3: STEP3_MATCH}[step]
    if display_name is None:
        return prefix
    return f"{prefix}\nRead the following criteria carefully: *** {display_name}:"


def candidates_json(*instances: str) -> str:
    return json.dumps(
        [{"instance": text, "reasoning": f"{text} may be wrong", "certainty": 80} for text in instances]
    )


def verdicts_json(*instances: str, severity: int = 6, exists: bool = True) -> str:
    return json.dumps(
        [
            {
                "instance": text,
                "reasoning": f"{text} checked",
                "severity": severity,
                "certainty": 9,
                "error_exists": exists,
            }
            for text in instances
        ]
    )


def scoring_json(rating: int, confidence: int = 8, reasoning: str = "because") -> str:
    return json.dumps({"reasoning": reasoning, "confidence": confidence, "rating": rating})


def three_step_fixtures(rating: int = 3, confidence: int = 8) -> list[Fixture]:
    """Generic fixtures driving any type through a full three-step pass."""
    return [
        Fixture(STEP1_MATCH, candidates_json("x")),
        Fixture(STEP2_MATCH, verdicts_json("x")),
        Fixture(STEP3_MATCH, scoring_json(rating, confidence)),
    ]


def scripted_gateway(fixtures, **kwargs) -> Gateway:
    return Gateway(scripted_backend(fixtures), **kwargs)


# ---------------------------------------------------------------------------
# Samples and dataset files
# ---------------------------------------------------------------------------

DEFAULT_TRANSCRIPT = "ALICE: We should ship.\nBOB: Agreed."
DEFAULT_SUMMARY = "The team agreed to ship."


def make_sample(
    sample_id: str = "m1",
    *,
    source: str = "led",
    transcript: str = DEFAULT_TRANSCRIPT,
    summary: str = DEFAULT_SUMMARY,
    gold_summary: str | None = None,
    annotations=None,
) -> MeetingSample:
    return MeetingSample(
        id=sample_id,
        source=source,
        transcript=transcript,
        summary=summary,
        gold_summary=gold_summary,
        annotations=annotations,
    )


def annotation_entry(score: int, exists: bool | None = None, reasoning: str = "") -> dict:
    entry: dict = {"score": score, "reasoning": reasoning}
    if exists is not None:
        entry["exists"] = exists
    return entry


def write_dataset(path: Path, entries: list[dict]) -> Path:
    path.write_text(json.dumps(entries, ensure_ascii=False, indent=2), encoding="utf-8")
    return path


def dataset_entry(
    sample_id: str,
    *,
    source: str = "led",
    transcript: str = DEFAULT_TRANSCRIPT,
    summary: str = DEFAULT_SUMMARY,
    gold_summary: str | None = None,
    annotations: dict | None = None,
) -> dict:
    entry: dict = {"id": sample_id, "source": source, "transcript": transcript, "summary": summary}
    if gold_summary is not None:
        entry["gold_summary"] = gold_summary
    if annotations is not None:
        entry["annotations"] = annotations
    return entry


# ---------------------------------------------------------------------------
# Brute-force statistical oracles (kept independent of the package internals)
# ---------------------------------------------------------------------------


def pearson_oracle(xs, ys) -> float:
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def mean_ranks_oracle(values) -> list[float]:
    # rank(x) = (#smaller) + (#equal + 1) / 2, a closed form independent of sorting
    return [
        sum(v < x for v in values) + (sum(v == x for v in values) + 1) / 2
        for x in values
    ]


def spearman_oracle(a, b) -> float:
    return pearson_oracle(mean_ranks_oracle(a), mean_ranks_oracle(b))


def kendall_oracle(a, b) -> float:
    """Tau-b via explicit O(n^2) concordant/discordant/tie counting."""
    n = len(a)
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = a[i] - a[j]
            dy = b[i] - b[j]
            if dx == 0 and dy == 0:
                ties_a += 1
                ties_b += 1
            elif dx == 0:
                ties_a += 1
            elif dy == 0:
                ties_b += 1
            elif dx * dy > 0:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    return (concordant - discordant) / math.sqrt((n0 - ties_a) * (n0 - ties_b))


def krippendorff_oracle(units, level: str = "nominal") -> float:
    """Alpha by literal pair enumeration within units (observed) and across the
    pooled values (expected)."""
    units = [[v for v in unit if v is not None] for unit in units]
    units = [unit for unit in units if len(unit) >= 2]
    pooled = [v for unit in units for v in unit]
    n = len(pooled)
    freq = Counter(pooled)
    categories = sorted(freq)

    def delta(value_a, value_b) -> float:
        if level == "nominal":
            return 0.0 if value_a == value_b else 1.0
        ia, ib = categories.index(value_a), categories.index(value_b)
        lo, hi = min(ia, ib), max(ia, ib)
        if lo == hi:
            return 0.0
        span = sum(freq[categories[g]] for g in range(lo, hi + 1))
        span -= (freq[categories[lo]] + freq[categories[hi]]) / 2
        return span * span

    observed = 0.0
    for unit in units:
        m = len(unit)
        within = sum(delta(unit[i], unit[j]) for i in range(m) for j in range(m) if i != j)
        observed += within / (m - 1)
    observed /= n
    expected = sum(
        delta(pooled[i], pooled[j]) for i in range(n) for j in range(n) if i != j
    ) / (n * (n - 1))
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


ALL_CODES = tuple(t.code for t in ErrorType)

"""Statistics for comparing machine and human assessments: point-biserial,
Spearman, Kendall tau-b, balanced accuracy, Krippendorff's alpha, Likert gaps,
and run-variance summaries."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as scipy_stats

from .assessor import SummaryEvaluation, predicted_existence
from .dataset import MeetingSample
from .errors import SchemaError, SumassessError
from .taxonomy import ErrorType

# Correlations are reported against a per-type quality-direction score so that
# present/severe errors push the coefficient negative.
Q_CONVENTION = (
    "per-type quality-direction score q = 5 - rating; a negative correlation means "
    "error presence or severity lowers the score"
)


class MetricsError(SumassessError):
    pass


class UndefinedCorrelationError(MetricsError):
    """Constant input or a single-group binary column leaves the coefficient undefined."""


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return {
            "coefficient": self.coefficient,
            "p_value": self.p_value,
            "n": self.n,
            "stars": significance_stars(self.p_value),
        }


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        for name, value in (("tp", self.tp), ("fp", self.fp), ("tn", self.tn), ("fn", self.fn)):
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")


def significance_stars(p_value: float) -> str:
    if p_value <= 0.01:
        return "**"
    if p_value <= 0.05:
        return "*"
    return ""


def _as_float_array(values: Sequence[float], name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != 1:
        raise MetricsError(f"{name} must be one-dimensional")
    return array


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xd = x - x.mean()
    yd = y - y.mean()
    sxx = float(np.dot(xd, xd))
    syy = float(np.dot(yd, yd))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("an input column is constant")
    return float(np.dot(xd, yd) / math.sqrt(sxx * syy))


def _t_pvalue(r: float, n: int) -> float:
    """Two-sided p for a correlation coefficient via the t distribution, n-2 dof."""
    if abs(r) >= 1.0:
        return 0.0
    df = n - 2
    if df <= 0:
        return 1.0
    t = abs(r) * math.sqrt(df / (1.0 - r * r))
    return 2.0 * float(scipy_stats.t.sf(t, df))


def point_biserial(binary: Sequence[int], scores: Sequence[float]) -> CorrelationResult:
    """Pearson correlation between a 0/1 variable and a continuous score.

    Both groups must be non-empty and the scores non-constant; the p-value
    uses the t distribution with n-2 degrees of freedom.
    """
    if len(binary) != len(scores):
        raise MetricsError(f"length mismatch: {len(binary)} binary values vs {len(scores)} scores")
    if len(binary) < 2:
        raise MetricsError("point_biserial needs at least 2 observations")
    for value in binary:
        if value not in (0, 1, False, True):
            raise MetricsError(f"binary column must contain only 0/1, got {value!r}")
    b = _as_float_array([int(v) for v in binary], "binary")
    y = _as_float_array(scores, "scores")
    if not (b == 1).any() or not (b == 0).any():
        raise UndefinedCorrelationError("binary column has a single group")
    r = _pearson(b, y)
    return CorrelationResult(coefficient=r, p_value=_t_pvalue(r, len(b)), n=len(b))


def _mean_ranks(values: Sequence[float]) -> list[float]:
    """Average ranks, 1-based; tied values share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def _check_pair(a: Sequence[float], b: Sequence[float], name: str) -> None:
    if len(a) != len(b):
        raise MetricsError(f"{name}: length mismatch ({len(a)} vs {len(b)})")
    if len(a) < 3:
        raise MetricsError(f"{name} needs at least 3 observations")
    if len(set(a)) < 2 or len(set(b)) < 2:
        raise UndefinedCorrelationError("an input column is constant")


def spearman(a: Sequence[float], b: Sequence[float]) -> CorrelationResult:
    """Pearson correlation on average ranks (ties get their mean rank)."""
    _check_pair(a, b, "spearman")
    ra = _as_float_array(_mean_ranks(a), "ranks(a)")
    rb = _as_float_array(_mean_ranks(b), "ranks(b)")
    r = _pearson(ra, rb)
    return CorrelationResult(coefficient=r, p_value=_t_pvalue(r, len(a)), n=len(a))


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> CorrelationResult:
    """Tie-corrected Kendall tau-b with an asymptotic normal p-value."""
    _check_pair(a, b, "kendall_tau")
    x = _as_float_array(a, "a")
    y = _as_float_array(b, "b")
    n = len(x)
    sign_x = np.sign(np.subtract.outer(x, x))
    sign_y = np.sign(np.subtract.outer(y, y))
    upper = np.triu_indices(n, 1)
    products = sign_x[upper] * sign_y[upper]
    s = float(products.sum())  # concordant minus discordant
    n0 = n * (n - 1) / 2.0
    ties_x = float(np.count_nonzero(sign_x[upper] == 0))
    ties_y = float(np.count_nonzero(sign_y[upper] == 0))
    denominator = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denominator == 0.0:
        raise UndefinedCorrelationError("an input column is constant")
    tau = s / denominator
    return CorrelationResult(coefficient=tau, p_value=_kendall_pvalue(x, y, s), n=n)


def _kendall_pvalue(x: np.ndarray, y: np.ndarray, s: float) -> float:
    """Normal approximation for tau under the null, with tie corrections."""
    n = len(x)
    tie_groups_x = [c for c in Counter(x.tolist()).values() if c > 1]
    tie_groups_y = [c for c in Counter(y.tolist()).values() if c > 1]
    v0 = n * (n - 1) * (2 * n + 5)
    vt = sum(t * (t - 1) * (2 * t + 5) for t in tie_groups_x)
    vu = sum(u * (u - 1) * (2 * u + 5) for u in tie_groups_y)
    v1 = (
        sum(t * (t - 1) for t in tie_groups_x)
        * sum(u * (u - 1) for u in tie_groups_y)
        / (2.0 * n * (n - 1))
    )
    v2 = 0.0
    if n > 2:
        v2 = (
            sum(t * (t - 1) * (t - 2) for t in tie_groups_x)
            * sum(u * (u - 1) * (u - 2) for u in tie_groups_y)
            / (9.0 * n * (n - 1) * (n - 2))
        )
    variance = (v0 - vt - vu) / 18.0 + v1 + v2
    if variance <= 0.0:
        return 1.0
    z = s / math.sqrt(variance)
    return float(math.erfc(abs(z) / math.sqrt(2.0)))


def balanced_accuracy(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(sensitivity, specificity, balanced accuracy).

    SEN = TP / (TP + FN), SPE = TN / (TN + FP), B-ACC = (SEN + SPE) / 2.
    """
    if counts.tp + counts.fn == 0:
        raise MetricsError("balanced accuracy undefined: no positive examples (tp + fn == 0)")
    if counts.tn + counts.fp == 0:
        raise MetricsError("balanced accuracy undefined: no negative examples (tn + fp == 0)")
    sensitivity = counts.tp / (counts.tp + counts.fn)
    specificity = counts.tn / (counts.tn + counts.fp)
    return sensitivity, specificity, (sensitivity + specificity) / 2.0


# ---------------------------------------------------------------------------
# Krippendorff's alpha
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReliabilityMatrix:
    """Units x annotators grid of optional category values."""

    values: tuple[tuple[float | str | None, ...], ...]
    level: str = "nominal"

    def __post_init__(self) -> None:
        if self.level not in ("nominal", "ordinal"):
            raise ValueError(f"level must be 'nominal' or 'ordinal', got {self.level!r}")
        if not self.values:
            raise ValueError("reliability matrix must have at least one unit")
        width = len(self.values[0])
        if width < 2:
            raise ValueError("reliability matrix needs at least 2 annotators")
        for row in self.values:
            if len(row) != width:
                raise ValueError("all units must cover the same annotators")
        if not any(sum(v is not None for v in row) >= 2 for row in self.values):
            raise ValueError("reliability matrix needs at least one unit with 2 or more values")
        if self.level == "ordinal":
            for row in self.values:
                for value in row:
                    if value is not None and not isinstance(value, (int, float)):
                        raise ValueError("ordinal matrices require numeric values")


def load_reliability_matrix(path: str | Path) -> ReliabilityMatrix:
    """Load a JSON file {level, units: [[value or null per annotator], ...]}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "units" not in raw:
        raise SchemaError(f"{path}: reliability file must be an object with a 'units' field")
    units = raw["units"]
    if not isinstance(units, list) or not all(isinstance(row, list) for row in units):
        raise SchemaError(f"{path}: field 'units' must be an array of arrays")
    try:
        return ReliabilityMatrix(
            values=tuple(tuple(row) for row in units),
            level=raw.get("level", "nominal"),
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def krippendorff_alpha(matrix: ReliabilityMatrix) -> float:
    """Coincidence-matrix alpha with nominal or ordinal distance.

    Ordinal distances follow the cumulative-marginal convention: the squared
    sum of coincidence marginals between the two categories, with the two
    endpoints counted half.
    """
    units = [[v for v in row if v is not None] for row in matrix.values]
    units = [u for u in units if len(u) >= 2]
    if not units:
        raise MetricsError("no units with 2 or more pairable values")
    n_pairable = sum(len(u) for u in units)
    if n_pairable < 2:
        raise MetricsError("insufficient pairable values")

    categories = sorted({v for unit in units for v in unit})
    index = {c: i for i, c in enumerate(categories)}
    k = len(categories)

    coincidence = np.zeros((k, k))
    for unit in units:
        m = len(unit)
        counts = Counter(unit)
        for c1, n1 in counts.items():
            for c2, n2 in counts.items():
                pairs = n1 * (n1 - 1) if c1 == c2 else n1 * n2
                coincidence[index[c1], index[c2]] += pairs / (m - 1)

    marginals = coincidence.sum(axis=1)
    total = marginals.sum()

    if matrix.level == "nominal":
        delta = 1.0 - np.eye(k)
    else:
        delta = np.zeros((k, k))
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                lo, hi = min(i, j), max(i, j)
                span = marginals[lo : hi + 1].sum() - (marginals[lo] + marginals[hi]) / 2.0
                delta[i, j] = span * span

    observed = float((coincidence * delta).sum()) / total
    expected = float((np.outer(marginals, marginals) * delta).sum()) / (total * (total - 1.0))
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


# ---------------------------------------------------------------------------
# Tables over predictions and datasets
# ---------------------------------------------------------------------------


def likert_gap(machine_ratings: Sequence[float], human_ratings: Sequence[float]) -> float:
    """mean(machine) - mean(human); inputs must already be aligned by sample."""
    if len(machine_ratings) != len(human_ratings):
        raise MetricsError("likert_gap inputs must have equal length")
    if not machine_ratings:
        raise MetricsError("likert_gap needs at least one pair")
    return float(np.mean(machine_ratings) - np.mean(human_ratings))


def run_variance(run_means: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation across per-run means."""
    if len(run_means) < 2:
        raise MetricsError("run_variance needs at least 2 runs")
    array = _as_float_array(run_means, "run_means")
    return float(array.mean()), float(array.std())


def _aligned_columns(
    predictions: Sequence[SummaryEvaluation],
    dataset: Sequence[MeetingSample],
) -> dict[ErrorType, dict[str, list]]:
    """Per type: human existence/score and machine rating/quality columns,
    over samples with both an assessment and an annotation for the type."""
    by_id = {sample.id: sample for sample in dataset}
    columns: dict[ErrorType, dict[str, list]] = {}
    for evaluation in predictions:
        sample = by_id.get(evaluation.sample_id)
        if sample is None or not sample.annotations:
            continue
        for error_type, assessment in evaluation.assessments.items():
            annotation = sample.annotations.get(error_type)
            if annotation is None:
                continue
            entry = columns.setdefault(
                error_type,
                {"human_exists": [], "human_score": [], "rating": [], "quality": [], "assessment": []},
            )
            entry["human_exists"].append(1 if annotation.exists else 0)
            entry["human_score"].append(annotation.score)
            entry["rating"].append(assessment.rating)
            entry["quality"].append(evaluation.quality)
            entry["assessment"].append(assessment)
    if not columns:
        raise MetricsError("no overlapping annotated samples between predictions and dataset")
    return columns


def _correlation_block(
    binary: Sequence[int],
    severity: Sequence[float],
    scores: Sequence[float],
    notes: list[str],
    label: str,
) -> dict:
    block: dict = {}
    try:
        block["existence_point_biserial"] = point_biserial(binary, scores).to_dict()
    except (UndefinedCorrelationError, MetricsError) as exc:
        notes.append(f"{label}: existence column skipped ({exc})")
    try:
        block["severity_spearman"] = spearman(severity, scores).to_dict()
        block["severity_kendall"] = kendall_tau(severity, scores).to_dict()
    except (UndefinedCorrelationError, MetricsError) as exc:
        notes.append(f"{label}: severity columns skipped ({exc})")
    return block


def correlation_report(
    predictions: Sequence[SummaryEvaluation],
    dataset: Sequence[MeetingSample],
) -> dict:
    """Per-type correlations between human annotations and machine scores.

    Emits both the per-type variant (q = 5 - rating) and the aggregate
    variant (the evaluation's overall quality score). Degenerate columns are
    skipped with a note.
    """
    columns = _aligned_columns(predictions, dataset)
    notes: list[str] = []
    per_type: dict[str, dict] = {}
    for error_type in sorted(columns, key=lambda t: t.code):
        entry = columns[error_type]
        q_scores = [5.0 - rating for rating in entry["rating"]]
        block = _correlation_block(
            entry["human_exists"], entry["human_score"], q_scores, notes, error_type.code
        )
        qualities = [q for q in entry["quality"] if q is not None]
        if len(qualities) == len(entry["quality"]):
            aggregate = _correlation_block(
                entry["human_exists"],
                entry["human_score"],
                entry["quality"],
                notes,
                f"{error_type.code} (aggregate)",
            )
            if aggregate:
                block["aggregate_quality"] = aggregate
        else:
            notes.append(f"{error_type.code}: aggregate variant skipped (missing quality values)")
        per_type[error_type.code] = block
    return {"q_convention": Q_CONVENTION, "per_type": per_type, "notes": notes}


def balanced_accuracy_table(
    predictions: Sequence[SummaryEvaluation],
    dataset: Sequence[MeetingSample],
    *,
    from_verdicts: bool = False,
) -> dict:
    """Per-type balanced accuracy of predicted vs annotated error existence."""
    columns = _aligned_columns(predictions, dataset)
    notes: list[str] = []
    per_type: dict[str, dict] = {}
    for error_type in sorted(columns, key=lambda t: t.code):
        entry = columns[error_type]
        tp = fp = tn = fn = 0
        for human, assessment in zip(entry["human_exists"], entry["assessment"]):
            predicted = predicted_existence(assessment, from_verdicts=from_verdicts)
            if human and predicted:
                tp += 1
            elif human and not predicted:
                fn += 1
            elif not human and predicted:
                fp += 1
            else:
                tn += 1
        counts = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
        try:
            sensitivity, specificity, b_acc = balanced_accuracy(counts)
        except MetricsError as exc:
            notes.append(f"{error_type.code}: skipped ({exc})")
            continue
        per_type[error_type.code] = {
            "sensitivity": sensitivity,
            "specificity": specificity,
            "balanced_accuracy": b_acc,
            "counts": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        }
    return {"per_type": per_type, "notes": notes}


def gap_table(predictions: Sequence[SummaryEvaluation], dataset: Sequence[MeetingSample]) -> dict:
    """Per-type signed gap between mean machine and mean human Likert scores."""
    columns = _aligned_columns(predictions, dataset)
    per_type = {}
    for error_type in sorted(columns, key=lambda t: t.code):
        entry = columns[error_type]
        per_type[error_type.code] = {
            "gap": likert_gap(entry["rating"], entry["human_score"]),
            "machine_mean": float(np.mean(entry["rating"])),
            "human_mean": float(np.mean(entry["human_score"])),
            "n": len(entry["rating"]),
        }
    return {"sign_convention": "gap = mean machine rating - mean human score", "per_type": per_type}


def variance_table(runs: Sequence[Sequence[SummaryEvaluation]]) -> dict:
    """Mean and population std of per-run mean ratings, per error type."""
    if len(runs) < 2:
        raise MetricsError("variance_table needs at least 2 prediction runs")
    per_run_means: dict[ErrorType, list[float]] = {}
    for run in runs:
        ratings: dict[ErrorType, list[int]] = {}
        for evaluation in run:
            for error_type, assessment in evaluation.assessments.items():
                ratings.setdefault(error_type, []).append(assessment.rating)
        for error_type, values in ratings.items():
            per_run_means.setdefault(error_type, []).append(float(np.mean(values)))
    notes: list[str] = []
    per_type = {}
    for error_type in sorted(per_run_means, key=lambda t: t.code):
        means = per_run_means[error_type]
        if len(means) != len(runs):
            notes.append(f"{error_type.code}: skipped (missing in {len(runs) - len(means)} run(s))")
            continue
        mean, std = run_variance(means)
        per_type[error_type.code] = {"mean": mean, "std": std, "run_means": means}
    return {"runs": len(runs), "per_type": per_type, "notes": notes}

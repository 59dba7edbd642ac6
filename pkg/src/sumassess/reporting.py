"""Plain-text tables, delimited files, and figure rendering for metric reports."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def format_number(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Fixed-width table: one metric per row, one error type per column."""
    cells = [[str(h) for h in headers]] + [[format_number(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for row_index, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if row_index == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(widths))))
    return "\n".join(lines)


def write_tsv(path: str | Path, headers: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write("\t".join(str(h) for h in headers) + "\n")
        for row in rows:
            handle.write("\t".join(format_number(v) for v in row) + "\n")
    return path


def write_json(path: str | Path, payload: object) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def _save_bar_figure(
    path: Path,
    labels: Sequence[str],
    series: Mapping[str, Sequence[float]],
    *,
    title: str,
    ylabel: str,
    ylim: tuple[float, float] | None = None,
    errors: Mapping[str, Sequence[float]] | None = None,
) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    count = max(len(series), 1)
    width = 0.8 / count
    for offset, (name, values) in enumerate(series.items()):
        positions = [i + (offset - (count - 1) / 2) * width for i in range(len(labels))]
        bar_errors = errors.get(name) if errors else None
        ax.bar(positions, values, width=width, label=name, yerr=bar_errors, capsize=3)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    if ylim:
        ax.set_ylim(*ylim)
    ax.axhline(0.0, color="black", linewidth=0.6)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _starred(block: Mapping | None, key: str) -> str:
    if not block or key not in block:
        return "-"
    entry = block[key]
    return f"{entry['coefficient']:.4f}{entry['stars']}"


def balanced_accuracy_rows(table: Mapping) -> tuple[list[str], list[list[object]]]:
    codes = list(table["per_type"])
    headers = ["metric", *codes]
    rows = [
        ["sensitivity", *(table["per_type"][c]["sensitivity"] for c in codes)],
        ["specificity", *(table["per_type"][c]["specificity"] for c in codes)],
        ["balanced_accuracy", *(table["per_type"][c]["balanced_accuracy"] for c in codes)],
    ]
    return headers, rows


def correlation_rows(report: Mapping) -> tuple[list[str], list[list[object]]]:
    codes = list(report["per_type"])
    headers = ["measure", *codes]
    rows = [
        ["point_biserial(existence, q)", *(_starred(report["per_type"][c], "existence_point_biserial") for c in codes)],
        ["spearman(severity, q)", *(_starred(report["per_type"][c], "severity_spearman") for c in codes)],
        ["kendall(severity, q)", *(_starred(report["per_type"][c], "severity_kendall") for c in codes)],
    ]
    return headers, rows


def gap_rows(table: Mapping) -> tuple[list[str], list[list[object]]]:
    codes = list(table["per_type"])
    headers = ["metric", *codes]
    rows = [
        ["gap", *(table["per_type"][c]["gap"] for c in codes)],
        ["machine_mean", *(table["per_type"][c]["machine_mean"] for c in codes)],
        ["human_mean", *(table["per_type"][c]["human_mean"] for c in codes)],
        ["n", *(table["per_type"][c]["n"] for c in codes)],
    ]
    return headers, rows


def variance_rows(table: Mapping) -> tuple[list[str], list[list[object]]]:
    codes = list(table["per_type"])
    headers = ["metric", *codes]
    rows = [
        ["mean", *(table["per_type"][c]["mean"] for c in codes)],
        ["std", *(table["per_type"][c]["std"] for c in codes)],
    ]
    return headers, rows


def render_metrics_report(report: Mapping, outdir: str | Path) -> list[Path]:
    """Write the full report bundle: JSON, TSV tables, and PNG figures.

    Returns the list of files written.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = [write_json(outdir / "report.json", report)]

    b_acc = report.get("balanced_accuracy")
    if b_acc and b_acc["per_type"]:
        headers, rows = balanced_accuracy_rows(b_acc)
        written.append(write_tsv(outdir / "balanced_accuracy.tsv", headers, rows))
        codes = list(b_acc["per_type"])
        written.append(
            _save_bar_figure(
                outdir / "balanced_accuracy.png",
                codes,
                {"balanced accuracy": [b_acc["per_type"][c]["balanced_accuracy"] for c in codes]},
                title="Error existence detection vs human annotation",
                ylabel="balanced accuracy",
                ylim=(0.0, 1.05),
            )
        )

    correlations = report.get("correlations")
    if correlations and correlations["per_type"]:
        headers, rows = correlation_rows(correlations)
        written.append(write_tsv(outdir / "correlations.tsv", headers, rows))
        codes = list(correlations["per_type"])

        def coefficients(key: str) -> list[float]:
            return [correlations["per_type"][c].get(key, {}).get("coefficient", 0.0) for c in codes]

        written.append(
            _save_bar_figure(
                outdir / "correlations.png",
                codes,
                {
                    "point-biserial (existence)": coefficients("existence_point_biserial"),
                    "spearman (severity)": coefficients("severity_spearman"),
                    "kendall (severity)": coefficients("severity_kendall"),
                },
                title="Correlation with human annotation (q = 5 - rating)",
                ylabel="coefficient",
                ylim=(-1.05, 1.05),
            )
        )

    gaps = report.get("gaps")
    if gaps and gaps["per_type"]:
        headers, rows = gap_rows(gaps)
        written.append(write_tsv(outdir / "gaps.tsv", headers, rows))
        codes = list(gaps["per_type"])
        written.append(
            _save_bar_figure(
                outdir / "gaps.png",
                codes,
                {"gap": [gaps["per_type"][c]["gap"] for c in codes]},
                title="Machine minus human mean Likert score",
                ylabel="gap",
            )
        )

    variance = report.get("variance")
    if variance and variance["per_type"]:
        headers, rows = variance_rows(variance)
        written.append(write_tsv(outdir / "variance.tsv", headers, rows))
        codes = list(variance["per_type"])
        written.append(
            _save_bar_figure(
                outdir / "variance.png",
                codes,
                {"mean rating": [variance["per_type"][c]["mean"] for c in codes]},
                errors={"mean rating": [variance["per_type"][c]["std"] for c in codes]},
                title=f"Mean rating across {variance['runs']} runs (bars show population std)",
                ylabel="rating",
                ylim=(0.0, 5.2),
            )
        )

    return written


def render_text_tables(report: Mapping) -> str:
    """The report as console-friendly tables, one block per section."""
    blocks: list[str] = []
    if report.get("q_convention"):
        blocks.append(f"convention: {report['q_convention']}")
    b_acc = report.get("balanced_accuracy")
    if b_acc and b_acc["per_type"]:
        blocks.append("balanced accuracy\n" + format_table(*balanced_accuracy_rows(b_acc)))
    correlations = report.get("correlations")
    if correlations and correlations["per_type"]:
        blocks.append(
            "correlation with human annotation (stars: * p<=0.05, ** p<=0.01)\n"
            + format_table(*correlation_rows(correlations))
        )
    gaps = report.get("gaps")
    if gaps and gaps["per_type"]:
        blocks.append(f"likert gap ({gaps['sign_convention']})\n" + format_table(*gap_rows(gaps)))
    variance = report.get("variance")
    if variance and variance["per_type"]:
        blocks.append(f"run variance over {variance['runs']} runs\n" + format_table(*variance_rows(variance)))
    notes = report.get("notes") or []
    if notes:
        blocks.append("notes:\n" + "\n".join(f"- {note}" for note in notes))
    return "\n\n".join(blocks)

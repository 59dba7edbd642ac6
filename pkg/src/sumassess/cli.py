"""Operator surface: evaluate, self-train, metrics, baseline, agreement, cache."""

from __future__ import annotations

import functools
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import yaml

from . import assessor, calibrate, metrics, reporting, rouge
from .dataset import load_dataset
from .errors import SumassessError
from .gateway import (
    Fixture,
    Gateway,
    LiveBackend,
    ReplayBackend,
    cache_digests,
    cache_purge,
    cache_stats,
    scripted_backend,
)
from .taxonomy import default_guidelines, load_guidelines, parse_error_code

EXIT_PARTIAL = 3

_MODES = {"three-step": "three_step", "single-step": "single_step", "multi-aspect": "multi_aspect"}
_DEBATES = {"off": "off", "single": "single_model", "multi": "multi_model"}


def _fatal_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SumassessError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _apply_config_file(ctx: click.Context, config_path: Path | None) -> None:
    """Fill in option values from a YAML config; explicit flags win."""
    if config_path is None:
        return
    loaded = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
    if not isinstance(loaded, dict):
        raise click.ClickException(f"{config_path}: config file must be a mapping")
    for key, value in loaded.items():
        name = key.replace("-", "_")
        if name not in ctx.params:
            raise click.ClickException(f"{config_path}: unknown config key {key!r}")
        if ctx.get_parameter_source(name) == click.core.ParameterSource.DEFAULT:
            ctx.params[name] = value


def _split_csv(value: str | None) -> tuple[str, ...]:
    if not value:
        return ()
    return tuple(part.strip() for part in str(value).split(",") if part.strip())


def _load_fixtures(path: Path) -> list[Fixture]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise click.ClickException(f"{path}: fixtures file must be a JSON array")
    fixtures = []
    for index, entry in enumerate(raw):
        if not isinstance(entry, dict) or "match" not in entry or "response" not in entry:
            raise click.ClickException(f"{path}: fixture {index} needs 'match' and 'response' fields")
        fixtures.append(
            Fixture(match=entry["match"], response=entry["response"], exact=bool(entry.get("exact", False)))
        )
    return fixtures


def _build_gateway(
    backend: str,
    *,
    fixtures: Path | None,
    cache_dir: Path | None,
    max_retries: int,
    max_concurrency: int,
    seed: int | None,
    endpoint: str,
    api_key_env: str,
) -> Gateway:
    if backend == "scripted":
        if fixtures is None:
            raise click.ClickException("--backend scripted requires --fixtures")
        chosen = scripted_backend(_load_fixtures(fixtures))
    elif backend == "replay":
        if cache_dir is None:
            raise click.ClickException("--backend replay requires --cache-dir")
        chosen = ReplayBackend()
    else:
        chosen = LiveBackend(endpoint=endpoint, api_key_env=api_key_env)
    return Gateway(
        chosen,
        cache_dir=cache_dir,
        max_retries=max_retries,
        max_concurrency=max_concurrency,
        rng=random.Random(seed),
    )


def _gateway_options(func):
    options = [
        click.option("--backend", type=click.Choice(["live", "scripted", "replay"]), default="live"),
        click.option("--fixtures", type=click.Path(exists=True, path_type=Path), default=None,
                     help="Scripted fixtures: JSON array of {match, response, exact?}."),
        click.option("--cache-dir", type=click.Path(path_type=Path), default=None),
        click.option("--max-retries", type=int, default=3, show_default=True),
        click.option("--max-concurrency", type=int, default=1, show_default=True),
        click.option("--seed", type=int, default=None),
        click.option("--endpoint", default="https://api.openai.com/v1", show_default=True),
        click.option("--api-key-env", default="OPENAI_API_KEY", show_default=True),
        click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None,
                     help="YAML config with keys mirroring the flags; flags win."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--verbose", is_flag=True, help="Log at INFO level.")
def main(verbose: bool) -> None:
    """Assess meeting summaries with per-error-type LLM evaluators."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command("evaluate")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("runs"), show_default=True)
@click.option("--mode", type=click.Choice(sorted(_MODES)), default="three-step", show_default=True)
@click.option("--madp", type=click.Choice(["off", "single", "multi"]), default="off", show_default=True)
@click.option("--challengers", type=int, default=3, show_default=True)
@click.option("--model", default="gpt-4o", show_default=True)
@click.option("--alt-models", default="", help="Comma-separated alternate model ids for multi-model debate.")
@click.option("--error-types", default="", help="Comma-separated error codes; default is every guideline.")
@click.option("--feedback", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--guidelines", type=click.Path(exists=True, path_type=Path), default=None)
@_gateway_options
@click.pass_context
@_fatal_errors
def cmd_evaluate(ctx: click.Context, **params) -> None:
    """Run the evaluator over a dataset and write JSON-lines predictions."""
    _apply_config_file(ctx, params.pop("config_path"))
    params = ctx.params

    samples = load_dataset(params["dataset"])
    guideline_set = (
        load_guidelines(params["guidelines"]) if params["guidelines"] else default_guidelines()
    )
    error_types = tuple(parse_error_code(code) for code in _split_csv(params["error_types"])) or None

    feedback_map = None
    iteration = 0
    if params["feedback"]:
        reports = calibrate.load_feedback(params["feedback"])
        feedback_map = calibrate.feedback_prompt_map(reports)
        iteration = max(report.iteration for report in reports.values())

    config = assessor.AssessmentConfig(
        mode=_MODES[params["mode"]],
        debate=_DEBATES[params["madp"]],
        challenger_count=params["challengers"],
        primary_model=params["model"],
        alternate_models=_split_csv(params["alt_models"]),
        feedback=feedback_map,
        feedback_iteration=iteration,
        error_types=error_types,
        seed=params["seed"],
    )
    gateway = _build_gateway(
        params["backend"],
        fixtures=params["fixtures"],
        cache_dir=params["cache_dir"],
        max_retries=params["max_retries"],
        max_concurrency=params["max_concurrency"],
        seed=params["seed"],
        endpoint=params["endpoint"],
        api_key_env=params["api_key_env"],
    )

    out_dir = Path(params["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"predictions_{config.mode}_{params['madp']}_iter{iteration}.jsonl"

    def evaluate(sample):
        return assessor.assess_sample(sample, config, gateway, guideline_set)

    partial = 0
    with out_path.open("w", encoding="utf-8") as handle:
        if params["max_concurrency"] > 1:
            with ThreadPoolExecutor(max_workers=params["max_concurrency"]) as pool:
                results = pool.map(evaluate, samples)
                iterator = zip(samples, results)
        else:
            iterator = ((sample, evaluate(sample)) for sample in samples)
        for index, (sample, evaluation) in enumerate(iterator, start=1):
            handle.write(json.dumps(evaluation.to_dict(), ensure_ascii=False) + "\n")
            status = "partial" if evaluation.partial else "ok"
            partial += evaluation.partial
            click.echo(
                f"[{index}/{len(samples)}] {sample.id}: {status}"
                f" impact={reporting.format_number(evaluation.impact) if evaluation.impact is not None else 'n/a'}"
                f" quality={reporting.format_number(evaluation.quality) if evaluation.quality is not None else 'n/a'}"
            )
    totals = gateway.token_totals
    click.echo(f"wrote {out_path} (tokens: prompt={totals.prompt}, completion={totals.completion})")
    if partial:
        click.echo(f"{partial} evaluation(s) were partial", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("self-train")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--predictions", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("feedback.json"), show_default=True)
@click.option("--model", default="gpt-4o", show_default=True)
@click.option("--prior", type=click.Path(exists=True, path_type=Path), default=None,
              help="Feedback file from the previous iteration; guidance accumulates.")
@_gateway_options
@click.pass_context
@_fatal_errors
def cmd_self_train(ctx: click.Context, **params) -> None:
    """Compare predictions against annotations and write per-type feedback."""
    _apply_config_file(ctx, params.pop("config_path"))
    params = ctx.params

    samples = load_dataset(params["dataset"])
    predictions = assessor.load_predictions(params["predictions"])
    prior = calibrate.load_feedback(params["prior"]) if params["prior"] else None
    gateway = _build_gateway(
        params["backend"],
        fixtures=params["fixtures"],
        cache_dir=params["cache_dir"],
        max_retries=params["max_retries"],
        max_concurrency=params["max_concurrency"],
        seed=params["seed"],
        endpoint=params["endpoint"],
        api_key_env=params["api_key_env"],
    )
    reports = calibrate.run_self_training_iteration(
        predictions,
        samples,
        gateway,
        model_id=params["model"],
        prior=prior,
        seed=params["seed"] or 0,
        out_path=params["out"],
    )
    for error_type in sorted(reports, key=lambda t: t.code):
        report = reports[error_type]
        histogram = ", ".join(f"{label}={count}" for label, count in sorted(report.label_histogram.items()))
        click.echo(f"{error_type.code}: iteration {report.iteration}, {report.item_count} item(s) [{histogram}]")
    click.echo(f"wrote {params['out']}")


@main.command("metrics")
@click.option("--predictions", type=click.Path(exists=True, path_type=Path),
              multiple=True, required=True, help="One or more prediction files; repeat for variance.")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("reports"), show_default=True)
@click.option("--variance", is_flag=True, help="Add the across-run variance table (needs >= 2 prediction files).")
@click.option("--from-verdicts", is_flag=True, help="Derive predicted existence from step-2 verdicts instead of the rating.")
@_fatal_errors
def cmd_metrics(predictions, dataset, out, variance, from_verdicts) -> None:
    """Compare predictions against human annotations and write report files."""
    samples = load_dataset(dataset)
    runs = [assessor.load_predictions(path) for path in predictions]
    first_run = runs[0]

    report: dict = {"q_convention": metrics.Q_CONVENTION, "notes": []}
    b_acc = metrics.balanced_accuracy_table(first_run, samples, from_verdicts=from_verdicts)
    correlations = metrics.correlation_report(first_run, samples)
    gaps = metrics.gap_table(first_run, samples)
    report["balanced_accuracy"] = b_acc
    report["correlations"] = correlations
    report["gaps"] = gaps
    report["notes"].extend(b_acc["notes"])
    report["notes"].extend(correlations["notes"])
    if variance:
        if len(runs) < 2:
            raise click.ClickException("--variance needs at least 2 prediction files")
        variance_table = metrics.variance_table(runs)
        report["variance"] = variance_table
        report["notes"].extend(variance_table["notes"])

    written = reporting.render_metrics_report(report, out)
    click.echo(reporting.render_text_tables(report))
    click.echo("\n".join(f"wrote {path}" for path in written))


@main.command("baseline")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("baseline_scores.json"),
              show_default=True)
@click.option("--correlate", is_flag=True, help="Correlate baseline scores with annotations when present.")
@_fatal_errors
def cmd_baseline(dataset, out, correlate) -> None:
    """ROUGE-1/2/L of each machine summary against the sample's gold summary."""
    samples = load_dataset(dataset)
    per_sample = []
    skipped = []
    for sample in samples:
        if not sample.gold_summary:
            skipped.append(sample.id)
            continue
        scores = rouge.score_all(sample.summary, sample.gold_summary)
        per_sample.append(
            {
                "id": sample.id,
                **{
                    name: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                    for name, s in scores.items()
                },
            }
        )
    payload: dict = {"per_sample": per_sample, "skipped": skipped}
    if per_sample:
        payload["mean"] = {
            name: {
                field: sum(entry[name][field] for entry in per_sample) / len(per_sample)
                for field in ("precision", "recall", "f1")
            }
            for name in ("rouge_1", "rouge_2", "rouge_l")
        }
    else:
        payload["note"] = "no samples with a gold summary; nothing scored"

    if correlate and per_sample:
        by_id = {entry["id"]: entry for entry in per_sample}
        correlations: dict = {}
        for name in ("rouge_1", "rouge_2", "rouge_l"):
            per_type: dict = {}
            for error_type in sorted({t for s in samples if s.annotations for t in s.annotations},
                                     key=lambda t: t.code):
                exists, severity, scores_column = [], [], []
                for sample in samples:
                    annotation = sample.annotation_for(error_type)
                    if annotation is None or sample.id not in by_id:
                        continue
                    exists.append(1 if annotation.exists else 0)
                    severity.append(annotation.score)
                    scores_column.append(by_id[sample.id][name]["f1"])
                block = {}
                try:
                    block["existence_point_biserial"] = metrics.point_biserial(exists, scores_column).to_dict()
                    block["severity_spearman"] = metrics.spearman(severity, scores_column).to_dict()
                    block["severity_kendall"] = metrics.kendall_tau(severity, scores_column).to_dict()
                except metrics.MetricsError as exc:
                    block["note"] = str(exc)
                per_type[error_type.code] = block
            correlations[name] = per_type
        payload["correlations"] = correlations

    reporting.write_json(out, payload)
    if skipped:
        click.echo(f"skipped {len(skipped)} sample(s) without a gold summary")
    click.echo(f"wrote {out}")


@main.command("agreement")
@click.option("--matrix", type=click.Path(exists=True, path_type=Path), required=True,
              help="Reliability matrix JSON: {level, units: [[value or null per annotator], ...]}.")
@_fatal_errors
def cmd_agreement(matrix) -> None:
    """Krippendorff's alpha for a multi-annotator reliability matrix."""
    matrix = metrics.load_reliability_matrix(matrix)
    alpha = metrics.krippendorff_alpha(matrix)
    click.echo(f"krippendorff_alpha ({matrix.level}): {alpha:.6g}")


@main.group("cache")
def cmd_cache() -> None:
    """Inspect or purge the response cache."""


@cmd_cache.command("list")
@click.option("--cache-dir", type=click.Path(path_type=Path), required=True)
def cmd_cache_list(cache_dir) -> None:
    for digest in cache_digests(cache_dir):
        click.echo(digest)


@cmd_cache.command("stats")
@click.option("--cache-dir", type=click.Path(path_type=Path), required=True)
def cmd_cache_stats(cache_dir) -> None:
    count, size = cache_stats(cache_dir)
    click.echo(f"entries: {count}")
    click.echo(f"bytes: {size}")


@cmd_cache.command("purge")
@click.option("--cache-dir", type=click.Path(path_type=Path), required=True)
@click.option("--yes", is_flag=True, help="Actually delete; without it the command refuses.")
def cmd_cache_purge(cache_dir, yes) -> None:
    if not yes:
        click.echo("refusing to purge without --yes", err=True)
        sys.exit(1)
    removed = cache_purge(cache_dir)
    click.echo(f"removed {removed} entr{'y' if removed == 1 else 'ies'}")


if __name__ == "__main__":
    main()

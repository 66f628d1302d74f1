"""Command-line interface: run lifecycle, reviews, statistics, reports."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import load_config_file
from .domain import CheckpointDecision, CheckpointState, PromptStrategy, StageCheckpoint
from .errors import DraftsmithError, InvalidConfig, StageExhausted
from .pipeline import make_runtime
from .review import agreement_from_scorecards, aggregate_report, ingest_human_scores
from .runner import create_run, execute, review_run_artifacts


@click.group()
@click.option(
    "--data-dir",
    envvar="DATA_DIR",
    default="./data",
    show_default=True,
    help="Working directory for runs, assets, templates and outputs.",
)
@click.pass_context
def main(ctx: click.Context, data_dir: str):
    """Human-in-the-loop drafting pipeline for review and perspective papers."""
    ctx.ensure_object(dict)
    ctx.obj["data_dir"] = Path(data_dir)


def _runtime(ctx: click.Context):
    return make_runtime(ctx.obj["data_dir"])


@main.group()
def run():
    """Create, attend and export pipeline runs."""


@run.command("new")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--run-id", default=None, help="Client-supplied run id.")
@click.pass_context
def run_new(ctx, config_path: str, run_id: str | None):
    """Create a run from a TOML config; executes it when auto_approve is set."""
    runtime = _runtime(ctx)
    try:
        config, seeds = load_config_file(config_path)
        state = create_run(config, runtime, run_id=run_id, seed_records=seeds)
    except InvalidConfig as exc:
        for violation in exc.violations:
            click.echo(f"invalid config: {violation}", err=True)
        sys.exit(2)
    click.echo(f"created {state.run_id}")
    if config.auto_approve:
        try:
            manuscript = execute(state.run_id, _interactive_decision, runtime)
        except StageExhausted as exc:
            click.echo(f"halted: {exc}", err=True)
            sys.exit(1)
        click.echo(f"complete: {len(manuscript.sections)} sections")
        click.echo(f"artifacts under {runtime.out_dir(state.run_id)}")
    else:
        click.echo(f"run `draftsmith run attend {state.run_id}` to drive it")


def _interactive_decision(checkpoint: StageCheckpoint) -> CheckpointDecision:
    click.echo(f"\n=== checkpoint {checkpoint.id} [{checkpoint.stage}] ===")
    payload = checkpoint.payload
    if payload.get("kind") == "candidates":
        for i, item in enumerate(payload.get("items", [])):
            label = item if isinstance(item, str) else item.get("statement") or item.get("title")
            click.echo(f"  [{i}] {label}")
    else:
        section = payload.get("section", {})
        click.echo(f"--- {section.get('kind')} (revision {section.get('revision')}) ---")
        click.echo(section.get("body", ""))
        if payload.get("diff"):
            click.echo("--- diff from previous revision ---")
            click.echo(payload["diff"])
    choice = click.prompt("approve / edit / reject", type=click.Choice(["a", "e", "r"]))
    if choice == "a":
        return CheckpointDecision(CheckpointState.APPROVED)
    if choice == "e":
        if payload.get("kind") == "candidates":
            raw = click.prompt("selected indices (JSON array, e.g. [0,2])")
            return CheckpointDecision(CheckpointState.EDITED, edited_body=raw)
        click.echo("enter replacement body; finish with a single '.' line")
        lines = []
        while True:
            line = sys.stdin.readline().rstrip("\n")
            if line == ".":
                break
            lines.append(line)
        return CheckpointDecision(CheckpointState.EDITED, edited_body="\n".join(lines))
    note = click.prompt("rejection note")
    return CheckpointDecision(CheckpointState.REJECTED, note=note)


@run.command("attend")
@click.argument("run_id")
@click.pass_context
def run_attend(ctx, run_id: str):
    """Resume a run, prompting at each checkpoint until it finishes."""
    runtime = _runtime(ctx)
    try:
        manuscript = execute(run_id, _interactive_decision, runtime)
    except StageExhausted as exc:
        click.echo(f"halted: {exc}", err=True)
        sys.exit(1)
    except DraftsmithError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"complete: status {manuscript.status.value}")
    click.echo(f"artifacts under {runtime.out_dir(run_id)}")


@run.command("export")
@click.argument("run_id")
@click.pass_context
def run_export(ctx, run_id: str):
    """Print the exported artifact paths for a finished run."""
    runtime = _runtime(ctx)
    state = runtime.state_store.load(run_id)
    out_dir = runtime.out_dir(run_id)
    click.echo(f"status: {state.status.value}")
    for name in ("paper.tex", "references.bib", "lint.json", "telemetry.csv"):
        path = out_dir / name
        marker = "" if path.exists() else "  (missing)"
        click.echo(f"{path}{marker}")


@main.group()
def review():
    """LLM-as-reviewer passes over finished manuscripts."""


@review.command("run")
@click.argument("run_id")
@click.option("--passes", default=3, show_default=True, type=click.IntRange(1, 10))
@click.option("--strategy", default="zs", show_default=True)
@click.pass_context
def review_run(ctx, run_id: str, passes: int, strategy: str):
    """Score a run's manuscript with blind reviewer passes."""
    runtime = _runtime(ctx)
    try:
        payload = review_run_artifacts(runtime, run_id, PromptStrategy.parse(strategy), passes)
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    for criterion, score in payload["aggregate"]["scores"].items():
        click.echo(f"{criterion}: {score:.2f}")
    click.echo(f"weighted average: {payload['weighted_average']:.2f}")
    click.echo(f"report: {runtime.out_dir(run_id) / 'review' / 'report.json'}")


@main.group()
def stats():
    """Inter-rater statistics."""


@stats.command("kappa")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
def stats_kappa(csv_path: str):
    """Fleiss' kappa per criterion from a human-scores CSV."""
    scorecards, _ = ingest_human_scores(csv_path)
    report = agreement_from_scorecards(scorecards)
    for criterion, kappa in report.per_metric_kappa.items():
        shown = "undefined" if kappa is None else f"{kappa:+.3f}"
        click.echo(f"{criterion}: {shown}")


@main.group()
def report():
    """Comparison tables over ingested scores."""


@report.command("table2")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_prefix", default=None, help="Write <out>.csv and <out>.json")
def report_table2(csv_path: str, out_prefix: str | None):
    """Grid of mean criterion scores per (kind, tool mode, strategy)."""
    scorecards, audits = ingest_human_scores(csv_path)
    comparison = aggregate_report(scorecards, audits)
    if out_prefix:
        Path(f"{out_prefix}.csv").write_text(comparison.to_csv(), encoding="utf-8")
        Path(f"{out_prefix}.json").write_text(comparison.to_json(), encoding="utf-8")
        click.echo(f"wrote {out_prefix}.csv and {out_prefix}.json")
    else:
        click.echo(comparison.to_csv(), nl=False)


@main.command()
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--resume/--no-resume", "resume_flag", default=True, help="Resume unfinished runs.")
@click.pass_context
def serve(ctx, port: int, host: str, resume_flag: bool):
    """Start the HTTP service the console talks to."""
    import uvicorn

    from .service import create_app, resume_unfinished

    app = create_app(data_dir=ctx.obj["data_dir"])
    if resume_flag:
        resumed = resume_unfinished(app)
        if resumed:
            click.echo(f"resumed runs: {', '.join(resumed)}")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

"""Command-line entrypoint wiring all pipeline stages.

Subcommands mirror the stage graph (ingest, roundtrip, build-dataset, index,
termbank, emit-ft, infer, evaluate, report, all) plus `demo` to materialize
the bundled offline fixture. One TOML config drives everything; reruns with
unchanged inputs are checksum-skipped.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from . import corpus as corpus_mod
from . import pipeline as pl
from .config import RunConfig, load_config, with_overrides
from .demo import generate_demo
from .mt_gateway import RoundtripError

logger = logging.getLogger(__name__)


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(ctx: click.Context) -> RunConfig:
    config_path = ctx.obj.get("config")
    if not config_path:
        raise click.UsageError("--config is required for this command")
    config = load_config(config_path)
    overrides = ctx.obj.get("overrides", {})
    if overrides.get("seed") is not None:
        config = with_overrides(config, seed=overrides["seed"])
    if overrides.get("workers") is not None:
        config = with_overrides(config, workers=overrides["workers"])
    return config


def _run_stages(config: RunConfig, stages: list[str], force: bool) -> None:
    results = []
    for stage in stages:
        try:
            result = pl.run_stage(stage, config, force=force)
        except pl.PipelineError as exc:
            click.echo(f"stage {stage}: FAILED: {exc}", err=True)
            sys.exit(1)
        results.append(result)
        click.echo(f"stage {stage}: {result.status}")
    sys.exit(pl.exit_code(results))


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run config (TOML).")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--workers", type=int, default=None, help="Override worker count.")
@click.option("--log-level", default="INFO", show_default=True, help="Logging level.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, seed: int | None, workers: int | None, log_level: str) -> None:
    """Roundtrip-translation style transfer pipeline."""
    _setup_logging(log_level)
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path
    ctx.obj["overrides"] = {"seed": seed, "workers": workers}


def _stage_command(name: str, help_text: str):
    @main.command(name=name, help=help_text)
    @click.option("--force", is_flag=True, help="Rerun even if outputs are up to date.")
    @click.pass_context
    def _cmd(ctx: click.Context, force: bool) -> None:
        _run_stages(_load(ctx), [name], force)

    return _cmd


_stage_command("ingest", "Segment, clean, and persist the configured corpora.")
_stage_command("build-dataset", "Pair records with roundtrip outputs; write splits.")
_stage_command("index", "Build the target-side similarity index per domain.")
_stage_command("termbank", "Extract the terminology pair bank per domain.")
_stage_command("emit-ft", "Emit finetuning dataset shards and the train manifest.")
_stage_command("evaluate", "Train style classifiers and score BLEU/accuracy.")
_stage_command("report", "Render the evaluation report (JSON, CSV, markdown).")


@main.command()
@click.option("--force", is_flag=True, help="Rerun all stages even if up to date.")
@click.pass_context
def all(ctx: click.Context, force: bool) -> None:
    """Run the full pipeline: ingest through report."""
    _run_stages(_load(ctx), list(pl.STAGES), force)


@main.command()
@click.option("--pivot", default=None, help="Pivot language code (default from config).")
@click.option("--in", "in_path", type=click.Path(exists=True), default=None,
              help="Corpus JSONL to roundtrip (standalone mode).")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Output JSONL path.")
@click.option("--force", is_flag=True, help="Rerun even if outputs are up to date.")
@click.pass_context
def roundtrip(ctx: click.Context, pivot: str | None, in_path: str | None, out_path: str | None, force: bool) -> None:
    """Roundtrip-translate a corpus through the pivot language."""
    config = _load(ctx)
    if in_path is None:
        _run_stages(config, ["roundtrip"], force)
        return
    if out_path is None:
        raise click.UsageError("--out is required with --in")
    records = corpus_mod.read_corpus_jsonl(in_path)
    _, pipeline = pl.build_gateway(config)
    results = pipeline.roundtrip_batch([r.text for r in records], pivot)
    ok = failed = 0
    with Path(out_path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec, rt in zip(records, results):
            if isinstance(rt, RoundtripError):
                failed += 1
                row = {"id": rec.id, "ok": False, "stage": rt.stage, "error": rt.detail}
            else:
                ok += 1
                row = {
                    "id": rec.id,
                    "ok": True,
                    "neutral": rt.neutral,
                    "pivot_text": rt.pivot_text,
                    "pivot_lang": rt.pivot_lang,
                }
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    click.echo(f"roundtripped {ok} ok, {failed} failed -> {out_path}")
    sys.exit(0 if failed == 0 else 1)


@main.command()
@click.option("--route", type=click.Choice(["rt-first", "direct"]), default=None,
              help="Inference route (default from config).")
@click.option("--shots", default=None, metavar="MODE:K",
              help="Shot config, e.g. similar:5 or random:3 or none.")
@click.option("--domain", default=None, help="Style domain (default: first configured).")
@click.option("--in", "in_path", type=click.Path(exists=True), default=None,
              help="Plain-text query file, one per line (standalone mode).")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Results JSONL path.")
@click.option("--force", is_flag=True, help="Rerun even if outputs are up to date.")
@click.pass_context
def infer(ctx: click.Context, route: str | None, shots: str | None, domain: str | None,
          in_path: str | None, out_path: str | None, force: bool) -> None:
    """Transfer queries into the target style."""
    config = _load(ctx)
    updates: dict = {}
    if route is not None:
        updates["route"] = route.replace("-", "_")
    if shots is not None:
        if shots == "none":
            updates["k"] = 0
        else:
            mode, _, count = shots.partition(":")
            if mode not in ("similar", "random") or not count.isdigit():
                raise click.UsageError("--shots must look like similar:5, random:3, or none")
            updates["infer_shot_mode"] = mode
            updates["k"] = int(count)
    if updates:
        config = with_overrides(config, **updates)
    if in_path is None:
        _run_stages(config, ["infer"], force)
        return
    if out_path is None:
        raise click.UsageError("--out is required with --in")
    domain = domain or config.domains[0].name
    config.domain_config(domain)
    queries = [line.strip() for line in Path(in_path).read_text(encoding="utf-8").splitlines() if line.strip()]
    engine = pl.make_engine(config, domain)
    results, summary = engine.batch_transfer(queries)
    with Path(out_path).open("w", encoding="utf-8", newline="\n") as fh:
        for i, result in enumerate(results):
            fh.write(json.dumps(pl.serialize_transfer(result, f"q{i:05d}"), ensure_ascii=False, sort_keys=True) + "\n")
    click.echo(f"transferred {summary.ok}/{summary.total} queries -> {out_path}")
    sys.exit(0 if summary.failed == 0 else 1)


@main.command()
@click.option("--out", "out_dir", type=click.Path(), default="demo", show_default=True,
              help="Directory to materialize the demo workspace in.")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--sentences", type=int, default=250, show_default=True,
              help="Sentences per style domain.")
def demo(out_dir: str, seed: int, sentences: int) -> None:
    """Write the bundled synthetic two-style demo fixture."""
    config_path = generate_demo(out_dir, seed=seed, sentences_per_domain=sentences)
    click.echo(f"demo written; run: stylepipe --config {config_path} all")


if __name__ == "__main__":
    main()

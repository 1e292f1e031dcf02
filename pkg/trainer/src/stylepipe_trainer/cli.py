"""Command line for the trainer: train adapters, serve the result."""

from __future__ import annotations

import logging
import sys

import click

from . import __version__
from .server import serve_stub
from .train import read_manifest, train


@click.group()
@click.version_option(__version__)
@click.option("--log-level", default="INFO", show_default=True)
def main(log_level: str) -> None:
    """Adapter finetuning harness for stylepipe datasets."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@main.command("train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True,
              help="Training manifest JSON emitted by the pipeline.")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True,
              help="Directory holding the ft-*.jsonl shards.")
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Adapter output directory.")
@click.option("--steps", type=int, default=100, show_default=True, help="Optimizer steps to run.")
@click.option("--skip-checksum", is_flag=True, help="Skip dataset checksum verification.")
def train_cmd(manifest_path: str, dataset_dir: str, out_dir: str, steps: int, skip_checksum: bool) -> None:
    """Train low-rank adapters on an emitted dataset."""
    manifest = read_manifest(manifest_path)
    run = train(
        manifest, dataset_dir, out_dir, max_steps=steps, verify_checksum=not skip_checksum
    )
    click.echo(
        f"steps={run.steps_completed} loss={run.loss_curve[-1]:.4f} "
        f"base_unchanged={run.base_unchanged} adapter={run.adapter_path}"
    )
    sys.exit(1 if run.aborted else 0)


@main.command("serve")
@click.option("--adapter", "adapter_dir", type=click.Path(exists=True), required=True,
              help="Directory with adapter.pt and adapter-config.json.")
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_cmd(adapter_dir: str, port: int, host: str) -> None:
    """Serve the adapter over the completion HTTP contract."""
    server = serve_stub(adapter_dir, port=port, host=host)
    click.echo(f"serving on http://{host}:{server.server_port} (Ctrl-C to stop)")
    try:
        import time

        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()

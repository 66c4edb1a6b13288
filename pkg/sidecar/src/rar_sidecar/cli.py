"""Serve the sidecar: ``rar-sidecar --port 8080 --mode mock``."""
from __future__ import annotations

import click
import uvicorn

from .app import Settings, create_app


@click.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--mode", type=click.Choice(["mock", "real"]), default="mock", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int,
              help="Mock mode: seed for hash-derived embeddings.")
@click.option("--dim", default=64, show_default=True, type=int,
              help="Mock mode: embedding dimension.")
@click.option("--embed-model", default="clip-ViT-B-16", show_default=True,
              help="Real mode: sentence-transformers model name or path.")
@click.option("--ranker-model", default=None,
              help="Real mode: optional image-text-to-text model for /rank.")
def main(host, port, mode, seed, dim, embed_model, ranker_model):
    """Run the embed/rank HTTP service."""
    settings = Settings(mode=mode, seed=seed, dim=dim,
                        embed_model=embed_model, ranker_model=ranker_model)
    uvicorn.run(create_app(settings), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

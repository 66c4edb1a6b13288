"""FastAPI application exposing the embed/rank wire contract.

Endpoints:
    POST /embed   {items: [{id, kind: "image"|"text", payload}]}
                  -> {dim, vectors}; vectors are unit-norm, one per item
    POST /rank    {image_ref, candidates, k, style}
                  -> {ranking}; mock mode returns a lexicographic permutation
    GET  /healthz -> {status, mode, ready}

Malformed requests answer 400; a real backend that has not finished loading
answers 503.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .backends import MockBackend, RealBackend


class EmbedItem(BaseModel):
    id: int | str
    kind: Literal["image", "text"]
    payload: str


class EmbedRequest(BaseModel):
    items: list[EmbedItem] = Field(min_length=1)


class EmbedResponse(BaseModel):
    dim: int
    vectors: list[list[float]]


class RankRequest(BaseModel):
    image_ref: str
    candidates: list[str] = Field(min_length=1)
    k: int = Field(ge=1)
    style: Literal["plain", "in_context"]


class RankResponse(BaseModel):
    ranking: list[str]


@dataclass
class Settings:
    mode: str = "mock"  # "mock" | "real"
    seed: int = 0
    dim: int = 64
    embed_model: str = "clip-ViT-B-16"
    ranker_model: str | None = None


def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or Settings()
    if settings.mode == "mock":
        backend = MockBackend(seed=settings.seed, dim=settings.dim)
    elif settings.mode == "real":
        backend = RealBackend(settings.embed_model, settings.ranker_model)
    else:
        raise ValueError(f"unknown mode {settings.mode!r}")

    app = FastAPI(title="rar-sidecar", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request"})

    def unavailable() -> JSONResponse:
        detail = "model not ready"
        error = getattr(backend, "error", None)
        if error:
            detail = f"model not ready: {error}"
        return JSONResponse(status_code=503, content={"detail": detail})

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "mode": settings.mode, "ready": backend.ready}

    @app.post("/embed", response_model=EmbedResponse)
    async def embed(request: EmbedRequest):
        if not backend.ready:
            return unavailable()
        dim, vectors = backend.embed(request.items)
        return EmbedResponse(dim=dim, vectors=vectors)

    @app.post("/rank", response_model=RankResponse)
    async def rank(request: RankRequest):
        if not backend.ready:
            return unavailable()
        try:
            ranking = backend.rank(
                request.image_ref, request.candidates, request.k, request.style
            )
        except RuntimeError as exc:
            return JSONResponse(status_code=503, content={"detail": str(exc)})
        return RankResponse(ranking=ranking)

    return app

"""Read-only HTTP retrieval service backing the companion web UI.

The service loads an index snapshot at startup and answers text and
query-by-example searches against it; it never mutates the index or the
checkpoint.  Errors use a uniform ``{"error": {"code", "message"}}`` body.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import ProviderError, UsageError
from .pooler import checkpoint_id as _checkpoint_id
from .retrieval import (
    EmbeddingIndex,
    TextEmbedder,
    get_embedder,
    load_index,
    search,
)

K_MIN, K_MAX = 1, 100


@dataclass
class ServiceConfig:
    """Runtime configuration; flags override file values, file overrides defaults."""

    index_path: str
    port: int = 8000
    checkpoint_path: str | None = None
    embedder: str = "toy"
    provider_url: str | None = None
    dataset_path: str | None = None
    thumbnail_root: str | None = None
    static_root: str | None = None
    cors: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise UsageError(f"port must be in [1, 65535], got {self.port}")
        if not self.index_path:
            raise UsageError("index_path is required")
        for label, p in (
            ("index_path", self.index_path),
            ("checkpoint_path", self.checkpoint_path),
            ("dataset_path", self.dataset_path),
            ("thumbnail_root", self.thumbnail_root),
            ("static_root", self.static_root),
        ):
            if p is not None and not Path(p).exists():
                raise UsageError(f"{label} does not exist: {p}")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ServiceConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class TextSearchRequest(BaseModel):
    query: str
    k: int = 10


class SequenceSearchRequest(BaseModel):
    episode_id: str
    k: int = 10


def _clamp_k(k: int) -> int:
    return max(K_MIN, min(K_MAX, k))


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def _result_payload(index: EmbeddingIndex, result) -> dict:
    results = []
    for entry in result.entries:
        meta = index.metadata.get(entry.episode_id)
        thumbs = meta.thumbnails if meta else []
        results.append(
            {
                "episode_id": entry.episode_id,
                "rank": entry.rank,
                "score": entry.score,
                "description": meta.description if meta else "",
                "thumbnails": [
                    f"/api/thumbnails/{entry.episode_id}/{i}"
                    for i in range(len(thumbs))
                ],
            }
        )
    return {"results": results}


def create_app(
    config: ServiceConfig,
    index: EmbeddingIndex | None = None,
    embedder: TextEmbedder | None = None,
) -> FastAPI:
    """Build the FastAPI app over an immutable index snapshot."""
    if index is None:
        index = load_index(config.index_path)
    if embedder is None:
        dataset = None
        if config.embedder == "precomputed":
            from .dataio import read_dataset

            if config.dataset_path is None:
                raise UsageError("precomputed embedder requires dataset_path")
            dataset = read_dataset(config.dataset_path)
        embedder = get_embedder(
            config.embedder, url=config.provider_url, dataset=dataset
        )
    model_id = index.model_id
    if config.checkpoint_path:
        model_id = _checkpoint_id(config.checkpoint_path)
    thumbnail_root = (
        Path(config.thumbnail_root).resolve() if config.thumbnail_root else None
    )

    app = FastAPI(title="uflow retrieval service")
    if config.cors:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return _error(422, "invalid_request", str(exc.errors()))

    @app.exception_handler(ProviderError)
    async def _provider_handler(request: Request, exc: ProviderError):
        return _error(502, "embedder_unavailable", str(exc))

    @app.get("/api/health")
    async def health():
        return {"status": "ok", "index_size": len(index), "model_id": model_id}

    @app.post("/api/search/text")
    async def search_text(req: TextSearchRequest):
        vec = embedder.embed(req.query)
        result = search(index, vec, _clamp_k(req.k))
        return _result_payload(index, result)

    @app.post("/api/search/sequence")
    async def search_sequence(req: SequenceSearchRequest):
        try:
            row = index.row_of(req.episode_id)
        except KeyError:
            return _error(
                404, "episode_not_found", f"unknown episode {req.episode_id!r}"
            )
        result = search(index, index.matrix[row], _clamp_k(req.k))
        return _result_payload(index, result)

    @app.get("/api/episodes/{episode_id}")
    async def episode_detail(episode_id: str):
        meta = index.metadata.get(episode_id)
        if meta is None:
            return _error(
                404, "episode_not_found", f"unknown episode {episode_id!r}"
            )
        return {
            "episode_id": episode_id,
            "description": meta.description,
            "n_screens": meta.n_screens,
            "archetype_label": meta.archetype_label,
            "thumbnails": [
                f"/api/thumbnails/{episode_id}/{i}"
                for i in range(len(meta.thumbnails))
            ],
        }

    @app.get("/api/thumbnails/{episode_id}/{idx}")
    async def thumbnail(episode_id: str, idx: int):
        meta = index.metadata.get(episode_id)
        if meta is None:
            return _error(
                404, "episode_not_found", f"unknown episode {episode_id!r}"
            )
        if thumbnail_root is None or not 0 <= idx < len(meta.thumbnails):
            return _error(
                404, "thumbnail_not_found", f"no thumbnail {idx} for {episode_id}"
            )
        target = (thumbnail_root / meta.thumbnails[idx]).resolve()
        if not target.is_relative_to(thumbnail_root) or not target.is_file():
            return _error(
                404, "thumbnail_not_found", f"no thumbnail {idx} for {episode_id}"
            )
        return FileResponse(target)

    if config.static_root:
        app.mount(
            "/", StaticFiles(directory=config.static_root, html=True), name="static"
        )

    return app

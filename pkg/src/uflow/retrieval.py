"""Exact cosine-similarity retrieval over an id-addressed embedding index.

The index stores L2-normalized 1536-d flow embeddings plus per-episode
display metadata.  Search is an exact brute-force scan: scores are dot
products against the normalized query, ties break by ascending episode id,
and ranks are 1-based and contiguous.

Index file layout (all little endian): magic ``UFIX``, u32 version (1),
u32 row count, u32 dimension, the f32 embedding matrix, then a UTF-8 JSON
manifest running to end of file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .dataio import TEXT_DIM, Dataset, Episode, toy_text_embed
from .errors import DataFormatError, NumericError, ProviderError, UsageError
from .pooler import PoolerParams, forward, pack_sequences

INDEX_MAGIC = b"UFIX"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<4sIII")


@dataclass
class EpisodeMeta:
    """Display metadata carried alongside each indexed embedding."""

    description: str = ""
    n_screens: int = 0
    archetype_label: str | None = None
    thumbnails: list[str] = field(default_factory=list)


@dataclass
class EmbeddingIndex:
    """Id-addressed store of unit-norm flow embeddings."""

    ids: list[str]
    matrix: np.ndarray
    metadata: dict[str, EpisodeMeta]
    model_id: str = ""
    dataset_meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise DataFormatError(
                f"index matrix must be 2-d, got shape {self.matrix.shape}"
            )
        n, dim = self.matrix.shape
        if len(self.ids) != n:
            raise DataFormatError(
                f"index has {n} rows but {len(self.ids)} ids"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataFormatError("index ids must be unique")
        if not np.all(np.isfinite(self.matrix)):
            raise NumericError("index matrix contains non-finite values")
        if n:
            norms = np.linalg.norm(self.matrix, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-5):
                raise NumericError("index rows must be unit-norm within 1e-5")
        self._row_of = {eid: i for i, eid in enumerate(self.ids)}
        # Rank of each row when sorted by ascending id; used for tie-breaks.
        self._id_rank = np.empty(n, dtype=np.int64)
        self._id_rank[np.argsort(np.asarray(self.ids))] = np.arange(n)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_of(self, episode_id: str) -> int:
        if episode_id not in self._row_of:
            raise KeyError(episode_id)
        return self._row_of[episode_id]


@dataclass
class RetrievalEntry:
    episode_id: str
    score: float
    rank: int


@dataclass
class RetrievalResult:
    entries: list[RetrievalEntry]

    def ids(self) -> list[str]:
        return [e.episode_id for e in self.entries]


def ranked_indices(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Row indices ordered by descending score, ties by ascending episode id."""
    return np.lexsort((id_rank, -scores))


def build_index(
    params: PoolerParams,
    dataset: Dataset,
    model_id: str = "",
    batch_size: int = 512,
) -> EmbeddingIndex:
    """Pool and L2-normalize every episode into an index, in dataset order."""
    cfg = params.config
    if cfg.d_out != TEXT_DIM:
        raise DataFormatError(
            f"pooler output dim {cfg.d_out} does not match index dim {TEXT_DIM}"
        )
    episodes = dataset.episodes
    for ep in episodes:
        if ep.screens.shape[1] != cfg.d_vis:
            raise DataFormatError(
                f"episode {ep.id}: feature dim {ep.screens.shape[1]} does not "
                f"match pooler d_vis {cfg.d_vis}"
            )
        if ep.n_screens > cfg.max_len:
            raise UsageError(
                f"episode {ep.id} has {ep.n_screens} screens, longer than the "
                f"pooler max_len {cfg.max_len}; filter the dataset first"
            )
    rows = np.zeros((len(episodes), cfg.d_out), dtype=np.float32)
    for start in range(0, len(episodes), batch_size):
        chunk = episodes[start : start + batch_size]
        batch = pack_sequences([ep.screens for ep in chunk], cfg.max_len)
        out = forward(params, batch)
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise NumericError("pooled embedding with zero norm")
        rows[start : start + len(chunk)] = out / norms
    metadata = {
        ep.id: EpisodeMeta(
            description=ep.description,
            n_screens=ep.n_screens,
            archetype_label=ep.archetype_label,
            thumbnails=list(ep.thumbnail_refs),
        )
        for ep in episodes
    }
    return EmbeddingIndex(
        ids=[ep.id for ep in episodes],
        matrix=rows,
        metadata=metadata,
        model_id=model_id,
        dataset_meta=dict(dataset.meta),
    )


def search(index: EmbeddingIndex, query: np.ndarray, k: int) -> RetrievalResult:
    """Exact top-min(k, N) cosine search with deterministic tie-breaking."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != index.dim:
        raise UsageError(
            f"query dim {q.shape[0]} does not match index dim {index.dim}"
        )
    if not np.all(np.isfinite(q)):
        raise NumericError("query contains non-finite values")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise NumericError("zero-norm query cannot be normalized")
    q = q / norm
    scores = index.matrix @ q
    order = ranked_indices(scores, index._id_rank)[: min(k, len(index))]
    entries = [
        RetrievalEntry(
            episode_id=index.ids[i], score=float(scores[i]), rank=rank
        )
        for rank, i in enumerate(order, start=1)
    ]
    return RetrievalResult(entries=entries)


def search_by_text(
    index: EmbeddingIndex, text: str, embedder: "TextEmbedder", k: int = 10
) -> RetrievalResult:
    """Embed the query text with the configured provider, then search."""
    vec = embedder.embed(text)
    return search(index, vec, k)


def search_by_sequence(
    index: EmbeddingIndex, params: PoolerParams, episode: Episode, k: int = 10
) -> RetrievalResult:
    """Pool an episode's screens with the trained head, then search."""
    batch = pack_sequences([episode.screens], params.config.max_len)
    vec = forward(params, batch)[0]
    return search(index, vec, k)


# --- index file format ---------------------------------------------------------

def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "ids": index.ids,
        "descriptions": [index.metadata[i].description for i in index.ids],
        "n_screens": [index.metadata[i].n_screens for i in index.ids],
        "archetype_labels": [index.metadata[i].archetype_label for i in index.ids],
        "thumbnails": [index.metadata[i].thumbnails for i in index.ids],
        "model_id": index.model_id,
        "dataset_meta": index.dataset_meta,
    }
    with open(path, "wb") as f:
        f.write(
            _INDEX_HEADER.pack(
                INDEX_MAGIC, INDEX_VERSION, len(index), index.dim
            )
        )
        f.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())
        f.write(
            json.dumps(manifest, sort_keys=True, ensure_ascii=False).encode("utf-8")
        )


def load_index(path: str | Path) -> EmbeddingIndex:
    path = Path(path)
    name = path.name
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{name}: cannot read index: {exc}") from exc
    if len(raw) < _INDEX_HEADER.size:
        raise DataFormatError(
            f"{name}: truncated header, expected {_INDEX_HEADER.size} bytes, "
            f"got {len(raw)}"
        )
    magic, version, n, dim = _INDEX_HEADER.unpack_from(raw)
    if magic != INDEX_MAGIC:
        raise DataFormatError(
            f"{name}: bad magic {magic!r} (expected {INDEX_MAGIC!r})"
        )
    if version != INDEX_VERSION:
        raise DataFormatError(
            f"{name}: unsupported version {version} (expected {INDEX_VERSION})"
        )
    if dim != TEXT_DIM:
        raise DataFormatError(
            f"{name}: index dimension must be {TEXT_DIM}, got {dim}"
        )
    matrix_bytes = n * dim * 4
    body = raw[_INDEX_HEADER.size :]
    if len(body) < matrix_bytes:
        raise DataFormatError(
            f"{name}: matrix truncated, expected {matrix_bytes} bytes, got "
            f"{len(body)}"
        )
    matrix = np.frombuffer(
        body[:matrix_bytes], dtype="<f4"
    ).reshape(n, dim).copy()
    try:
        manifest = json.loads(body[matrix_bytes:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{name}: manifest JSON unreadable: {exc}") from exc
    ids = manifest.get("ids")
    if not isinstance(ids, list) or len(ids) != n:
        raise DataFormatError(
            f"{name}: manifest ids must list {n} entries, got "
            f"{len(ids) if isinstance(ids, list) else type(ids).__name__}"
        )
    descriptions = manifest.get("descriptions") or [""] * n
    n_screens = manifest.get("n_screens") or [0] * n
    labels = manifest.get("archetype_labels") or [None] * n
    thumbs = manifest.get("thumbnails") or [[] for _ in range(n)]
    metadata = {
        eid: EpisodeMeta(
            description=descriptions[i],
            n_screens=n_screens[i],
            archetype_label=labels[i],
            thumbnails=list(thumbs[i]),
        )
        for i, eid in enumerate(ids)
    }
    return EmbeddingIndex(
        ids=list(ids),
        matrix=matrix,
        metadata=metadata,
        model_id=manifest.get("model_id", ""),
        dataset_meta=manifest.get("dataset_meta") or {},
    )


# --- text embedding providers ---------------------------------------------------

class TextEmbedder:
    """Provider interface: a name, a fixed dimension, and embed(text)."""

    name = "abstract"
    dim = TEXT_DIM

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class ToyTextEmbedder(TextEmbedder):
    """Deterministic hash-bucket embedder; needs no external services."""

    name = "toy"

    def embed(self, text: str) -> np.ndarray:
        return toy_text_embed(text)


class PrecomputedTextEmbedder(TextEmbedder):
    """Exact-string lookup over embeddings captured in a dataset."""

    name = "precomputed"

    def __init__(self, mapping: dict[str, np.ndarray]):
        self.mapping = dict(mapping)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "PrecomputedTextEmbedder":
        return cls({ep.description: ep.text_embedding for ep in dataset.episodes})

    def embed(self, text: str) -> np.ndarray:
        if text not in self.mapping:
            raise ProviderError(
                f"no precomputed embedding for text {text!r}"
            )
        return self.mapping[text]


class HttpTextEmbedder(TextEmbedder):
    """External provider: POST {"text": ...} -> {"embedding": [...]}."""

    name = "http"

    def __init__(self, url: str, timeout: float = 10.0):
        if not url:
            raise UsageError("http embedder requires a provider URL")
        self.url = url
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = requests.post(
                self.url, json={"text": text}, timeout=self.timeout
            )
            resp.raise_for_status()
            payload = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ProviderError(f"embedding provider failed: {exc}") from exc
        vec = np.asarray(payload.get("embedding"), dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ProviderError(
                f"provider returned shape {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise ProviderError("provider returned non-finite values")
        return vec


def get_embedder(
    name: str, url: str | None = None, dataset: Dataset | None = None
) -> TextEmbedder:
    """Factory for the built-in providers."""
    if name == "toy":
        return ToyTextEmbedder()
    if name == "precomputed":
        if dataset is None:
            raise UsageError("precomputed embedder requires a dataset")
        return PrecomputedTextEmbedder.from_dataset(dataset)
    if name == "http":
        return HttpTextEmbedder(url or "")
    raise UsageError(f"unknown embedder provider {name!r}")

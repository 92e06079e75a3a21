"""Embeddings, a per-project vector index, and exact top-k similarity search.

Vectors are stored unit-normalized so cosine similarity reduces to a dot
product. Search is an exact linear scan: the largest project has a few
thousand tasks, so approximate structures would only add failure modes.
Backends are pluggable; a deterministic hashing stub lets the whole pipeline
run offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .corpus import Task

log = logging.getLogger(__name__)

#: Embedding models used in the experiment grid.
BAAI_MODEL = "BAAI/bge-large-en-v1.5"
SBERT_MODEL = "sentence-transformers/all-mpnet-base-v2"

DEFAULT_EMBED_PARALLELISM = 4


class EmbeddingTransportError(RuntimeError):
    """The embedding backend could not be reached or returned a bad response."""


class ZeroVectorError(ValueError):
    """The backend produced an all-zero vector, which cannot be normalized."""


class DimensionMismatchError(ValueError):
    """Vector dimensions disagree with the index or between batch entries."""


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Unit-L2-normalized dense vector tagged with the model that produced it."""

    model_id: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if abs(float(np.linalg.norm(self.values)) - 1.0) > 1e-6:
            raise ValueError("embedding vector must be unit-normalized")

    @property
    def dims(self) -> int:
        return int(self.values.shape[0])


class EmbeddingBackend(Protocol):
    def embed(self, model_id: str, texts: Sequence[str]) -> list[list[float]]: ...


class HashEmbeddingBackend:
    """Deterministic pseudo-embeddings derived from SHA-256, for offline runs.

    Construction: for block b = 0, 1, ... take
    sha256(f"{model_id}|{text}|{b}") and split the 32-byte digest into eight
    big-endian uint32 words, each mapped to u / 2**32 * 2 - 1; the first
    `dims` floats form the raw vector (normalization happens in the caller,
    like any other backend).
    """

    name = "hash-embed"

    def __init__(self, dims: int = 64):
        if dims < 1:
            raise ValueError("dims must be positive")
        self.dims = dims

    def embed(self, model_id: str, texts: Sequence[str]) -> list[list[float]]:
        return [self._one(model_id, text) for text in texts]

    def _one(self, model_id: str, text: str) -> list[float]:
        values: list[float] = []
        block = 0
        while len(values) < self.dims:
            digest = hashlib.sha256(f"{model_id}|{text}|{block}".encode("utf-8")).digest()
            for (word,) in struct.iter_unpack(">I", digest):
                values.append(word / 2**32 * 2.0 - 1.0)
            block += 1
        return values[: self.dims]


class HttpEmbeddingBackend:
    """POSTs {model, input: [...]} and reads {data: [{embedding: [...]}, ...]}."""

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.url = url

    def embed(self, model_id: str, texts: Sequence[str]) -> list[list[float]]:
        try:
            response = self._client.post(self.url, json={"model": model_id, "input": list(texts)})
        except httpx.HTTPError as exc:
            raise EmbeddingTransportError(f"embedding request failed: {exc}") from exc
        if response.status_code != 200:
            raise EmbeddingTransportError(
                f"embedding backend returned {response.status_code}: {response.text[:200]}"
            )
        payload = response.json()
        try:
            return [item["embedding"] for item in payload["data"]]
        except (KeyError, TypeError) as exc:
            raise EmbeddingTransportError(f"malformed embedding response: {exc}") from exc


class EmbeddingCache:
    """Content-addressed vector store: one JSON file per (model, text-hash).

    Writes go through a temp file and an atomic rename, so concurrent writers
    of the same key cannot interleave partial content.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def _path(self, model_id: str, text: str) -> Path:
        model_slug = model_id.replace("/", "__")
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.root / model_slug / f"{digest}.json"

    def get(self, model_id: str, text: str) -> list[float] | None:
        path = self._path(model_id, text)
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, model_id: str, text: str, values: Sequence[float]) -> None:
        path = self._path(model_id, text)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(list(values), fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def compose_embed_text(task: Task) -> str:
    return f"Title: {task.title}\nDescription: {task.description}"


def _normalize(model_id: str, raw: Sequence[float]) -> EmbeddingVector:
    values = np.asarray(raw, dtype=np.float64)
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise ZeroVectorError(f"model {model_id!r} produced a zero vector")
    return EmbeddingVector(model_id=model_id, values=values / norm)


def embed_text(
    backend: EmbeddingBackend,
    model_id: str,
    text: str,
    cache: EmbeddingCache | None = None,
) -> EmbeddingVector:
    """Embed one text, unit-normalized; identical text yields identical vectors.

    The cache stores normalized values keyed by (model, content hash), so a
    warm cache never touches the backend.
    """
    if cache is not None:
        hit = cache.get(model_id, text)
        if hit is not None:
            return EmbeddingVector(model_id=model_id, values=np.asarray(hit, dtype=np.float64))
    vector = _normalize(model_id, backend.embed(model_id, [text])[0])
    if cache is not None:
        cache.put(model_id, text, vector.values.tolist())
    return vector


def embed_texts(
    backend: EmbeddingBackend,
    model_id: str,
    texts: Sequence[str],
    cache: EmbeddingCache | None = None,
    parallelism: int = DEFAULT_EMBED_PARALLELISM,
) -> list[EmbeddingVector]:
    """Embed many texts, order-preserving, with bounded backend parallelism."""
    if parallelism <= 1 or len(texts) <= 1:
        return [embed_text(backend, model_id, t, cache) for t in texts]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda t: embed_text(backend, model_id, t, cache), texts))


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|), clamped into [-1, 1]."""
    if a.dims != b.dims:
        raise DimensionMismatchError(f"dims differ: {a.dims} vs {b.dims}")
    na, nb = float(np.linalg.norm(a.values)), float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(a.values, b.values) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class IndexEntry:
    task: Task
    vector: EmbeddingVector


@dataclass(frozen=True)
class RetrievalResult:
    task: Task
    similarity: float
    rank: int


class VectorIndex:
    """Immutable per-project collection of (task, vector), in corpus order."""

    def __init__(self, model_id: str, entries: Sequence[IndexEntry]):
        if not entries:
            raise ValueError("cannot build an empty index")
        dims = entries[0].vector.dims
        for e in entries:
            if e.vector.model_id != model_id:
                raise ValueError(f"entry {e.task.issue_key} embedded with {e.vector.model_id!r}")
            if e.vector.dims != dims:
                raise DimensionMismatchError(f"entry {e.task.issue_key} has dims {e.vector.dims}, expected {dims}")
        self.model_id = model_id
        self.entries = tuple(entries)
        self.dims = dims
        self._matrix = np.stack([e.vector.values for e in entries])

    def __len__(self) -> int:
        return len(self.entries)


def build_index(
    train: Sequence[Task],
    backend: EmbeddingBackend,
    model_id: str,
    cache: EmbeddingCache | None = None,
    parallelism: int = DEFAULT_EMBED_PARALLELISM,
) -> VectorIndex:
    """One entry per training task, in the order given.

    Any embedding failure aborts the build with the failing task's issue key
    attached to the error.
    """
    if not train:
        raise ValueError("training split is empty")

    def embed_one(task: Task) -> EmbeddingVector:
        try:
            return embed_text(backend, model_id, compose_embed_text(task), cache)
        except Exception as exc:
            exc.args = (f"task {task.issue_key}: {exc}",)
            raise

    if parallelism <= 1 or len(train) <= 1:
        vectors = [embed_one(t) for t in train]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            vectors = list(pool.map(embed_one, train))
    return VectorIndex(model_id, [IndexEntry(t, v) for t, v in zip(train, vectors)])


def retrieve_top_k(index: VectorIndex, query: EmbeddingVector, k: int) -> list[RetrievalResult]:
    """The k most similar entries, similarity descending.

    Exact similarity ties go to the older task (then lexicographic issue
    key); if k exceeds the index size, every entry is returned.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if query.dims != index.dims:
        raise DimensionMismatchError(f"query dims {query.dims} != index dims {index.dims}")
    sims = np.clip(index._matrix @ query.values, -1.0, 1.0)
    order = sorted(
        range(len(index.entries)),
        key=lambda i: (-sims[i], index.entries[i].task.created, index.entries[i].task.issue_key),
    )
    return [
        RetrievalResult(task=index.entries[i].task, similarity=float(sims[i]), rank=rank)
        for rank, i in enumerate(order[:k], start=1)
    ]

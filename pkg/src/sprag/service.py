"""Planning-assistant web service: estimates with evidence, decision history.

Endpoints (all under /api/v1, JSON bodies, permissive CORS):

    GET  /api/v1/projects
    POST /api/v1/projects/{id}/estimate
    POST /api/v1/projects/{id}/decisions
    GET  /api/v1/projects/{id}/history?page&size

Decisions are persisted to an append-only line-delimited file per project
(flushed and fsynced before acknowledgment) and re-indexed at startup, so a
restart never loses an acknowledged decision.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, field_validator

from .corpus import (
    DEFAULT_SCALE,
    DEFAULT_SIZE_GROUPS,
    ProjectDataset,
    SizeGroupConfig,
    Task,
    assign_size_group,
    clean_text,
    load_corpus,
)
from .estimator import BestConfigTable
from .generator import (
    GenerationConfig,
    GenerationError,
    GeneratorBackend,
    build_prompt,
    format_similar_tasks,
    generate,
    median_of_references,
    parse_story_point,
)
from .retriever import (
    EmbeddingBackend,
    EmbeddingCache,
    EmbeddingTransportError,
    VectorIndex,
    ZeroVectorError,
    build_index,
    embed_text,
    retrieve_top_k,
)

FALLBACK_CELL = (3, 0.0)


@dataclass
class ServiceSettings:
    dataset_dir: Path
    decisions_dir: Path
    embed_backend: EmbeddingBackend
    gen_backend: GeneratorBackend
    embedding_model: str
    generator_model: str
    best_config_path: Path | None = None
    cache_dir: Path | None = None
    size_groups: SizeGroupConfig = field(default_factory=lambda: DEFAULT_SIZE_GROUPS)


class EstimateRequest(BaseModel):
    title: str
    description: str = ""
    top_k: int | None = Field(default=None, ge=1, le=50)
    temperature: float | None = Field(default=None, ge=0.0, le=2.0)

    @field_validator("title")
    @classmethod
    def title_not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("title must not be empty")
        return v


class DecisionRequest(BaseModel):
    title: str
    description: str = ""
    suggested: float
    final: float

    @field_validator("title")
    @classmethod
    def title_not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("title must not be empty")
        return v

    @field_validator("suggested", "final")
    @classmethod
    def on_scale(cls, v: float) -> float:
        if v not in DEFAULT_SCALE:
            raise ValueError(f"story point {v:g} is not on the allowed scale")
        return v


class DecisionStore:
    """Append-only decision log per project with an in-memory index."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[str, list[dict[str, Any]]] = {}
        for path in sorted(self.root.glob("*.jsonl")):
            with path.open("r", encoding="utf-8") as fh:
                self._records[path.stem] = [json.loads(line) for line in fh if line.strip()]

    def append(self, project_id: str, decision: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            records = self._records.setdefault(project_id, [])
            decision = {"id": (records[-1]["id"] + 1 if records else 1), **decision}
            path = self.root / f"{project_id}.jsonl"
            with path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(decision, ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            records.append(decision)
            return decision

    def history(self, project_id: str) -> list[dict[str, Any]]:
        return list(reversed(self._records.get(project_id, [])))


class ProjectRegistry:
    """Loaded corpora plus lazily built per-project vector indexes."""

    def __init__(self, settings: ServiceSettings):
        self.settings = settings
        self.cache = EmbeddingCache(settings.cache_dir) if settings.cache_dir else None
        self.datasets: dict[str, ProjectDataset] = {}
        self._indexes: dict[str, VectorIndex] = {}
        self._lock = threading.Lock()
        for path in sorted(settings.dataset_dir.glob("*.jsonl")):
            if any(path.name.endswith(s) for s in (".train.jsonl", ".test.jsonl", ".rejects.jsonl")):
                continue
            dataset = load_corpus(path, path.stem)
            if dataset.tasks:
                self.datasets[path.stem] = dataset
        self.best_config = None
        if settings.best_config_path and Path(settings.best_config_path).exists():
            self.best_config = BestConfigTable.load(settings.best_config_path)

    def dataset(self, project_id: str) -> ProjectDataset:
        if project_id not in self.datasets:
            raise HTTPException(status_code=404, detail=f"unknown project {project_id!r}")
        return self.datasets[project_id]

    def index(self, project_id: str) -> VectorIndex:
        with self._lock:
            if project_id not in self._indexes:
                dataset = self.dataset(project_id)
                self._indexes[project_id] = build_index(
                    list(dataset.tasks), self.settings.embed_backend, self.settings.embedding_model, self.cache
                )
            return self._indexes[project_id]

    def default_cell(self, project_id: str) -> tuple[int, float]:
        dataset = self.dataset(project_id)
        group = assign_size_group(project_id, len(dataset.tasks), self.settings.size_groups)
        if self.best_config is None:
            return FALLBACK_CELL
        return self.best_config.cell_for(self.settings.embedding_model, group, default=FALLBACK_CELL)


def create_app(settings: ServiceSettings) -> FastAPI:
    app = FastAPI(title="sprag planning assistant", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    registry = ProjectRegistry(settings)
    store = DecisionStore(settings.decisions_dir)
    app.state.registry = registry
    app.state.store = store

    @app.get("/api/v1/projects")
    def list_projects() -> list[dict[str, Any]]:
        return [
            {
                "project_id": pid,
                "task_count": len(ds.tasks),
                "group": assign_size_group(pid, len(ds.tasks), settings.size_groups),
            }
            for pid, ds in sorted(registry.datasets.items())
        ]

    @app.post("/api/v1/projects/{project_id}/estimate")
    def estimate(project_id: str, request: EstimateRequest) -> dict[str, Any]:
        index = _load_index(registry, project_id)
        default_k, default_t = registry.default_cell(project_id)
        k = request.top_k if request.top_k is not None else default_k
        temperature = request.temperature if request.temperature is not None else default_t

        query_task = Task(
            project_id=project_id,
            issue_key="(new)",
            title=clean_text(request.title),
            description=clean_text(request.description),
            story_point=None,
            created=datetime.now(timezone.utc),
        )
        text = f"Title: {query_task.title}\nDescription: {query_task.description}"
        try:
            query = embed_text(settings.embed_backend, settings.embedding_model, text, registry.cache)
            results = retrieve_top_k(index, query, k)
            prompt = build_prompt(
                format_similar_tasks([(r.task, r.similarity) for r in results]), query_task, k=len(results)
            )
            gen_config = GenerationConfig(model_id=settings.generator_model, temperature=temperature)
            reply = generate(prompt, gen_config, settings.gen_backend)
        except (EmbeddingTransportError, ZeroVectorError, GenerationError) as exc:
            raise HTTPException(status_code=503, detail=str(exc), headers={"Retry-After": "1"}) from exc

        parsed = parse_story_point(reply.text)
        if parsed.parse_status == "failed":
            suggested = median_of_references(
                [r.task.story_point for r in results if r.task.story_point is not None]
            )
        else:
            suggested = parsed.snapped
        return {
            "suggested": suggested,
            "evidence": [
                {
                    "title": r.task.title,
                    "description": r.task.description,
                    "story_point": r.task.story_point,
                    "similarity": r.similarity,
                }
                for r in results
            ],
            "config": {
                "embedding_model": settings.embedding_model,
                "top_k": k,
                "temperature": temperature,
                "parse_status": parsed.parse_status,
            },
        }

    @app.post("/api/v1/projects/{project_id}/decisions", status_code=201)
    def record_decision(project_id: str, request: DecisionRequest) -> dict[str, Any]:
        registry.dataset(project_id)  # 404 for unknown projects
        stored = store.append(
            project_id,
            {
                "project_id": project_id,
                "title": request.title,
                "description": request.description,
                "suggested": request.suggested,
                "final": request.final,
                "accepted": request.final == request.suggested,
                "decided_at": datetime.now(timezone.utc).isoformat(),
            },
        )
        return stored

    @app.get("/api/v1/projects/{project_id}/history")
    def history(
        project_id: str,
        page: int = Query(default=1, ge=1),
        size: int = Query(default=20, ge=1, le=500),
    ) -> dict[str, Any]:
        registry.dataset(project_id)
        records = store.history(project_id)
        start = (page - 1) * size
        return {"items": records[start : start + size], "page": page, "size": size, "total": len(records)}

    return app


def _load_index(registry: ProjectRegistry, project_id: str) -> VectorIndex:
    try:
        return registry.index(project_id)
    except HTTPException:
        raise
    except (EmbeddingTransportError, ZeroVectorError) as exc:
        raise HTTPException(status_code=503, detail=str(exc), headers={"Retry-After": "1"}) from exc

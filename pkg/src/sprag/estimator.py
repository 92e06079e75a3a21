"""Per-task estimation, whole-project runs, parameter sweeps, config selection.

Runs persist one directory per (project, embedding, top_k, temperature)
cell: a manifest keyed by the dataset content hash, the full per-task
records, and the cell score. A sweep skips any cell whose persisted
manifest still matches, so interrupted grids resume where they stopped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import evaluation
from .corpus import DEFAULT_SCALE, ScaleDef, SplitDataset, Task, dataset_content_hash
from .generator import (
    GenerationConfig,
    GeneratorBackend,
    ParsedEstimate,
    PromptBundle,
    build_prompt,
    format_similar_tasks,
    generate,
    median_of_references,
    parse_story_point,
)
from .retriever import (
    BAAI_MODEL,
    SBERT_MODEL,
    EmbeddingBackend,
    EmbeddingCache,
    VectorIndex,
    build_index,
    compose_embed_text,
    embed_text,
    retrieve_top_k,
)

log = logging.getLogger(__name__)

EXPERIMENT_KS = (2, 3, 4)

Cell = tuple[int, float]

METHOD_LABELS = {BAAI_MODEL: "RAG-BAAI", SBERT_MODEL: "RAG-SBERT"}


class EstimationError(RuntimeError):
    """Retrieval or generation failed for a specific task."""

    def __init__(self, issue_key: str, cause: Exception):
        super().__init__(f"task {issue_key}: {cause}")
        self.issue_key = issue_key
        self.cause = cause


class RunInvalidError(RuntimeError):
    """More than 10% of the test tasks failed; the run result is not usable."""


class IncompleteGridError(ValueError):
    """Best-config selection requires every grid cell for every project."""


def default_grid(
    ks: Sequence[int] = EXPERIMENT_KS, temperatures: Sequence[float] = (0.0, 0.1, 0.2, 0.3)
) -> tuple[Cell, ...]:
    return tuple((k, t) for k in ks for t in temperatures)


def method_label(embedding_model: str) -> str:
    return METHOD_LABELS.get(embedding_model, f"RAG-{embedding_model}")


@dataclass(frozen=True)
class EstimationConfig:
    embedding_model: str
    top_k: int
    temperature: float
    generator: GenerationConfig

    @classmethod
    def for_cell(
        cls, embedding_model: str, cell: Cell, generator_model: str, seed: int | None = None
    ) -> "EstimationConfig":
        k, t = cell
        return cls(embedding_model, k, t, GenerationConfig(model_id=generator_model, temperature=t, seed=seed))


@dataclass(frozen=True)
class RetrievedRef:
    issue_key: str
    similarity: float
    rank: int
    story_point: float


@dataclass(frozen=True)
class EstimationRecord:
    issue_key: str
    truth: float
    retrieved: tuple[RetrievedRef, ...]
    prompt: PromptBundle
    raw_reply: str
    parsed: ParsedEstimate
    estimate: float
    abs_error: float
    attempts: int

    @property
    def used_median_fallback(self) -> bool:
        return self.parsed.parse_status == "failed"


@dataclass
class RunResult:
    records: list[EstimationRecord]
    failures: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class SweepResult:
    scores: dict[Cell, evaluation.ProjectScore]
    failed_cells: dict[Cell, str] = field(default_factory=dict)
    skipped_cells: list[Cell] = field(default_factory=list)


def estimate_task(
    task: Task,
    index: VectorIndex,
    config: EstimationConfig,
    embed_backend: EmbeddingBackend,
    gen_backend: GeneratorBackend,
    cache: EmbeddingCache | None = None,
    scale: ScaleDef = DEFAULT_SCALE,
) -> EstimationRecord:
    """Retrieve, prompt, generate, parse; the full trace goes into the record.

    A reply that fails to parse triggers one regeneration; if that also
    fails, the estimate falls back to the median of the retrieved story
    points, which keeps every test task scored and stays on-scale.
    """
    if task.story_point is None:
        raise ValueError(f"task {task.issue_key} has no ground-truth story point")
    try:
        query = embed_text(embed_backend, config.embedding_model, compose_embed_text(task), cache)
        results = retrieve_top_k(index, query, config.top_k)
        formatted = format_similar_tasks([(r.task, r.similarity) for r in results])
        prompt = build_prompt(formatted, task, k=len(results))

        outcome = generate(prompt, config.generator, gen_backend)
        parsed = parse_story_point(outcome.text, scale)
        attempts = outcome.attempts
        if parsed.parse_status == "failed":
            outcome = generate(prompt, config.generator, gen_backend)
            parsed = parse_story_point(outcome.text, scale)
            attempts += outcome.attempts
    except Exception as exc:
        raise EstimationError(task.issue_key, exc) from exc

    if parsed.parse_status == "failed":
        estimate = median_of_references([r.task.story_point for r in results if r.task.story_point is not None])
    else:
        estimate = parsed.snapped
    return EstimationRecord(
        issue_key=task.issue_key,
        truth=task.story_point,
        retrieved=tuple(
            RetrievedRef(r.task.issue_key, r.similarity, r.rank, r.task.story_point) for r in results
        ),
        prompt=prompt,
        raw_reply=outcome.text,
        parsed=parsed,
        estimate=estimate,
        abs_error=abs(estimate - task.story_point),
        attempts=attempts,
    )


def run_project(
    split: SplitDataset,
    config: EstimationConfig,
    embed_backend: EmbeddingBackend,
    gen_backend: GeneratorBackend,
    cache: EmbeddingCache | None = None,
    scale: ScaleDef = DEFAULT_SCALE,
    parallelism: int = 4,
) -> RunResult:
    """One record per test task, in test order; isolated failures are collected."""
    if not split.test:
        raise ValueError("test split is empty")
    index = build_index(split.train, embed_backend, config.embedding_model, cache, parallelism)
    result = RunResult(records=[])
    for task in split.test:
        try:
            result.records.append(
                estimate_task(task, index, config, embed_backend, gen_backend, cache, scale)
            )
        except EstimationError as exc:
            log.warning("estimation failed: %s", exc)
            result.failures.append((exc.issue_key, str(exc.cause)))
    if len(result.failures) > 0.1 * len(split.test):
        raise RunInvalidError(
            f"{len(result.failures)}/{len(split.test)} test tasks failed: "
            + ", ".join(k for k, _ in result.failures[:5])
        )
    return result


# --- persistence ---------------------------------------------------------------

def cell_dir(results_dir: Path | str, project_id: str, embedding_model: str, cell: Cell) -> Path:
    k, t = cell
    return Path(results_dir) / project_id / embedding_model.replace("/", "__") / f"{k}-{t:g}"


def record_to_dict(record: EstimationRecord) -> dict:
    return {
        "issue_key": record.issue_key,
        "truth": record.truth,
        "retrieved": [
            {"issue_key": r.issue_key, "similarity": r.similarity, "rank": r.rank, "story_point": r.story_point}
            for r in record.retrieved
        ],
        "prompt": {"system": record.prompt.system, "user": record.prompt.user},
        "raw_reply": record.raw_reply,
        "parsed": {
            "raw_value": record.parsed.raw_value,
            "snapped": record.parsed.snapped,
            "parse_status": record.parsed.parse_status,
        },
        "estimate": record.estimate,
        "abs_error": record.abs_error,
        "attempts": record.attempts,
    }


def record_from_dict(data: Mapping) -> EstimationRecord:
    return EstimationRecord(
        issue_key=data["issue_key"],
        truth=data["truth"],
        retrieved=tuple(
            RetrievedRef(r["issue_key"], r["similarity"], r["rank"], r["story_point"])
            for r in data["retrieved"]
        ),
        prompt=PromptBundle(system=data["prompt"]["system"], user=data["prompt"]["user"]),
        raw_reply=data["raw_reply"],
        parsed=ParsedEstimate(
            raw_value=data["parsed"]["raw_value"],
            snapped=data["parsed"]["snapped"],
            parse_status=data["parsed"]["parse_status"],
        ),
        estimate=data["estimate"],
        abs_error=data["abs_error"],
        attempts=data["attempts"],
    )


def save_records(records: Sequence[EstimationRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False, sort_keys=True) + "\n")


def load_records(path: Path) -> list[EstimationRecord]:
    with path.open("r", encoding="utf-8") as fh:
        return [record_from_dict(json.loads(line)) for line in fh if line.strip()]


def _cell_manifest(
    project_id: str, config: EstimationConfig, split: SplitDataset, started: str, finished: str
) -> dict:
    return {
        "project": project_id,
        "embedding_model": config.embedding_model,
        "top_k": config.top_k,
        "temperature": config.temperature,
        "generator_model": config.generator.model_id,
        "dataset_hash": dataset_content_hash(tuple(split.train) + tuple(split.test)),
        "n_train": len(split.train),
        "n_test": len(split.test),
        "started": started,
        "finished": finished,
    }


def _manifest_matches(existing: Mapping, fresh: Mapping) -> bool:
    keys = ("project", "embedding_model", "top_k", "temperature", "generator_model", "dataset_hash")
    return all(existing.get(k) == fresh[k] for k in keys)


def sweep(
    project_id: str,
    split: SplitDataset,
    grid: Sequence[Cell],
    embedding_model: str,
    generator_model: str,
    embed_backend: EmbeddingBackend,
    gen_backend: GeneratorBackend,
    results_dir: Path | str,
    cache: EmbeddingCache | None = None,
    scale: ScaleDef = DEFAULT_SCALE,
    parallelism: int = 4,
) -> SweepResult:
    """Score every grid cell, persisting per cell; persisted cells are skipped.

    Cells run sequentially and all result writes happen in this single
    caller, which keeps the results directory single-writer.
    """
    out = SweepResult(scores={})
    for cell in grid:
        config = EstimationConfig.for_cell(embedding_model, cell, generator_model)
        cdir = cell_dir(results_dir, project_id, embedding_model, cell)
        score_path, manifest_path = cdir / "score.json", cdir / "manifest.json"
        probe = _cell_manifest(project_id, config, split, "", "")
        if score_path.exists() and manifest_path.exists():
            existing = json.loads(manifest_path.read_text(encoding="utf-8"))
            if _manifest_matches(existing, probe):
                data = json.loads(score_path.read_text(encoding="utf-8"))
                out.scores[cell] = evaluation.ProjectScore(**data)
                out.skipped_cells.append(cell)
                continue
        started = datetime.now(timezone.utc).isoformat()
        try:
            run = run_project(split, config, embed_backend, gen_backend, cache, scale, parallelism)
        except Exception as exc:  # cell isolation: one bad cell must not kill the sweep
            log.error("cell %s failed for %s: %s", cell, project_id, exc)
            out.failed_cells[cell] = str(exc)
            continue
        finished = datetime.now(timezone.utc).isoformat()
        score = evaluation.score_project(
            project_id,
            method_label(embedding_model),
            [r.estimate for r in run.records],
            [r.truth for r in run.records],
        )
        cdir.mkdir(parents=True, exist_ok=True)
        save_records(run.records, cdir / "records.jsonl")
        score_path.write_text(
            json.dumps(
                {"project_id": score.project_id, "method": score.method, "mae": score.mae,
                 "mdae": score.mdae, "n": score.n},
                sort_keys=True,
            ),
            encoding="utf-8",
        )
        manifest_path.write_text(
            json.dumps(_cell_manifest(project_id, config, split, started, finished), sort_keys=True),
            encoding="utf-8",
        )
        out.scores[cell] = score
    return out


# --- best-config selection ------------------------------------------------------

@dataclass
class BestConfigTable:
    """Per embedding model: size group -> (top_k, temperature)."""

    per_model: dict[str, dict[str, Cell]]

    def cell_for(self, embedding_model: str, group: str, default: Cell = (3, 0.0)) -> Cell:
        return self.per_model.get(embedding_model, {}).get(group, default)

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            model: {group: list(cell) for group, cell in groups.items()}
            for model, groups in self.per_model.items()
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "BestConfigTable":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            per_model={
                model: {group: (int(cell[0]), float(cell[1])) for group, cell in groups.items()}
                for model, groups in payload.items()
            }
        )


def select_best_config(
    cell_maes: Mapping[str, Mapping[str, Mapping[Cell, float]]],
    grid: Sequence[Cell] | None = None,
) -> dict[str, Cell]:
    """Per size group, the cell with the lowest unweighted mean of project MAEs.

    `cell_maes` maps group -> project -> cell -> MAE. Ties prefer smaller
    top_k, then smaller temperature. Every project must cover the full grid.
    """
    grid = tuple(grid) if grid is not None else default_grid()
    missing = [
        (group, project, cell)
        for group, projects in cell_maes.items()
        for project, cells in projects.items()
        for cell in grid
        if cell not in cells
    ]
    if missing:
        named = ", ".join(f"{g}/{p}/k={c[0]},t={c[1]:g}" for g, p, c in missing[:8])
        raise IncompleteGridError(f"missing {len(missing)} grid cell(s): {named}")

    best: dict[str, Cell] = {}
    for group, projects in cell_maes.items():
        if not projects:
            raise IncompleteGridError(f"group {group!r} has no projects")
        means = {
            cell: sum(cells[cell] for cells in projects.values()) / len(projects)
            for cell in grid
        }
        best[group] = min(grid, key=lambda cell: (means[cell], cell[0], cell[1]))
    return best

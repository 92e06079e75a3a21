"""Command-line entry point for the whole pipeline.

Subcommands: ingest, split, index, estimate, sweep, evaluate, stats,
report, serve. Exit codes: 0 success, 2 input-schema error, 1 anything
else. Stub backends (--stub-embeddings / --stub-generator) keep every
command fully offline.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus, estimator, evaluation, report
from .config import ConfigError, RunConfig, load_config
from .corpus import SizeGroupConfig
from .generator import HttpGeneratorBackend, MedianStubGenerator
from .retriever import EmbeddingCache, HashEmbeddingBackend, HttpEmbeddingBackend

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 2


@contextlib.contextmanager
def results_lock(results_dir: Path):
    """One process owns the results directory at a time."""
    results_dir.mkdir(parents=True, exist_ok=True)
    lock_path = results_dir / ".sprag.lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"results dir {results_dir} is locked by another process (remove {lock_path} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def make_embed_backend(config: RunConfig):
    if config.embedding.stub:
        return HashEmbeddingBackend(dims=config.embedding.stub_dims)
    if not config.embedding.url:
        raise ConfigError("embedding backend URL is not configured (set SPRAG_EMBED_URL or use --stub-embeddings)")
    return HttpEmbeddingBackend(config.embedding.url, api_key=config.api_key or None)


def make_gen_backend(config: RunConfig):
    if config.generator.stub:
        return MedianStubGenerator()
    if not config.generator.url:
        raise ConfigError("generator URL is not configured (set SPRAG_GEN_URL or use --stub-generator)")
    return HttpGeneratorBackend(config.generator.url, api_key=config.api_key or None)


def _size_groups(config: RunConfig) -> SizeGroupConfig:
    return SizeGroupConfig(overrides=config.size_overrides)


def _corpus_path(config: RunConfig, project: str) -> Path:
    return config.dataset_dir / f"{project}.jsonl"


def _load_split(config: RunConfig, project: str) -> corpus.SplitDataset:
    dataset = corpus.load_corpus(_corpus_path(config, project), project)
    return corpus.chronological_split(dataset, config.split_ratio)


def cmd_ingest(args, config: RunConfig) -> int:
    config.dataset_dir.mkdir(parents=True, exist_ok=True)
    for path in args.files:
        path = Path(path)
        project = args.project or path.stem
        raw = path.read_bytes()
        result = corpus.parse_dataset(raw, project)
        cleaned = [corpus.clean_task(t) for t in result.dataset.tasks]

        rejects = list(result.rejects)
        staying = []
        for task in cleaned:
            if task.changed_after_sp:
                rejects.append(corpus.RejectedRow(-1, "story point changed after assignment", task.issue_key))
            elif not task.title:
                rejects.append(corpus.RejectedRow(-1, "empty title after cleaning", task.issue_key))
            else:
                staying.append(task)
        kept, dropped = corpus.filter_with_reasons(staying)
        rejects += [corpus.RejectedRow(-1, reason, t.issue_key) for t, reason in dropped]

        out = _corpus_path(config, project)
        corpus.save_corpus(corpus.ProjectDataset(project, tuple(kept)), out)
        corpus.write_rejects(rejects, config.dataset_dir / f"{project}.rejects.jsonl")
        print(f"{project}: kept {len(kept)} tasks, rejected {len(rejects)} rows -> {out}")
    return EXIT_OK


def cmd_split(args, config: RunConfig) -> int:
    split = _load_split(config, args.project)
    base = config.dataset_dir / args.project
    corpus.save_corpus(corpus.ProjectDataset(args.project, split.train), Path(f"{base}.train.jsonl"))
    corpus.save_corpus(corpus.ProjectDataset(args.project, split.test), Path(f"{base}.test.jsonl"))
    print(f"{args.project}: {len(split.train)} train / {len(split.test)} test (ratio {split.ratio})")
    return EXIT_OK


def cmd_index(args, config: RunConfig) -> int:
    from .retriever import build_index

    split = _load_split(config, args.project)
    backend = make_embed_backend(config)
    cache = EmbeddingCache(config.cache_dir)
    index = build_index(split.train, backend, config.embedding.model_id, cache, config.parallelism)
    print(f"{args.project}: indexed {len(index)} tasks, dims={index.dims}, model={index.model_id}")
    return EXIT_OK


def _run_sweep(config: RunConfig, project: str, grid) -> estimator.SweepResult:
    split = _load_split(config, project)
    with results_lock(config.results_dir):
        result = estimator.sweep(
            project_id=project,
            split=split,
            grid=grid,
            embedding_model=config.embedding.model_id,
            generator_model=config.generator.model_id,
            embed_backend=make_embed_backend(config),
            gen_backend=make_gen_backend(config),
            results_dir=config.results_dir,
            cache=EmbeddingCache(config.cache_dir),
            parallelism=config.parallelism,
        )
    for cell, score in sorted(result.scores.items()):
        flag = " (cached)" if cell in result.skipped_cells else ""
        print(f"{project} k={cell[0]} t={cell[1]:g}: MAE={score.mae:.4f} MdAE={score.mdae:.4f}{flag}")
    for cell, error in sorted(result.failed_cells.items()):
        print(f"{project} k={cell[0]} t={cell[1]:g}: FAILED ({error})", file=sys.stderr)
    return result


def cmd_estimate(args, config: RunConfig) -> int:
    result = _run_sweep(config, args.project, [(args.k, args.temperature)])
    return EXIT_OK if not result.failed_cells else EXIT_ERROR


def _parse_grid_tokens(tokens: list[str] | None, config: RunConfig):
    ks, temps = config.grid.ks, config.grid.temperatures
    for token in tokens or []:
        key, _, value = token.partition("=")
        if key in ("k", "ks"):
            ks = [int(v) for v in value.split(",")]
        elif key in ("t", "temp", "temperature", "temperatures"):
            temps = [float(v) for v in value.split(",")]
        else:
            raise ConfigError(f"unknown grid token {token!r} (expected k=... or temp=...)")
    return estimator.default_grid(ks, temps)


def cmd_sweep(args, config: RunConfig) -> int:
    grid = _parse_grid_tokens(args.grid, config)
    result = _run_sweep(config, args.project, grid)
    return EXIT_OK if not result.failed_cells else EXIT_ERROR


def cmd_evaluate(args, config: RunConfig) -> int:
    rows = []
    for score_path in sorted(config.results_dir.glob("*/*/*/score.json")):
        data = json.loads(score_path.read_text(encoding="utf-8"))
        cell = score_path.parent.name
        rows.append((data["project_id"], data["method"], cell, data["mae"], data["mdae"], data["n"]))
    if not rows:
        print(f"no persisted scores under {config.results_dir}", file=sys.stderr)
        return EXIT_ERROR
    out = config.results_dir / "scores.csv"
    with out.open("w", encoding="utf-8") as fh:
        fh.write("project,method,cell,mae,mdae,n\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    print(f"wrote {len(rows)} cell scores -> {out}")
    return EXIT_OK


def _reference_inputs(config: RunConfig):
    table = evaluation.load_reference_table(config.fixture_path)
    sizes = evaluation.load_reference_sizes()
    groups = _size_groups(config)
    grouping = {p: corpus.assign_size_group(p, n, groups) for p, n in sizes.items()}
    return table, grouping


def cmd_stats(args, config: RunConfig) -> int:
    table, grouping = _reference_inputs(config)
    out = Path(args.out) if args.out else config.results_dir / "stats.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.stats_csv(table, grouping, alternative=args.alternative), encoding="utf-8")
    print(f"wrote test results -> {out}")
    return EXIT_OK


def cmd_report(args, config: RunConfig) -> int:
    table, grouping = _reference_inputs(config)
    if not args.fixture_only:
        merged = dict(table.entries)
        found = False
        for score_path in sorted(config.results_dir.glob("*/*/*/score.json")):
            data = json.loads(score_path.read_text(encoding="utf-8"))
            merged[(data["project_id"], data["method"])] = (data["mae"], data["mdae"])
            found = True
        if not found and args.require_runs:
            print(f"no run results under {config.results_dir}", file=sys.stderr)
            return EXIT_ERROR
        table = evaluation.BaselineTable(entries=merged)
        groups = _size_groups(config)
        for project in table.projects():
            if project not in grouping:
                corpus_path = _corpus_path(config, project)
                if not corpus_path.exists():
                    print(f"error: no corpus for run project {project!r}; cannot size-group it", file=sys.stderr)
                    return EXIT_ERROR
                count = len(corpus.load_corpus(corpus_path, project))
                grouping[project] = corpus.assign_size_group(project, count, groups)
    paths = report.write_report(args.out or config.results_dir / "report", table, grouping)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_serve(args, config: RunConfig) -> int:
    import uvicorn

    from .service import ServiceSettings, create_app

    app = create_app(
        ServiceSettings(
            dataset_dir=config.dataset_dir,
            decisions_dir=config.results_dir / "decisions",
            best_config_path=config.results_dir / "best_config.json",
            embedding_model=config.embedding.model_id,
            embed_backend=make_embed_backend(config),
            gen_backend=make_gen_backend(config),
            cache_dir=config.cache_dir,
            generator_model=config.generator.model_id,
            size_groups=_size_groups(config),
        )
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sprag", description=__doc__)
    parser.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    parser.add_argument("--stub-embeddings", action="store_true", help="use the deterministic hash embedder")
    parser.add_argument("--stub-generator", action="store_true", help="use the median-of-references generator")
    parser.add_argument("--stub", action="store_true", help="shorthand for both stub flags")
    parser.add_argument("--parallelism", type=int, default=None)
    parser.add_argument("--results", type=Path, default=None, help="results directory override")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw CSV exports into canonical corpora")
    p.add_argument("files", nargs="+")
    p.add_argument("--project", default=None, help="project id (default: file stem)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write chronological train/test splits")
    p.add_argument("--project", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("index", help="embed the training split (warms the cache)")
    p.add_argument("--project", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("estimate", help="run one (k, temperature) cell for a project")
    p.add_argument("--project", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--temperature", type=float, default=0.0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="run the parameter grid for a project (resumable)")
    p.add_argument("--project", required=True)
    p.add_argument("--grid", nargs="*", default=None, metavar="k=2,3|temp=0,0.1")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="collect persisted cell scores into scores.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="emit the hypothesis-test table")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--alternative", choices=("less", "greater", "two-sided"), default="less")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="emit the full report bundle")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--fixture-only", action="store_true", help="reference table only, ignore run results")
    p.add_argument("--require-runs", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the planning-assistant service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        config = load_config(args.config)
        if args.stub or args.stub_embeddings:
            config.embedding.stub = True
        if args.stub or args.stub_generator:
            config.generator.stub = True
        if args.parallelism is not None:
            config.parallelism = args.parallelism
        if args.results is not None:
            config.results_dir = args.results
        return args.func(args, config)
    except corpus.SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

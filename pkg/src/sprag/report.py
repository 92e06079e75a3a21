"""Report bundle: delimited tables plus a readable summary document.

Everything is derived from a per-project MAE/MdAE table (persisted run
scores, the bundled reference table, or a mix) and a size grouping. Output
is deterministic: fixed orderings, fixed float formats, no timestamps, so
reruns over the same inputs are byte-identical.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

from . import stats
from .evaluation import (
    BASELINE_METHODS,
    GROUP_ORDER,
    RAG_METHODS,
    BaselineTable,
    GroupSummary,
    group_summary,
    win_counts,
)

ALL_METHODS = BASELINE_METHODS + RAG_METHODS


def _ordered_projects(table: BaselineTable, grouping: Mapping[str, str]) -> list[str]:
    projects = table.projects()
    order = {g: i for i, g in enumerate(GROUP_ORDER)}
    return sorted(projects, key=lambda p: (order.get(grouping.get(p, ""), 99), p))


def _comparison_projects(table: BaselineTable, grouping: Mapping[str, str]) -> list[str]:
    """Projects with a complete method row set; only these enter the
    cross-method tables (a fresh run project has no baseline entries)."""
    return [
        p
        for p in _ordered_projects(table, grouping)
        if all((p, m) in table.entries for m in ALL_METHODS)
    ]


def scores_csv(table: BaselineTable, grouping: Mapping[str, str]) -> str:
    extra = sorted({m for _, m in table.entries} - set(ALL_METHODS))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["project", "group", "method", "mae", "mdae"])
    for project in _ordered_projects(table, grouping):
        for method in ALL_METHODS + tuple(extra):
            if (project, method) in table.entries:
                m, md = table.entries[(project, method)]
                writer.writerow([project, grouping.get(project, ""), method, f"{m:.2f}", f"{md:.2f}"])
    return buf.getvalue()


def group_summaries(table: BaselineTable, grouping: Mapping[str, str]) -> dict[str, list[GroupSummary]]:
    complete = set(_comparison_projects(table, grouping))
    return {
        method: group_summary(
            [s for s in table.method_scores(method) if s.project_id in complete], grouping
        )
        for method in RAG_METHODS
    }


def group_summary_csv(summaries: Mapping[str, Sequence[GroupSummary]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "group", "mean_mae", "sd_mae", "projects"])
    for method in RAG_METHODS:
        for s in summaries[method]:
            writer.writerow([method, s.label, f"{s.mean_mae:.2f}", f"{s.sd_mae:.2f}", s.project_count])
    return buf.getvalue()


def win_count_csv(table: BaselineTable, grouping: Mapping[str, str]) -> str:
    complete = set(_comparison_projects(table, grouping))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rag_method", "baseline", "group", "wins"])
    for method in RAG_METHODS:
        scores = [s for s in table.method_scores(method) if s.project_id in complete]
        counts = win_counts(scores, table, grouping)
        for baseline in BASELINE_METHODS:
            for group in GROUP_ORDER:
                writer.writerow([method, baseline, group, counts[(method, baseline, group)]])
    return buf.getvalue()


def stats_csv(table: BaselineTable, grouping: Mapping[str, str], alternative: str = "less") -> str:
    """Delimited test report: Wilcoxon per (rag, baseline, group) plus both
    Kruskal-Wallis rows; columns method/comparison/statistic/p/alternative/exact."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "comparison", "statistic", "p_value", "alternative", "exact"])
    projects = _comparison_projects(table, grouping)
    by_group: dict[str, list[str]] = {g: [p for p in projects if grouping[p] == g] for g in GROUP_ORDER}

    for method in RAG_METHODS:
        for baseline in BASELINE_METHODS:
            for group in GROUP_ORDER:
                labels = by_group[group]
                samples = stats.PairedSamples(
                    labels=tuple(labels),
                    x=tuple(table.mae(p, method) for p in labels),
                    y=tuple(table.mae(p, baseline) for p in labels),
                )
                res = stats.wilcoxon_signed_rank(samples, alternative=alternative)
                writer.writerow(
                    [res.method, f"{method} vs {baseline} [{group}]",
                     f"{res.statistic:.1f}", f"{res.p_value:.4f}", res.alternative, res.exact]
                )
    for method in RAG_METHODS:
        groups = [[table.mae(p, method) for p in by_group[g]] for g in GROUP_ORDER]
        res = stats.kruskal_wallis(groups)
        writer.writerow(
            [res.method, f"{method} across {'/'.join(GROUP_ORDER)}",
             f"{res.statistic:.2f}", f"{res.p_value:.4f}", res.alternative, res.exact]
        )
    return buf.getvalue()


def summary_markdown(table: BaselineTable, grouping: Mapping[str, str], alternative: str = "less") -> str:
    """Human-readable digest mirroring the delimited tables."""
    lines = ["# Story-point estimation report", ""]

    lines += ["## Group summaries (mean MAE over projects)", ""]
    lines += ["| Method | Group | Mean MAE | SD | Projects |", "|---|---|---|---|---|"]
    summaries = group_summaries(table, grouping)
    for method in RAG_METHODS:
        for s in summaries[method]:
            lines.append(f"| {method} | {s.label} | {s.mean_mae:.2f} | {s.sd_mae:.2f} | {s.project_count} |")

    lines += ["", "## Wins against baselines (strict MAE comparison)", ""]
    lines += ["| RAG method | Baseline | " + " | ".join(GROUP_ORDER) + " |",
              "|---|---|" + "---|" * len(GROUP_ORDER)]
    complete = set(_comparison_projects(table, grouping))
    for method in RAG_METHODS:
        scores = [s for s in table.method_scores(method) if s.project_id in complete]
        counts = win_counts(scores, table, grouping)
        for baseline in BASELINE_METHODS:
            row = " | ".join(str(counts[(method, baseline, g)]) for g in GROUP_ORDER)
            lines.append(f"| {method} | {baseline} | {row} |")

    lines += ["", f"## Wilcoxon signed-rank p-values (alternative: {alternative})", ""]
    projects = _comparison_projects(table, grouping)
    by_group = {g: [p for p in projects if grouping[p] == g] for g in GROUP_ORDER}
    lines += ["| RAG method | Baseline | " + " | ".join(GROUP_ORDER) + " |",
              "|---|---|" + "---|" * len(GROUP_ORDER)]
    for method in RAG_METHODS:
        for baseline in BASELINE_METHODS:
            cells = []
            for group in GROUP_ORDER:
                labels = by_group[group]
                samples = stats.PairedSamples(
                    labels=tuple(labels),
                    x=tuple(table.mae(p, method) for p in labels),
                    y=tuple(table.mae(p, baseline) for p in labels),
                )
                cells.append(f"{stats.wilcoxon_signed_rank(samples, alternative=alternative).p_value:.4f}")
            lines.append(f"| {method} | {baseline} | " + " | ".join(cells) + " |")

    lines += ["", "## Kruskal-Wallis across size groups", ""]
    for method in RAG_METHODS:
        groups = [[table.mae(p, method) for p in by_group[g]] for g in GROUP_ORDER]
        res = stats.kruskal_wallis(groups)
        lines.append(f"- {method}: H = {res.statistic:.2f}, p = {res.p_value:.2f}")
    lines.append("")
    return "\n".join(lines)


def write_report(
    out_dir: Path | str,
    table: BaselineTable,
    grouping: Mapping[str, str],
    alternative: str = "less",
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "scores": (out / "scores.csv", scores_csv(table, grouping)),
        "group_summary": (out / "group_summary.csv", group_summary_csv(group_summaries(table, grouping))),
        "win_counts": (out / "win_counts.csv", win_count_csv(table, grouping)),
        "stats": (out / "stats.csv", stats_csv(table, grouping, alternative)),
        "summary": (out / "summary.md", summary_markdown(table, grouping, alternative)),
    }
    for path, content in files.values():
        path.write_text(content, encoding="utf-8")
    return {name: path for name, (path, _) in files.items()}

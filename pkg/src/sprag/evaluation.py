"""Error metrics and cross-method comparison over per-project scores.

MAE/MdAE are computed from paired prediction/truth lists; group summaries
aggregate per-project MAEs with an unweighted mean and sample standard
deviation (n-1); win counts use strict inequality, so ties are "not better".
A reference table of published per-project MAE/MdAE values for the four
baseline methods and the two retrieval-augmented variants ships as a
versioned fixture (data/reference_results.csv, v1).
"""

from __future__ import annotations

import csv
import statistics
from fractions import Fraction
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import DEFAULT_SIZE_GROUPS, SizeGroupConfig, assign_size_group

BASELINE_METHODS = ("LHC-SE", "LHCtc-SE", "Deep-SE", "TF-IDF")
RAG_METHODS = ("RAG-SBERT", "RAG-BAAI")
GROUP_ORDER = ("Small", "Mid", "Large")


class MissingCellError(KeyError):
    """A (project, method) cell required for a comparison is absent."""


@dataclass(frozen=True)
class ProjectScore:
    project_id: str
    method: str
    mae: float
    mdae: float
    n: int


@dataclass(frozen=True)
class GroupSummary:
    label: str
    mean_mae: float
    sd_mae: float
    project_count: int
    #: False when the group has a single project and the sample SD is undefined.
    sd_defined: bool = True


@dataclass(frozen=True)
class BaselineTable:
    """(project, method) -> (MAE, MdAE) for every method in the reference table."""

    entries: Mapping[tuple[str, str], tuple[float, float]]

    def mae(self, project: str, method: str) -> float:
        try:
            return self.entries[(project, method)][0]
        except KeyError:
            raise MissingCellError(f"no entry for project {project!r}, method {method!r}") from None

    def projects(self) -> list[str]:
        seen: dict[str, None] = {}
        for project, _ in self.entries:
            seen.setdefault(project)
        return list(seen)

    def method_scores(self, method: str) -> list[ProjectScore]:
        return [
            ProjectScore(project_id=p, method=m, mae=v[0], mdae=v[1], n=0)
            for (p, m), v in self.entries.items()
            if m == method
        ]


def mae(preds: Sequence[float], truths: Sequence[float]) -> float:
    """Mean absolute error, (1/n) * sum |pred - truth|.

    Accumulated in exact rational arithmetic and rounded once, so the result
    is the correctly rounded true mean and re-summation oracles agree bitwise.
    """
    _check_paired(preds, truths)
    total = sum(abs(Fraction(p) - Fraction(t)) for p, t in zip(preds, truths))
    return float(total / len(preds))


def mdae(preds: Sequence[float], truths: Sequence[float]) -> float:
    """Median absolute error; even n takes the mean of the two middle values."""
    _check_paired(preds, truths)
    return float(statistics.median(abs(p - t) for p, t in zip(preds, truths)))


def _check_paired(preds: Sequence[float], truths: Sequence[float]) -> None:
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise ValueError("empty prediction list")


def score_project(project_id: str, method: str, preds: Sequence[float], truths: Sequence[float]) -> ProjectScore:
    return ProjectScore(project_id, method, mae(preds, truths), mdae(preds, truths), len(preds))


def group_summary(
    scores: Iterable[ProjectScore],
    grouping: Mapping[str, str],
    group_order: Sequence[str] = GROUP_ORDER,
) -> list[GroupSummary]:
    """Unweighted mean and sample SD of per-project MAEs within each group."""
    by_group: dict[str, list[float]] = {g: [] for g in group_order}
    for score in scores:
        try:
            label = grouping[score.project_id]
        except KeyError:
            raise ValueError(f"project {score.project_id!r} has no size group") from None
        if label not in by_group:
            raise ValueError(f"unknown group label {label!r}")
        by_group[label].append(score.mae)

    summaries = []
    for label in group_order:
        maes = by_group[label]
        if not maes:
            raise ValueError(f"group {label!r} is empty")
        if len(maes) == 1:
            summaries.append(GroupSummary(label, maes[0], 0.0, 1, sd_defined=False))
        else:
            summaries.append(GroupSummary(label, statistics.fmean(maes), statistics.stdev(maes), len(maes)))
    return summaries


def win_counts(
    rag_scores: Iterable[ProjectScore],
    baselines: BaselineTable,
    grouping: Mapping[str, str],
    baseline_methods: Sequence[str] = BASELINE_METHODS,
) -> dict[tuple[str, str, str], int]:
    """Per (rag method, baseline, group): projects where rag MAE < baseline MAE.

    Strict inequality, so ties and losses are excluded.
    """
    counts: dict[tuple[str, str, str], int] = {}
    for score in rag_scores:
        group = grouping.get(score.project_id)
        if group is None:
            raise ValueError(f"project {score.project_id!r} has no size group")
        for baseline in baseline_methods:
            key = (score.method, baseline, group)
            counts.setdefault(key, 0)
            if score.mae < baselines.mae(score.project_id, baseline):
                counts[key] += 1
    return counts


# --- bundled reference fixture ------------------------------------------------

def _data_path(name: str):
    return resources.files("sprag.data").joinpath(name)


def load_reference_table(path: Path | str | None = None) -> BaselineTable:
    """Load the bundled (or an external) per-project MAE/MdAE reference table."""
    source = Path(path).open("r", encoding="utf-8") if path else _data_path("reference_results.csv").open("r")
    entries: dict[tuple[str, str], tuple[float, float]] = {}
    with source as fh:
        for row in csv.DictReader(fh):
            entries[(row["project"], row["method"])] = (float(row["mae"]), float(row["mdae"]))
    return BaselineTable(entries=entries)


def load_reference_sizes(path: Path | str | None = None) -> dict[str, int]:
    source = Path(path).open("r", encoding="utf-8") if path else _data_path("reference_sizes.csv").open("r")
    with source as fh:
        return {row["project"]: int(row["task_count"]) for row in csv.DictReader(fh)}


def reference_grouping(groups: SizeGroupConfig = DEFAULT_SIZE_GROUPS) -> dict[str, str]:
    """Size-group label per reference project, thresholds plus overrides."""
    sizes = load_reference_sizes()
    return {p: assign_size_group(p, n, groups) for p, n in sizes.items()}

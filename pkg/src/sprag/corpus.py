"""Issue-corpus ingestion: parsing, cleaning, filtering, chronological splitting.

Input is a comma-separated export (RFC-4180 quoting) with columns
``issuekey, created, title, description, storypoint``; the canonical on-disk
form is one JSON object per line. Rows that cannot be parsed are reported,
never silently dropped.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

#: Story-point card deck: 0, 0.5, then the Fibonacci numbers.
ALLOWED_SCALE: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 34.0, 55.0, 89.0)

REQUIRED_COLUMNS = ("issuekey", "created", "title", "description", "storypoint")

SMALL_LABEL, MID_LABEL, LARGE_LABEL = "Small", "Mid", "Large"

#: Projects whose size sits near a threshold are kept with the group they
#: resemble: Core Server (519 tasks) with the small projects, DotNetNuke
#: Platform (2,064 tasks) with the mid-sized ones.
DEFAULT_SIZE_OVERRIDES: Mapping[str, str] = {
    "Core Server": SMALL_LABEL,
    "DotNetNuke Platform": MID_LABEL,
}


class SchemaError(ValueError):
    """The input is missing a required column (or has no header at all)."""


class InsufficientDataError(ValueError):
    """Too few tasks to produce a meaningful train/test split."""


@dataclass(frozen=True)
class ScaleDef:
    """The set of story-point values a task may carry after filtering."""

    allowed_values: tuple[float, ...] = ALLOWED_SCALE

    def __post_init__(self) -> None:
        vals = self.allowed_values
        if list(vals) != sorted(set(vals)):
            raise ValueError("scale values must be strictly increasing")
        if 0.0 not in vals or 0.5 not in vals:
            raise ValueError("scale must contain 0 and 0.5")

    def __contains__(self, value: object) -> bool:
        return isinstance(value, (int, float)) and float(value) in self.allowed_values


DEFAULT_SCALE = ScaleDef()


@dataclass(frozen=True)
class Task:
    """One issue: the atom of retrieval and estimation."""

    project_id: str
    issue_key: str
    title: str
    description: str
    story_point: float | None
    created: datetime
    changed_after_sp: bool | None = None

    def sort_key(self) -> tuple[datetime, str]:
        return (self.created, self.issue_key)


@dataclass(frozen=True)
class ProjectDataset:
    """All tasks of one project, sorted by (created, issue_key)."""

    project_id: str
    tasks: tuple[Task, ...]

    def __post_init__(self) -> None:
        for t in self.tasks:
            if t.project_id != self.project_id:
                raise ValueError(f"task {t.issue_key} belongs to {t.project_id!r}, not {self.project_id!r}")
        keys = [t.sort_key() for t in self.tasks]
        if keys != sorted(keys):
            raise ValueError("tasks must be sorted by (created, issue_key)")

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class SplitDataset:
    """Chronological train/test partition: all of train precedes all of test."""

    train: tuple[Task, ...]
    test: tuple[Task, ...]
    ratio: float

    def __post_init__(self) -> None:
        if self.train and self.test:
            if max(t.created for t in self.train) > min(t.created for t in self.test):
                raise ValueError("train tasks must not postdate test tasks")


@dataclass(frozen=True)
class SizeGroupConfig:
    """Thresholded size grouping with per-project overrides."""

    small_max: int = 500
    mid_max: int = 2000
    overrides: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_SIZE_OVERRIDES))


DEFAULT_SIZE_GROUPS = SizeGroupConfig()


@dataclass(frozen=True)
class RejectedRow:
    """A dropped input row together with the reason it was dropped."""

    row_index: int
    reason: str
    raw: str


@dataclass
class ParseResult:
    dataset: ProjectDataset
    rejects: list[RejectedRow]


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    s = text.strip()
    if not s:
        raise ValueError("empty timestamp")
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _parse_story_point_cell(cell: str) -> float | None:
    s = cell.strip()
    if not s:
        return None
    return float(s)


def parse_dataset(raw: bytes | str, project_id: str) -> ParseResult:
    """Parse a delimited export into a sorted dataset plus a reject report.

    Rows with an empty story-point cell are retained (story_point None) so
    the filtering stage can count them; rows with malformed timestamps or
    story points are rejected with their row index.
    """
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("input has no header row") from None

    col = {name.strip().lower(): i for i, name in enumerate(header)}
    missing = [c for c in REQUIRED_COLUMNS if c not in col]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    changed_col = col.get("changed_after_sp")

    tasks: list[Task] = []
    rejects: list[RejectedRow] = []
    for row_index, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            created = parse_timestamp(row[col["created"]])
            sp = _parse_story_point_cell(row[col["storypoint"]])
            changed = None
            if changed_col is not None:
                cell = row[changed_col].strip().lower()
                changed = cell in ("1", "true", "yes") if cell else None
            tasks.append(
                Task(
                    project_id=project_id,
                    issue_key=row[col["issuekey"]].strip(),
                    title=row[col["title"]],
                    description=row[col["description"]],
                    story_point=sp,
                    created=created,
                    changed_after_sp=changed,
                )
            )
        except (ValueError, IndexError) as exc:
            rejects.append(RejectedRow(row_index=row_index, reason=str(exc), raw=",".join(row)))

    tasks.sort(key=Task.sort_key)
    return ParseResult(dataset=ProjectDataset(project_id=project_id, tasks=tuple(tasks)), rejects=rejects)


_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_CODE_BLOCK_RES = (
    re.compile(r"\{code(?::[^{}]*)?\}.*?\{code\}", re.DOTALL | re.IGNORECASE),
    re.compile(r"\{noformat\}.*?\{noformat\}", re.DOTALL | re.IGNORECASE),
    re.compile(r"```.*?```", re.DOTALL),
)
#: Log-like lines: a leading ISO or syslog timestamp, or a stack frame
#: "at pkg.Cls.method(File.java:123)". Extend via clean_text(extra_line_patterns=...).
_LOG_LINE_RES = (
    re.compile(r"^\s*\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}"),
    re.compile(r"^\s*(?:Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) +\d{1,2} \d{2}:\d{2}:\d{2}"),
    re.compile(r"^\s*at .+\(.*:\d+\)"),
)
_WS_RE = re.compile(r"\s+")


def _clean_once(text: str, line_patterns: Sequence[re.Pattern[str]]) -> str:
    out = _URL_RE.sub(" ", text)
    for pat in _CODE_BLOCK_RES:
        out = pat.sub(" ", out)
    kept = [line for line in out.splitlines() or [out] if not any(p.match(line) for p in line_patterns)]
    out = " ".join(kept)
    return _WS_RE.sub(" ", out).strip()


def clean_text(text: str, extra_line_patterns: Sequence[str] = ()) -> str:
    """Strip URLs, code/noformat blocks and log-like lines; collapse whitespace.

    Applied until it reaches a fixed point, so cleaning is idempotent even
    when removing a block joins fragments into something a rule matches.
    """
    patterns = list(_LOG_LINE_RES) + [re.compile(p) for p in extra_line_patterns]
    current = text
    for _ in range(10):
        cleaned = _clean_once(current, patterns)
        if cleaned == current:
            return cleaned
        current = cleaned
    return current


def clean_task(task: Task) -> Task:
    return replace(task, title=clean_text(task.title), description=clean_text(task.description))


def filter_valid(tasks: Iterable[Task], scale: ScaleDef = DEFAULT_SCALE) -> list[Task]:
    """Keep tasks with a non-empty cleaned description and an on-scale SP."""
    kept, _ = filter_with_reasons(tasks, scale)
    return kept


def filter_with_reasons(
    tasks: Iterable[Task], scale: ScaleDef = DEFAULT_SCALE
) -> tuple[list[Task], list[tuple[Task, str]]]:
    """Like filter_valid, but also reports why each dropped task was dropped."""
    kept: list[Task] = []
    dropped: list[tuple[Task, str]] = []
    for task in tasks:
        if task.story_point is None:
            dropped.append((task, "no story point assigned"))
        elif task.story_point not in scale:
            dropped.append((task, f"story point {task.story_point:g} outside the allowed scale"))
        elif not clean_text(task.description):
            dropped.append((task, "empty description after cleaning"))
        else:
            kept.append(task)
    return kept, dropped


def chronological_split(dataset: ProjectDataset, ratio: float = 0.8) -> SplitDataset:
    """First floor(ratio * n) tasks become train, the remainder test."""
    n = len(dataset)
    if n < 5:
        raise InsufficientDataError(f"{dataset.project_id}: need at least 5 tasks, have {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    cut = math.floor(n * ratio)
    return SplitDataset(train=dataset.tasks[:cut], test=dataset.tasks[cut:], ratio=ratio)


def assign_size_group(project_id: str, task_count: int, groups: SizeGroupConfig = DEFAULT_SIZE_GROUPS) -> str:
    """Threshold rule (Small <= small_max < Mid <= mid_max < Large) with overrides."""
    if task_count <= 0:
        raise ValueError("task_count must be positive")
    override = groups.overrides.get(project_id)
    if override is not None:
        return override
    if task_count <= groups.small_max:
        return SMALL_LABEL
    if task_count <= groups.mid_max:
        return MID_LABEL
    return LARGE_LABEL


# --- canonical serialization -------------------------------------------------

def task_to_record(task: Task) -> dict:
    rec = {
        "project_id": task.project_id,
        "issue_key": task.issue_key,
        "title": task.title,
        "description": task.description,
        "story_point": task.story_point,
        "created": task.created.isoformat(),
    }
    if task.changed_after_sp is not None:
        rec["changed_after_sp"] = task.changed_after_sp
    return rec


def task_from_record(rec: Mapping) -> Task:
    return Task(
        project_id=rec["project_id"],
        issue_key=rec["issue_key"],
        title=rec["title"],
        description=rec["description"],
        story_point=None if rec.get("story_point") is None else float(rec["story_point"]),
        created=parse_timestamp(rec["created"]),
        changed_after_sp=rec.get("changed_after_sp"),
    )


def save_corpus(dataset: ProjectDataset, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for task in dataset.tasks:
            fh.write(json.dumps(task_to_record(task), ensure_ascii=False) + "\n")


def load_corpus(path: Path | str, project_id: str | None = None) -> ProjectDataset:
    tasks = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                tasks.append(task_from_record(json.loads(line)))
    if project_id is None:
        if not tasks:
            raise ValueError(f"{path}: empty corpus and no project_id given")
        project_id = tasks[0].project_id
    tasks.sort(key=Task.sort_key)
    return ProjectDataset(project_id=project_id, tasks=tuple(tasks))


def write_rejects(rejects: Iterable[RejectedRow], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in rejects:
            fh.write(json.dumps({"row_index": r.row_index, "reason": r.reason, "raw": r.raw}, ensure_ascii=False) + "\n")


def serialize_csv(dataset: ProjectDataset) -> str:
    """Inverse of parse_dataset for the required columns (RFC-4180 quoting)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["issuekey", "created", "title", "description", "storypoint"])
    for t in dataset.tasks:
        sp = "" if t.story_point is None else f"{t.story_point:g}"
        writer.writerow([t.issue_key, t.created.isoformat(), t.title, t.description, sp])
    return buf.getvalue()


def dataset_content_hash(tasks: Sequence[Task]) -> str:
    """Stable hash of task content, used to key run manifests."""
    h = hashlib.sha256()
    for task in tasks:
        h.update(json.dumps(task_to_record(task), ensure_ascii=False, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()

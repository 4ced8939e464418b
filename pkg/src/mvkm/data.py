"""Multi-view interaction data model, file ingestion, and split helpers.

A dataset holds one interaction timeline per student, shared across all
material types (views): each attempt index on a student's timeline is
occupied by exactly one interaction, in exactly one view.  Graded views
carry scores in [0, 1]; non-graded views carry the presence indicator 1.0.

Canonical interchange format is CSV with columns
``student_id,attempt,view,material_id,value``; JSON mirrors the same
fields plus explicit view metadata.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError, RangeError

CSV_COLUMNS = ["student_id", "attempt", "view", "material_id", "value"]


@dataclass(frozen=True)
class ViewSpec:
    """One learning-material type (quiz, discussion, lecture, ...)."""

    view_id: int
    name: str
    graded: bool
    num_materials: int


@dataclass(frozen=True)
class InteractionRecord:
    """One observed (student, attempt, view, material, value) interaction."""

    student: int
    attempt: int
    view: int
    material: int
    value: float


@dataclass
class Dataset:
    """Indexed collection of interaction records across views.

    ``student_ids`` and ``material_ids`` keep the original string
    identifiers so that saved files round-trip; for programmatically
    built datasets they default to zero-padded index strings.
    """

    views: list[ViewSpec]
    records: list[InteractionRecord]
    num_students: int
    max_attempts: int
    student_ids: list[str] = field(default_factory=list)
    material_ids: dict[int, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.student_ids:
            width = max(1, len(str(max(self.num_students - 1, 0))))
            self.student_ids = [f"s{i:0{width}d}" for i in range(self.num_students)]
        for v in self.views:
            if v.view_id not in self.material_ids:
                width = max(1, len(str(v.num_materials - 1)))
                self.material_ids[v.view_id] = [
                    f"{v.name}{p:0{width}d}" for p in range(v.num_materials)
                ]
        self.records = sorted(self.records, key=lambda r: (r.student, r.attempt))
        self.validate()

    # -- basic accessors -------------------------------------------------

    def view(self, view_id: int) -> ViewSpec:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise ConfigError(f"unknown view id {view_id}")

    def view_by_name(self, name: str) -> ViewSpec:
        for v in self.views:
            if v.name == name:
                return v
        raise ConfigError(f"unknown view name {name!r}")

    def graded_view_ids(self) -> list[int]:
        return [v.view_id for v in self.views if v.graded]

    def records_for_student(self, student: int) -> list[InteractionRecord]:
        return [r for r in self.records if r.student == student]

    def subset_students(self, students) -> "Dataset":
        """Dataset restricted to the given students, keeping global indices."""
        keep = set(int(s) for s in students)
        return Dataset(
            views=list(self.views),
            records=[r for r in self.records if r.student in keep],
            num_students=self.num_students,
            max_attempts=self.max_attempts,
            student_ids=list(self.student_ids),
            material_ids={k: list(v) for k, v in self.material_ids.items()},
        )

    # -- validation ------------------------------------------------------

    def validate(self):
        ids = [v.view_id for v in self.views]
        if len(set(ids)) != len(ids):
            raise IntegrityError("duplicate view ids")
        for v in self.views:
            if v.num_materials < 1:
                raise IntegrityError(f"view {v.name!r} has no materials")
        by_view = {v.view_id: v for v in self.views}
        seen = set()
        max_a = -1
        for r in self.records:
            if r.view not in by_view:
                raise IntegrityError(f"record references unknown view {r.view}")
            v = by_view[r.view]
            if not (0 <= r.student < self.num_students):
                raise IntegrityError(f"student index {r.student} out of range")
            if not (0 <= r.material < v.num_materials):
                raise IntegrityError(
                    f"material index {r.material} out of range for view {v.name!r}"
                )
            if r.attempt < 0:
                raise IntegrityError(f"negative attempt index {r.attempt}")
            key = (r.student, r.attempt)
            if key in seen:
                raise IntegrityError(
                    f"duplicate timeline slot: student {r.student} attempt {r.attempt}"
                )
            seen.add(key)
            if not math.isfinite(r.value):
                raise RangeError(f"non-finite value {r.value}")
            if v.graded and not (0.0 <= r.value <= 1.0):
                raise RangeError(
                    f"graded value {r.value} outside [0, 1] "
                    f"(student {r.student}, attempt {r.attempt})"
                )
            if not v.graded and r.value != 1.0:
                raise RangeError(
                    f"non-graded value must be 1.0, got {r.value} "
                    f"(student {r.student}, attempt {r.attempt})"
                )
            max_a = max(max_a, r.attempt)
        if self.records and self.max_attempts != max_a + 1:
            raise IntegrityError(
                f"max_attempts={self.max_attempts} but highest attempt is {max_a}"
            )


def _infer_graded(values: list[float]) -> bool:
    # A view whose every observation is exactly 1.0 is treated as a
    # presence-indicator (non-graded) view.
    return not all(v == 1.0 for v in values)


def load_dataset(path, format: str | None = None, graded_views=None) -> Dataset:
    """Load a dataset from CSV or JSON.

    String identifiers are mapped to dense indices in sorted lexical
    order.  For CSV, a view is considered non-graded when all of its
    values are exactly 1.0 unless ``graded_views`` (an iterable of view
    names) says otherwise.
    """
    path = str(path)
    if format is None:
        format = "json" if path.endswith(".json") else "csv"
    if format == "json":
        return _load_json(path)
    if format == "csv":
        return _load_csv(path, graded_views)
    raise ConfigError(f"unknown format {format!r}")


def _load_csv(path, graded_views=None) -> Dataset:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1)
        if [h.strip() for h in header] != CSV_COLUMNS:
            raise ParseError(f"expected header {','.join(CSV_COLUMNS)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
            sid, attempt_s, view, mid, value_s = (c.strip() for c in row)
            try:
                attempt = int(attempt_s)
            except ValueError:
                raise ParseError(f"bad attempt {attempt_s!r}", line=lineno)
            try:
                value = float(value_s)
            except ValueError:
                raise ParseError(f"bad value {value_s!r}", line=lineno)
            if attempt < 0:
                raise ParseError(f"negative attempt {attempt}", line=lineno)
            rows.append((sid, attempt, view, mid, value))
    return _build_from_rows(rows, graded_views)


def _build_from_rows(rows, graded_views=None) -> Dataset:
    student_names = sorted({r[0] for r in rows})
    view_names = sorted({r[2] for r in rows})
    s_index = {n: i for i, n in enumerate(student_names)}
    v_index = {n: i for i, n in enumerate(view_names)}
    mat_names = {n: sorted({r[3] for r in rows if r[2] == n}) for n in view_names}
    m_index = {n: {m: i for i, m in enumerate(mat_names[n])} for n in view_names}
    values_by_view = {n: [r[4] for r in rows if r[2] == n] for n in view_names}
    views = []
    for n in view_names:
        if graded_views is not None:
            graded = n in set(graded_views)
        else:
            graded = _infer_graded(values_by_view[n])
        views.append(
            ViewSpec(
                view_id=v_index[n],
                name=n,
                graded=graded,
                num_materials=len(mat_names[n]),
            )
        )
    records = [
        InteractionRecord(
            student=s_index[sid],
            attempt=attempt,
            view=v_index[view],
            material=m_index[view][mid],
            value=value,
        )
        for sid, attempt, view, mid, value in rows
    ]
    max_attempts = 1 + max((r.attempt for r in records), default=-1)
    return Dataset(
        views=views,
        records=records,
        num_students=len(student_names),
        max_attempts=max(max_attempts, 0),
        student_ids=student_names,
        material_ids={v_index[n]: mat_names[n] for n in view_names},
    )


def _load_json(path) -> Dataset:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), line=e.lineno)
    try:
        views = [
            ViewSpec(
                view_id=int(v["view_id"]),
                name=str(v["name"]),
                graded=bool(v["graded"]),
                num_materials=int(v["num_materials"]),
            )
            for v in obj["views"]
        ]
        records = [
            InteractionRecord(
                student=int(r["student"]),
                attempt=int(r["attempt"]),
                view=int(r["view"]),
                material=int(r["material"]),
                value=float(r["value"]),
            )
            for r in obj["records"]
        ]
        return Dataset(
            views=views,
            records=records,
            num_students=int(obj["num_students"]),
            max_attempts=int(obj["max_attempts"]),
            student_ids=[str(s) for s in obj["student_ids"]],
            material_ids={
                int(k): [str(m) for m in v] for k, v in obj["material_ids"].items()
            },
        )
    except KeyError as e:
        raise ParseError(f"missing key {e}")


def save_dataset(ds: Dataset, path, format: str | None = None):
    """Write a dataset to CSV or JSON; output re-loads to an equal Dataset."""
    path = str(path)
    if format is None:
        format = "json" if path.endswith(".json") else "csv"
    if format == "csv":
        by_view = {v.view_id: v for v in ds.views}
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in ds.records:
                writer.writerow(
                    [
                        ds.student_ids[r.student],
                        r.attempt,
                        by_view[r.view].name,
                        ds.material_ids[r.view][r.material],
                        repr(r.value),
                    ]
                )
    elif format == "json":
        obj = {
            "views": [
                {
                    "view_id": v.view_id,
                    "name": v.name,
                    "graded": v.graded,
                    "num_materials": v.num_materials,
                }
                for v in ds.views
            ],
            "records": [
                {
                    "student": r.student,
                    "attempt": r.attempt,
                    "view": r.view,
                    "material": r.material,
                    "value": r.value,
                }
                for r in ds.records
            ],
            "num_students": ds.num_students,
            "max_attempts": ds.max_attempts,
            "student_ids": ds.student_ids,
            "material_ids": {str(k): v for k, v in ds.material_ids.items()},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True, indent=1)
            f.write("\n")
    else:
        raise ConfigError(f"unknown format {format!r}")


def split_student_stratified(ds: Dataset, folds: int, seed: int):
    """Partition students into ``folds`` disjoint test sets of near-equal size.

    Returns a list of (train_students, test_students) pairs of sorted
    numpy arrays; the test sets exactly partition [0, num_students).
    """
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if folds > ds.num_students:
        raise ConfigError(
            f"folds={folds} exceeds number of students {ds.num_students}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.num_students)
    chunks = np.array_split(order, folds)
    out = []
    for i in range(folds):
        test = np.sort(chunks[i])
        train = np.sort(np.concatenate([chunks[j] for j in range(folds) if j != i]))
        out.append((train, test))
    return out


def split_prefix_suffix(ds: Dataset, student: int, graded_view: int, fraction: float):
    """Split one student's timeline around their graded-attempt sequence.

    The first ``ceil(fraction * n_graded)`` graded records go to the
    prefix.  Every other record (non-graded, or graded in other views)
    goes to whichever side of the last prefix graded attempt it falls on.
    """
    if not (0.0 < fraction < 1.0):
        raise ConfigError("fraction must lie in (0, 1)")
    recs = ds.records_for_student(student)
    graded = [r for r in recs if r.view == graded_view]
    if not graded:
        raise ConfigError(
            f"student {student} has no records in graded view {graded_view}"
        )
    n_prefix = math.ceil(fraction * len(graded))
    cut = graded[n_prefix - 1].attempt
    prefix = [r for r in recs if r.attempt <= cut]
    suffix = [r for r in recs if r.attempt > cut]
    return prefix, suffix

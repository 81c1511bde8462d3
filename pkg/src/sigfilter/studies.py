"""Study tables: reading and writing the ``study_id,t,d,n,se,s,pval`` CSV schema.

Columns ``d`` (effect), ``se`` and ``pval`` may be left empty and are then
derived: ``se = s / sqrt(n)``, ``d = t * se`` and a two-sided p-value from
Student's t with ``n - 1`` df.  Given values must agree with the derived ones
within 1%.  An optional trailing ``provenance`` column labels where rows
came from.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from scipy import stats

from .errors import ParseError
from .meta_bayes import StudySummary

COLUMNS = ("study_id", "t", "d", "n", "se", "s", "pval")
PROVENANCE_COLUMN = "provenance"
PROVENANCES = ("reconstructed_table1", "user_csv")
TOLERANCE = 0.01

BUNDLED_TABLE = "table1_reconstructed.csv"


@dataclass(frozen=True)
class StudyTable:
    rows: tuple[StudySummary, ...]
    provenance: str = "user_csv"

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        ids = [r.study_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ValueError("study ids must be unique")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def by_id(self, study_id: str) -> StudySummary:
        for r in self.rows:
            if r.study_id == study_id:
                return r
        raise KeyError(study_id)


def _number(cell: str, row: int, col: str, sid: str, optional: bool = False):
    cell = cell.strip()
    if cell == "":
        if optional:
            return None
        raise ParseError(f"row {row} (study {sid!r}), column {col!r}: value is required")
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"row {row} (study {sid!r}), column {col!r}: {cell!r} is not numeric") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row} (study {sid!r}), column {col!r}: value must be finite")
    return value


def _off(given: float, derived: float) -> bool:
    scale = abs(derived)
    if scale == 0.0:
        return abs(given) > 0.0
    return abs(given - derived) > TOLERANCE * scale


def _two_sided_p(t: float, df: int) -> float:
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def parse_studies_text(text: str, source: str = "<text>") -> StudyTable:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(f"{source}: file is empty") from None
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    has_prov = header == [*COLUMNS, PROVENANCE_COLUMN]
    if tuple(header) != COLUMNS and not has_prov:
        raise ParseError(f"{source}: header must be {','.join(COLUMNS)} "
                         f"(optionally followed by {PROVENANCE_COLUMN}), got {','.join(header)}")
    width = len(header)
    rows, provs, seen = [], [], set()
    for row_no, cells in enumerate(reader, start=1):
        if not cells or all(c.strip() == "" for c in cells):
            continue
        sid = cells[0].strip()
        if len(cells) != width:
            raise ParseError(f"row {row_no} (study {sid!r}): expected {width} columns, got {len(cells)}")
        if sid == "":
            raise ParseError(f"row {row_no}, column 'study_id': value is required")
        if sid in seen:
            raise ParseError(f"row {row_no}, column 'study_id': duplicate id {sid!r}")
        seen.add(sid)
        rec = dict(zip(header, cells))
        t = _number(rec["t"], row_no, "t", sid)
        n_val = _number(rec["n"], row_no, "n", sid)
        s = _number(rec["s"], row_no, "s", sid)
        d = _number(rec["d"], row_no, "d", sid, optional=True)
        se = _number(rec["se"], row_no, "se", sid, optional=True)
        p = _number(rec["pval"], row_no, "pval", sid, optional=True)
        if n_val != int(n_val) or n_val < 2:
            raise ParseError(f"row {row_no} (study {sid!r}), column 'n': must be an integer >= 2")
        n = int(n_val)
        if not s > 0:
            raise ParseError(f"row {row_no} (study {sid!r}), column 's': must be positive")
        se_derived = s / math.sqrt(n)
        if se is None:
            se = se_derived
        elif not se > 0 or _off(se, se_derived):
            raise ParseError(f"row {row_no} (study {sid!r}), column 'se': {se!r} is inconsistent "
                             f"with s/sqrt(n) = {se_derived!r}")
        if d is None:
            d = t * se
        elif _off(d / se, t):
            raise ParseError(f"row {row_no} (study {sid!r}), column 'd': d/se = {d / se!r} is "
                             f"inconsistent with t = {t!r}")
        if p is None:
            p = _two_sided_p(t, n - 1)
        elif not 0.0 <= p <= 1.0:
            raise ParseError(f"row {row_no} (study {sid!r}), column 'pval': must lie in [0, 1]")
        rows.append(StudySummary(study_id=sid, effect=d, se=se, sd=s, n=n, t_stat=t, p_value=p))
        provs.append(rec.get(PROVENANCE_COLUMN, "").strip())
    if not rows:
        raise ParseError(f"{source}: no studies")
    provenance = "reconstructed_table1" if all(p == "reconstructed_table1" for p in provs) else "user_csv"
    return StudyTable(rows=tuple(rows), provenance=provenance)


def parse_studies_csv(path) -> StudyTable:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from exc
    return parse_studies_text(text, source=str(path))


def bundled_table_text() -> str:
    return resources.files("sigfilter").joinpath("data", BUNDLED_TABLE).read_text(encoding="utf-8")


def load_bundled_table() -> StudyTable:
    """The ten case-study comparisons reconstructed from their printed t, s and n."""
    return parse_studies_text(bundled_table_text(), source=BUNDLED_TABLE)


def format_studies_csv(table: StudyTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*COLUMNS, PROVENANCE_COLUMN])
    for r in table.rows:
        w.writerow([r.study_id, repr(r.t_stat), repr(r.effect), r.n, repr(r.se), repr(r.sd),
                    repr(r.p_value), table.provenance])
    return buf.getvalue()


def write_studies_csv(table: StudyTable, path) -> None:
    Path(path).write_text(format_studies_csv(table), encoding="utf-8", newline="\n")

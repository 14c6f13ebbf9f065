"""Immutable domain types for literature review tables.

A review table has one row per cited paper and one column per comparison
aspect. Cells are total: every (row, aspect) pair maps to a value, and an
absent value is an explicit empty marker, never a missing key. The module
also owns the canonical on-disk JSON format and its round-tripping parser.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

MIN_ROWS = 2
MIN_ASPECTS = 2
RESERVED_ASPECT = "References"

_CITE_MARKER_RE = re.compile(r"^\{\{cite:(.+)\}\}$")


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class PaperRecord:
    """A cited paper: identity plus whatever text we hold for it."""

    cite_id: str
    title: str
    abstract: str | None = None
    full_text: str | None = None
    external_id: str | None = None


@dataclass(frozen=True)
class InTextReference:
    """Sentence(s) from the source paper that reference the table."""

    section: str
    text: str


@dataclass(frozen=True)
class CellValue:
    text: str
    empty: bool

    @staticmethod
    def of(text: str) -> "CellValue":
        """Build a cell, mapping blank text to the explicit empty marker."""
        cleaned = nfc(text).strip()
        if not cleaned:
            return CellValue(text="", empty=True)
        return CellValue(text=nfc(text), empty=False)

    @staticmethod
    def missing() -> "CellValue":
        return CellValue(text="", empty=True)


@dataclass(frozen=True)
class Schema:
    """Ordered aspect names of a table; order is preserved for reproducible
    output even where comparisons ignore it."""

    aspects: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.aspects)) != len(self.aspects):
            raise ValueError("schema aspects must be distinct")
        if any(not a.strip() for a in self.aspects):
            raise ValueError("schema aspects must be non-empty")

    def __len__(self) -> int:
        return len(self.aspects)

    def __iter__(self):
        return iter(self.aspects)


@dataclass(frozen=True)
class ReviewTable:
    """The central artifact: rows keyed by citation id, ordered aspect
    columns, a total cell mapping, and optional context (caption,
    in-text references, per-row paper records)."""

    table_id: str
    source_paper_id: str | None
    caption: str | None
    in_text_refs: tuple[InTextReference, ...]
    row_keys: tuple[str, ...]
    aspects: tuple[str, ...]
    cells: Mapping[tuple[str, str], CellValue]
    papers: Mapping[str, PaperRecord] = field(default_factory=dict)
    provenance: Mapping[str, Any] = field(default_factory=dict)

    @property
    def schema(self) -> Schema:
        return Schema(self.aspects)

    def cell(self, row_key: str, aspect: str) -> CellValue:
        return self.cells[(row_key, aspect)]

    def column(self, aspect: str) -> list[CellValue]:
        return [self.cells[(row, aspect)] for row in self.row_keys]

    def row(self, row_key: str) -> list[CellValue]:
        return [self.cells[(row_key, aspect)] for aspect in self.aspects]

    def with_changes(self, **changes: Any) -> "ReviewTable":
        return replace(self, **changes)


def make_table(
    table_id: str,
    row_keys: Iterable[str],
    aspects: Iterable[str],
    grid: Iterable[Iterable[str]],
    *,
    source_paper_id: str | None = None,
    caption: str | None = None,
    in_text_refs: Iterable[InTextReference] = (),
    papers: Mapping[str, PaperRecord] | None = None,
    provenance: Mapping[str, Any] | None = None,
) -> ReviewTable:
    """Assemble a table from a row-major grid of raw cell strings."""
    rows = tuple(row_keys)
    cols = tuple(aspects)
    cells: dict[tuple[str, str], CellValue] = {}
    for row_key, row_values in zip(rows, grid):
        values = list(row_values)
        if len(values) != len(cols):
            raise ValueError(
                f"row {row_key!r} has {len(values)} values for {len(cols)} aspects"
            )
        for aspect, value in zip(cols, values):
            cells[(row_key, aspect)] = CellValue.of(value)
    return ReviewTable(
        table_id=table_id,
        source_paper_id=source_paper_id,
        caption=caption,
        in_text_refs=tuple(in_text_refs),
        row_keys=rows,
        aspects=cols,
        cells=cells,
        papers=dict(papers or {}),
        provenance=dict(provenance or {}),
    )


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code}[{self.subject}]: {self.detail}"


def validate_table(table: ReviewTable) -> list[Violation]:
    """Check every structural invariant; return one descriptor per breach.

    Total function: never raises, an empty list means the table is valid.
    """
    violations: list[Violation] = []
    if not table.table_id:
        violations.append(Violation("empty-table-id", "<table>", "table_id is empty"))

    if len(table.row_keys) < MIN_ROWS:
        violations.append(
            Violation("lt2-rows", table.table_id, f"{len(table.row_keys)} row(s), need >= {MIN_ROWS}")
        )
    seen_rows: set[str] = set()
    for key in table.row_keys:
        if not key:
            violations.append(Violation("empty-row-key", table.table_id, "blank row key"))
        if key in seen_rows:
            violations.append(Violation("duplicate-row-key", key, "row key appears twice"))
        seen_rows.add(key)

    if len(table.aspects) < MIN_ASPECTS:
        violations.append(
            Violation("lt2-aspects", table.table_id, f"{len(table.aspects)} aspect(s), need >= {MIN_ASPECTS}")
        )
    seen_aspects: set[str] = set()
    for aspect in table.aspects:
        if not aspect.strip():
            violations.append(Violation("empty-aspect", table.table_id, "blank aspect name"))
        if aspect == RESERVED_ASPECT:
            violations.append(
                Violation("reserved-aspect", aspect, "row identity lives in row_keys, not a column")
            )
        if aspect in seen_aspects:
            violations.append(Violation("duplicate-aspect", aspect, "aspect name appears twice"))
        seen_aspects.add(aspect)

    for row in table.row_keys:
        for aspect in table.aspects:
            cell = table.cells.get((row, aspect))
            if cell is None:
                violations.append(Violation("missing-cell", f"{row}/{aspect}", "no value for this pair"))
                continue
            if cell.empty and cell.text != "":
                violations.append(
                    Violation("inconsistent-empty-cell", f"{row}/{aspect}", "empty flag with non-empty text")
                )
            if not cell.empty and not cell.text.strip():
                violations.append(
                    Violation("blank-nonempty-cell", f"{row}/{aspect}", "non-empty flag with blank text")
                )
    known = {(r, a) for r in table.row_keys for a in table.aspects}
    for key in table.cells:
        if key not in known:
            violations.append(Violation("orphan-cell", f"{key[0]}/{key[1]}", "cell outside row/aspect grid"))

    for ref in table.in_text_refs:
        if not ref.text.strip():
            violations.append(Violation("empty-in-text-ref", table.table_id, "reference text is blank"))

    for key, record in table.papers.items():
        if not record.cite_id:
            violations.append(Violation("empty-cite-id", key, "paper record without cite_id"))
        if not record.title.strip():
            violations.append(Violation("paper-missing-title", key, "paper record without title"))
    return violations


# Canonical corpus JSON. One object per table:
#   table_id, paper_id, caption, in_text_references ([{section, text}]),
#   table ({"References": ["{{cite:<id>}}", ...], "<aspect>": [values...]}),
#   citation_info ([{cite_id, corpus_id, title, abstract, full_text}]),
#   provenance (present only when non-empty).
# Empty cells serialize as "" and citation markers wrap bare cite ids.


def strip_cite_marker(value: str) -> str:
    match = _CITE_MARKER_RE.match(value.strip())
    return match.group(1) if match else value.strip()


def wrap_cite_marker(cite_id: str) -> str:
    return "{{cite:%s}}" % cite_id


def table_to_json(table: ReviewTable) -> dict[str, Any]:
    grid: dict[str, Any] = {RESERVED_ASPECT: [wrap_cite_marker(k) for k in table.row_keys]}
    for aspect in table.aspects:
        grid[aspect] = [table.cells[(row, aspect)].text for row in table.row_keys]
    citation_info = []
    for key in table.row_keys:
        record = table.papers.get(key)
        if record is None:
            continue
        citation_info.append(
            {
                "cite_id": record.cite_id,
                "corpus_id": record.external_id,
                "title": record.title,
                "abstract": record.abstract,
                "full_text": record.full_text,
            }
        )
    obj: dict[str, Any] = {
        "table_id": table.table_id,
        "paper_id": table.source_paper_id,
        "caption": table.caption,
        "in_text_references": [{"section": r.section, "text": r.text} for r in table.in_text_refs],
        "table": grid,
        "citation_info": citation_info,
    }
    if table.provenance:
        obj["provenance"] = _plain(table.provenance)
    return obj


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def table_from_json(obj: Mapping[str, Any]) -> ReviewTable:
    for key in ("table_id", "table"):
        if key not in obj:
            raise ValueError(f"corpus object missing required key {key!r}")
    grid = obj["table"]
    if RESERVED_ASPECT not in grid:
        raise ValueError("corpus table object must carry a References entry")
    row_keys = tuple(nfc(strip_cite_marker(str(m))) for m in grid[RESERVED_ASPECT])
    aspects = tuple(nfc(str(a)) for a in grid if a != RESERVED_ASPECT)
    cells: dict[tuple[str, str], CellValue] = {}
    for aspect in aspects:
        column = grid[aspect]
        if len(column) != len(row_keys):
            raise ValueError(f"column {aspect!r} has {len(column)} values for {len(row_keys)} rows")
        for row_key, value in zip(row_keys, column):
            cells[(row_key, aspect)] = CellValue.of(str(value))
    papers: dict[str, PaperRecord] = {}
    for entry in obj.get("citation_info") or []:
        cite_id = nfc(str(entry["cite_id"]))
        papers[cite_id] = PaperRecord(
            cite_id=cite_id,
            title=nfc(str(entry.get("title") or "")),
            abstract=_opt_text(entry.get("abstract")),
            full_text=_opt_text(entry.get("full_text")),
            external_id=_opt_text(entry.get("corpus_id")),
        )
    refs = tuple(
        InTextReference(section=nfc(str(r.get("section") or "")), text=nfc(str(r.get("text") or "")))
        for r in obj.get("in_text_references") or []
    )
    return ReviewTable(
        table_id=nfc(str(obj["table_id"])),
        source_paper_id=_opt_text(obj.get("paper_id")),
        caption=_opt_text(obj.get("caption")),
        in_text_refs=refs,
        row_keys=row_keys,
        aspects=aspects,
        cells=cells,
        papers=papers,
        provenance=dict(obj.get("provenance") or {}),
    )


def _opt_text(value: Any) -> str | None:
    if value is None:
        return None
    return nfc(str(value))


def serialize_table(table: ReviewTable) -> str:
    return json.dumps(table_to_json(table), indent=2, ensure_ascii=False) + "\n"


def parse_table(text: str) -> ReviewTable:
    return table_from_json(json.loads(text))


def dump_table(table: ReviewTable, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(serialize_table(table), encoding="utf-8")
    return path


def load_table(path: str | Path) -> ReviewTable:
    return parse_table(Path(path).read_text(encoding="utf-8"))

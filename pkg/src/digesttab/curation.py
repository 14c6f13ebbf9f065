"""Curation pipeline: raw XML tables in, clean row-per-paper corpora out.

The cascade has five stages: prefilter (cheap structural checks on the
XML), parse (heuristic conversion to a keyed table), metadata (citation
lookups), grounding (drop ungroundable columns/rows), and final (strict
quality filters plus deduplication). A funnel report records where every
table, row, and column went. High strictness applies every filter;
Medium relaxes header, citation-free-row, and full-text requirements so
that survivors(High) is always a subset of survivors(Medium).
"""

from __future__ import annotations

import json
import logging
import re
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Protocol
from urllib.parse import quote

import requests

from .errors import MalformedXmlError, ResolverUnavailableError, TableParseError
from .model import (
    CellValue,
    InTextReference,
    PaperRecord,
    ReviewTable,
    dump_table,
    load_table,
    nfc,
    validate_table,
)

logger = logging.getLogger(__name__)

MIN_TABLE_CHARS = 400
MAX_TABLE_CHARS = 15000
MAX_HEADER_ROWS = 2

CITE_RE = re.compile(r"\{\{cite:([^}]+)\}\}")
DECIMAL_RE = re.compile(r"(?<![\w.])\d+\.\d+")
LATEX_MATH_RE = re.compile(r"\$|\\\(|\\\[|\\frac|\\sum|\\sqrt|\\times|\\pm|\\leq|\\geq")
MATH_SYMBOLS = set("±≤≥×÷≈≠∞√∑∏∫∂∇")
GREEK_RANGE = (0x0391, 0x03C9)

STAGES = ("prefilter", "parse", "metadata", "grounding", "final")


class Strictness(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"


@dataclass(frozen=True)
class RawXmlTable:
    table_id: str
    source_paper_id: str | None
    xml: str
    caption: str | None = None
    in_text_refs: tuple[InTextReference, ...] = ()
    bibliography: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.xml:
            raise ValueError("raw table has no XML payload")


@dataclass(frozen=True)
class FilterVerdict:
    table_id: str
    passed: bool
    failed_filters: tuple[str, ...]
    stage: str

    def __post_init__(self):
        if self.passed != (not self.failed_filters):
            raise ValueError("passed flag must equal failed_filters emptiness")

    @staticmethod
    def ok(table_id: str, stage: str) -> "FilterVerdict":
        return FilterVerdict(table_id=table_id, passed=True, failed_filters=(), stage=stage)

    @staticmethod
    def fail(table_id: str, stage: str, filters: list[str]) -> "FilterVerdict":
        return FilterVerdict(table_id=table_id, passed=False, failed_filters=tuple(filters), stage=stage)


# -- metadata resolution -----------------------------------------------------


@dataclass(frozen=True)
class ResolvedPaper:
    title: str
    abstract: str | None = None
    full_text: str | None = None
    external_id: str | None = None


class MetadataResolver(Protocol):
    def resolve(self, cite_id: str, bibliography: Any = None) -> ResolvedPaper | None: ...


class StaticResolver:
    """In-memory resolver keyed by cite id; missing entries are not-found."""

    def __init__(self, records: Mapping[str, Any]):
        self._records = dict(records)

    def resolve(self, cite_id: str, bibliography: Any = None) -> ResolvedPaper | None:
        entry = self._records.get(cite_id)
        if entry is None:
            return None
        if isinstance(entry, ResolvedPaper):
            return entry
        return ResolvedPaper(
            title=entry.get("title", ""),
            abstract=entry.get("abstract"),
            full_text=entry.get("full_text"),
            external_id=entry.get("external_id") or entry.get("corpus_id"),
        )


class HttpMetadataResolver:
    """Client for a scholarly-metadata endpoint: GET /paper/{id}?fields=...

    Lookups occasionally fail for content reasons (missing entry), which
    drops the row; transport failures are retried and then surfaced as
    ResolverUnavailableError, leaving the table pending rather than
    filtered.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        retries: int = 3,
        backoff_s: float = 0.2,
        timeout_s: float = 10.0,
        fields: str = "title,abstract",
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.fields = fields
        self._session = requests.Session()

    def resolve(self, cite_id: str, bibliography: Any = None) -> ResolvedPaper | None:
        lookup_id = cite_id
        if isinstance(bibliography, Mapping) and bibliography.get("paper_id"):
            lookup_id = str(bibliography["paper_id"])
        url = f"{self.base_url}/paper/{quote(lookup_id, safe='')}"
        headers = {"x-api-key": self.api_key} if self.api_key else {}
        delay = self.backoff_s
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                http = self._session.get(
                    url, params={"fields": self.fields}, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as err:
                last_error = err
                time.sleep(delay)
                delay *= 2
                continue
            if http.status_code == 404:
                return None
            if http.status_code >= 500 or http.status_code == 429:
                last_error = RuntimeError(f"status {http.status_code}")
                time.sleep(delay)
                delay *= 2
                continue
            if http.status_code != 200:
                raise ResolverUnavailableError(
                    f"metadata endpoint returned {http.status_code} for {lookup_id}"
                )
            body = http.json()
            title = (body.get("title") or "").strip()
            if not title:
                return None
            return ResolvedPaper(
                title=title,
                abstract=body.get("abstract"),
                full_text=body.get("full_text"),
                external_id=body.get("paperId") or body.get("paper_id"),
            )
        raise ResolverUnavailableError(f"metadata lookups kept failing: {last_error}")


# -- prefilter ----------------------------------------------------------------


def _parse_xml(raw: RawXmlTable) -> ET.Element:
    try:
        return ET.fromstring(raw.xml)
    except ET.ParseError as err:
        raise MalformedXmlError(f"{raw.table_id}: {err}")


def _tabular_element(root: ET.Element) -> ET.Element | None:
    if root.tag == "tabular":
        return root
    return root.find(".//tabular")


def _cell_text(cell: ET.Element) -> str:
    return nfc("".join(cell.itertext()))


def _rows_and_cells(root: ET.Element) -> list[list[ET.Element]]:
    body = _tabular_element(root) or root
    rows = []
    for tr in body.iter("tr"):
        cells = [c for c in tr if c.tag in ("td", "th")]
        rows.append(cells)
    return rows


def prefilter_xml(raw: RawXmlTable) -> FilterVerdict:
    """Cheap structural screen before any parsing effort is spent.

    Raises MalformedXmlError when the document cannot be tokenized at all;
    that is an error, not a filter outcome.
    """
    root = _parse_xml(raw)
    failed: list[str] = []

    body = _tabular_element(root)
    length = len(ET.tostring(body, encoding="unicode")) if body is not None else len(raw.xml)
    if length < MIN_TABLE_CHARS or length > MAX_TABLE_CHARS:
        failed.append("char-length")

    rows = _rows_and_cells(root)
    all_cells = [c for row in rows for c in row]
    if not all_cells:
        failed.append("no-cell-tags")

    cite_ids = set()
    cite_columns = set()
    for row in rows:
        for col_index, cell in enumerate(row):
            for match in CITE_RE.finditer(_cell_text(cell)):
                cite_ids.add(match.group(1))
                cite_columns.add(col_index)
    if len(cite_ids) < 2:
        failed.append("lt2-citations")
    if len(rows) < 2:
        failed.append("lt2-rows")
    if not rows or max((len(r) for r in rows), default=0) < 2:
        failed.append("lt2-cols")
    if len(cite_columns) > 1:
        failed.append("multi-column-citations")

    if failed:
        return FilterVerdict.fail(raw.table_id, "prefilter", failed)
    return FilterVerdict.ok(raw.table_id, "prefilter")


# -- parse --------------------------------------------------------------------


def _clean_cell_text(text: str) -> str:
    text = CITE_RE.sub("", text)
    text = re.sub(r"\(\s*\)", "", text)
    text = re.sub(r"\[\s*\]", "", text)
    text = re.sub(r"\s+", " ", text).strip()
    return text.strip(" ,;")


def parse_xml_table(raw: RawXmlTable) -> ReviewTable:
    """Heuristic XML-to-table conversion.

    Citation markers are pulled out of cells into row keys; rows without
    any citation are keyed to the source paper. Multi-row headers (at most
    two) are flattened into single aspect names, uppermost first. Rows the
    heuristics cannot place are dropped and recorded in provenance;
    anything worse raises TableParseError with a filter id when the
    failure corresponds to a corpus filter rather than a heuristic defect.
    """
    root = _parse_xml(raw)
    rows = _rows_and_cells(root)
    if not rows:
        raise TableParseError(f"{raw.table_id}: no rows")

    header_count = 0
    for row in rows:
        if row and all(cell.tag == "th" for cell in row):
            header_count += 1
        else:
            break
    if header_count == 0:
        header_count = 1  # convention: an all-td table still leads with its header row
    if header_count > MAX_HEADER_ROWS:
        raise TableParseError(f"{raw.table_id}: {header_count} header rows exceed the heuristic bound")

    header_rows = rows[:header_count]
    data_rows = rows[header_count:]
    n_cols = len(header_rows[0])
    if any(len(r) != n_cols for r in header_rows):
        raise TableParseError(f"{raw.table_id}: ragged header rows")

    headers: list[str] = []
    for col in range(n_cols):
        parts = [_clean_cell_text(_cell_text(r[col])) for r in header_rows]
        headers.append(" ".join(p for p in parts if p).strip())

    provenance: dict[str, Any] = {}
    if header_count > 1:
        provenance["merged_headers"] = True

    dropped: list[dict[str, Any]] = []
    parsed_rows: list[tuple[str | None, list[str]]] = []
    for index, row in enumerate(data_rows):
        if len(row) != n_cols:
            dropped.append({"index": index, "reason": "row-parse-failure"})
            continue
        texts = [_cell_text(c) for c in row]
        cites: list[str] = []
        for text in texts:
            cites.extend(CITE_RE.findall(text))
        cleaned = [_clean_cell_text(t) for t in texts]
        parsed_rows.append((cites[0] if cites else None, cleaned))

    if not parsed_rows:
        raise TableParseError(f"{raw.table_id}: no parseable data rows")
    if len(parsed_rows) < 2:
        raise TableParseError(f"{raw.table_id}: fewer than two data rows", filter_id="lt2-rows")

    # assign row keys; citation-free rows refer to the source paper
    row_keys: list[str] = []
    row_citations: dict[str, str] = {}
    citation_free: list[str] = []
    used: set[str] = set()
    for cite, _ in parsed_rows:
        base = cite if cite is not None else (raw.source_paper_id or "")
        if not base:
            base = f"{raw.table_id}-row"
        key = base
        serial = 1
        while key in used:
            serial += 1
            key = f"{base}__dup{serial}"
        used.add(key)
        row_keys.append(key)
        row_citations[key] = cite if cite is not None else ""
        if cite is None:
            citation_free.append(key)
    if citation_free:
        provenance["citation_free_rows"] = citation_free
    provenance["row_citations"] = row_citations
    if dropped:
        provenance["dropped_rows"] = dropped

    # drop columns that contained nothing but citation markers
    keep_cols: list[int] = []
    for col in range(n_cols):
        if any(values[col] for _, values in parsed_rows):
            keep_cols.append(col)
    if len(keep_cols) < 2:
        raise TableParseError(
            f"{raw.table_id}: fewer than two content columns after citation extraction",
            filter_id="lt2-cols",
        )

    aspects: list[str] = []
    renamed: dict[str, str] = {}
    seen_names: set[str] = set()
    for col in keep_cols:
        name = headers[col] or f"Column {col + 1}"
        base = name
        if name == "References":
            name = "References (cells)"
        serial = 1
        while name in seen_names:
            serial += 1
            name = f"{base} ({serial})"
        if name != base:
            renamed[name] = base
        seen_names.add(name)
        aspects.append(name)
    if renamed:
        provenance["renamed_aspects"] = renamed

    cells: dict[tuple[str, str], CellValue] = {}
    for key, (_, values) in zip(row_keys, parsed_rows):
        for aspect, col in zip(aspects, keep_cols):
            cells[(key, aspect)] = CellValue.of(values[col])

    if raw.bibliography:
        provenance["bibliography"] = dict(raw.bibliography)

    table = ReviewTable(
        table_id=raw.table_id,
        source_paper_id=raw.source_paper_id,
        caption=nfc(raw.caption) if raw.caption else None,
        in_text_refs=raw.in_text_refs,
        row_keys=tuple(row_keys),
        aspects=tuple(aspects),
        cells=cells,
        papers={},
        provenance=provenance,
    )
    violations = validate_table(table)
    if violations:
        raise TableParseError(f"{raw.table_id}: parse produced an invalid table: {violations[0]}")
    return table


# -- metadata -----------------------------------------------------------------


def enrich_metadata(table: ReviewTable, resolver: MetadataResolver) -> tuple[ReviewTable, FilterVerdict]:
    """Attach titles/abstracts to every row; rows that cannot be resolved
    are dropped, and a table keeping fewer than two rows fails the stage."""
    provenance = dict(table.provenance)
    bibliography = provenance.pop("bibliography", {})
    row_citations = provenance.get("row_citations", {})

    kept: list[str] = []
    papers: dict[str, PaperRecord] = {}
    unmatched: list[str] = []
    for key in table.row_keys:
        original = row_citations.get(key) or key
        lookup = original if row_citations.get(key) else (table.source_paper_id or key)
        resolved = resolver.resolve(lookup, bibliography.get(lookup))
        if resolved is None or not resolved.title.strip():
            unmatched.append(key)
            continue
        kept.append(key)
        papers[key] = PaperRecord(
            cite_id=key,
            title=nfc(resolved.title),
            abstract=nfc(resolved.abstract) if resolved.abstract else None,
            full_text=nfc(resolved.full_text) if resolved.full_text else None,
            external_id=resolved.external_id,
        )
    if unmatched:
        provenance["metadata_unmatched"] = unmatched
    cells = {k: v for k, v in table.cells.items() if k[0] in set(kept)}
    enriched = table.with_changes(
        row_keys=tuple(kept), cells=cells, papers=papers, provenance=provenance
    )
    if len(kept) < 2:
        return enriched, FilterVerdict.fail(table.table_id, "metadata", ["lt2-matched-citations"])
    return enriched, FilterVerdict.ok(table.table_id, "metadata")


# -- grounding ----------------------------------------------------------------


def _has_math(text: str) -> bool:
    if DECIMAL_RE.search(text):
        return True
    if LATEX_MATH_RE.search(text):
        return True
    for char in text:
        if char in MATH_SYMBOLS:
            return True
        if GREEK_RANGE[0] <= ord(char) <= GREEK_RANGE[1]:
            return True
    return False


def column_is_groundable(values: list[CellValue]) -> bool:
    """A column survives grounding unless some cell holds a decimal-point
    numeral, math notation, or a curated math symbol. Bare integers (years,
    counts) are legitimate groundable content and are retained."""
    return not any(_has_math(v.text) for v in values if not v.empty)


def ground_to_fulltext(
    table: ReviewTable, *, require_fulltext: bool = True
) -> tuple[ReviewTable, FilterVerdict]:
    provenance = dict(table.provenance)

    kept_aspects = []
    column_drops = dict(provenance.get("column_drops", {}))
    for aspect in table.aspects:
        if column_is_groundable(table.column(aspect)):
            kept_aspects.append(aspect)
        else:
            column_drops[aspect] = "math-column"
    if column_drops:
        provenance["column_drops"] = column_drops

    kept_rows = []
    row_drops = list(provenance.get("grounding_row_drops", []))
    for key in table.row_keys:
        record = table.papers.get(key)
        if require_fulltext and (record is None or not record.full_text):
            row_drops.append(key)
            continue
        kept_rows.append(key)
    if row_drops:
        provenance["grounding_row_drops"] = row_drops

    cells = {
        (r, a): v for (r, a), v in table.cells.items() if r in set(kept_rows) and a in set(kept_aspects)
    }
    papers = {k: v for k, v in table.papers.items() if k in set(kept_rows)}
    grounded = table.with_changes(
        row_keys=tuple(kept_rows),
        aspects=tuple(kept_aspects),
        cells=cells,
        papers=papers,
        provenance=provenance,
    )
    failed = []
    if len(kept_rows) < 2:
        failed.append("lt2-rows")
    if len(kept_aspects) < 2:
        failed.append("lt2-aspects")
    if failed:
        return grounded, FilterVerdict.fail(table.table_id, "grounding", failed)
    return grounded, FilterVerdict.ok(table.table_id, "grounding")


# -- final filter ---------------------------------------------------------------


def _normalize_match_text(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().casefold()


def table_signature(table: ReviewTable) -> str:
    """Content signature over aspect columns only (row identity excluded),
    normalized for whitespace and case so incidental conversion noise does
    not defeat duplicate detection."""
    parts = []
    for aspect in sorted(table.aspects):
        column = [_normalize_match_text(c.text) for c in table.column(aspect)]
        parts.append(_normalize_match_text(aspect) + "=" + "\x1f".join(column))
    return "\x1e".join(parts)


def _row_identity(table: ReviewTable, key: str) -> str:
    original = table.provenance.get("row_citations", {}).get(key, key)
    values = [_normalize_match_text(table.cells[(key, a)].text) for a in table.aspects]
    return (original or key) + "\x1f" + "\x1f".join(values)


def final_filter(
    table: ReviewTable,
    strictness: Strictness,
    seen_signatures: dict[str, str] | None = None,
) -> tuple[ReviewTable, FilterVerdict]:
    """Last stringent pass: row dedup, header/citation requirements, and
    corpus-level duplicate-table detection via ``seen_signatures``."""
    provenance = dict(table.provenance)

    kept: list[str] = []
    seen_rows: set[str] = set()
    dedup_drops = list(provenance.get("dedup_row_drops", []))
    for key in table.row_keys:
        identity = _row_identity(table, key)
        if identity in seen_rows:
            dedup_drops.append(key)
            continue
        seen_rows.add(identity)
        kept.append(key)
    if dedup_drops:
        provenance["dedup_row_drops"] = dedup_drops
    cells = {k: v for k, v in table.cells.items() if k[0] in set(kept)}
    papers = {k: v for k, v in table.papers.items() if k in set(kept)}
    deduped = table.with_changes(
        row_keys=tuple(kept), cells=cells, papers=papers, provenance=provenance
    )

    failed: list[str] = []
    citation_free = [k for k in provenance.get("citation_free_rows", []) if k in set(kept)]
    if strictness is Strictness.HIGH:
        if provenance.get("merged_headers"):
            failed.append("merged-header")
        if citation_free:
            failed.append("citation-free-row")
    else:
        if len(citation_free) > 1:
            failed.append("citation-free-row")

    if len(kept) < 2:
        failed.append("lt2-rows")
    if len(deduped.aspects) < 2:
        failed.append("lt2-aspects")

    if not failed and seen_signatures is not None:
        signature = table_signature(deduped)
        if signature in seen_signatures:
            failed.append("duplicate-table")
        else:
            seen_signatures[signature] = deduped.table_id

    if failed:
        return deduped, FilterVerdict.fail(table.table_id, "final", failed)
    return deduped, FilterVerdict.ok(table.table_id, "final")


# -- pipeline -------------------------------------------------------------------


@dataclass
class PipelineResult:
    tables: list[ReviewTable]
    funnel: dict[str, Any]
    verdicts: dict[str, list[FilterVerdict]]


class _StageTally:
    def __init__(self):
        self.entered = 0
        self.out = 0
        self.errored = 0
        self.dropped_by_filter: dict[str, int] = {}

    def drop(self, filter_id: str) -> None:
        self.dropped_by_filter[filter_id] = self.dropped_by_filter.get(filter_id, 0) + 1

    def as_dict(self) -> dict[str, Any]:
        return {
            "in": self.entered,
            "out": self.out,
            "errored": self.errored,
            "dropped": sum(self.dropped_by_filter.values()),
            "dropped_by_filter": dict(sorted(self.dropped_by_filter.items())),
        }


MATH_POLICY_NOTE = (
    "columns are dropped when any cell contains a decimal-point numeral, LaTeX math "
    "notation, or one of the symbols ±≤≥×÷≈≠∞√∑∏∫∂∇ or a Greek letter; integer-only "
    "columns are retained"
)


def load_raw_tables(input_dir: str | Path) -> list[RawXmlTable]:
    input_dir = Path(input_dir)
    global_bib: dict[str, Any] = {}
    bib_path = input_dir / "bibliography.json"
    if bib_path.exists():
        global_bib = json.loads(bib_path.read_text(encoding="utf-8"))
    raws = []
    for path in sorted(input_dir.glob("*.xml")):
        meta: dict[str, Any] = {}
        meta_path = path.with_suffix(".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        xml_text = path.read_text(encoding="utf-8")
        caption = meta.get("caption")
        attrib_id = None
        attrib_paper = None
        try:
            root = ET.fromstring(xml_text)
            attrib_id = root.attrib.get("id")
            attrib_paper = root.attrib.get("paper")
            caption_el = root.find("caption")
            if caption is None and caption_el is not None:
                caption = "".join(caption_el.itertext()).strip() or None
        except ET.ParseError:
            pass  # surfaced later as malformed-xml
        bibliography = dict(global_bib)
        bibliography.update(meta.get("bibliography") or {})
        refs = tuple(
            InTextReference(section=r.get("section", ""), text=r.get("text", ""))
            for r in meta.get("in_text_references") or []
        )
        raws.append(
            RawXmlTable(
                table_id=meta.get("table_id") or attrib_id or path.stem,
                source_paper_id=meta.get("paper_id") or attrib_paper,
                xml=xml_text,
                caption=caption,
                in_text_refs=refs,
                bibliography=bibliography,
            )
        )
    return raws


def _load_json_tables(input_dir: Path) -> list[ReviewTable]:
    tables = []
    for path in sorted(input_dir.glob("*.json")):
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            continue
        # sidecar JSON (bibliography, labels, funnel, manifests) is not a table
        if not isinstance(payload, dict) or "table_id" not in payload or "table" not in payload:
            continue
        tables.append(load_table(path))
    return tables


def run_pipeline(
    input_dir: str | Path,
    strictness: Strictness,
    resolver: MetadataResolver,
    out_dir: str | Path | None = None,
) -> PipelineResult:
    """Run the cascade over a directory of raw XML (plus optional canonical
    JSON) tables. Individual table failures never abort the run; resolver
    transport failures do propagate."""
    input_dir = Path(input_dir)
    raws = load_raw_tables(input_dir)
    json_tables = _load_json_tables(input_dir)

    tallies = {stage: _StageTally() for stage in STAGES}
    verdicts: dict[str, list[FilterVerdict]] = {}
    errors: dict[str, str] = {}

    def note(verdict: FilterVerdict) -> None:
        verdicts.setdefault(verdict.table_id, []).append(verdict)

    survivors_parse: list[tuple[RawXmlTable, ReviewTable]] = []
    for raw in raws:
        tallies["prefilter"].entered += 1
        try:
            verdict = prefilter_xml(raw)
        except MalformedXmlError as err:
            tallies["prefilter"].errored += 1
            errors[raw.table_id] = f"malformed-xml: {err}"
            continue
        note(verdict)
        if not verdict.passed:
            tallies["prefilter"].drop(verdict.failed_filters[0])
            continue
        tallies["prefilter"].out += 1

        tallies["parse"].entered += 1
        try:
            table = parse_xml_table(raw)
        except TableParseError as err:
            note(FilterVerdict.fail(raw.table_id, "parse", [err.filter_id]))
            tallies["parse"].drop(err.filter_id)
            logger.info("parse failure for %s: %s", raw.table_id, err)
            continue
        except MalformedXmlError as err:
            tallies["parse"].errored += 1
            errors[raw.table_id] = f"malformed-xml: {err}"
            continue
        note(FilterVerdict.ok(raw.table_id, "parse"))
        tallies["parse"].out += 1
        survivors_parse.append((raw, table))

    survivors_metadata: list[ReviewTable] = []
    for _, table in survivors_parse:
        tallies["metadata"].entered += 1
        enriched, verdict = enrich_metadata(table, resolver)
        note(verdict)
        if not verdict.passed:
            tallies["metadata"].drop(verdict.failed_filters[0])
            continue
        tallies["metadata"].out += 1
        survivors_metadata.append(enriched)

    # canonical JSON inputs re-enter the cascade at grounding
    survivors_metadata.extend(json_tables)

    require_fulltext = strictness is Strictness.HIGH
    survivors_grounding: list[ReviewTable] = []
    row_drops: dict[str, dict[str, int]] = {"metadata": {}, "grounding": {}, "final": {}, "parse": {}}
    column_drops: dict[str, int] = {}
    for table in survivors_metadata:
        for _ in table.provenance.get("metadata_unmatched", []):
            row_drops["metadata"]["unmatched-citation"] = (
                row_drops["metadata"].get("unmatched-citation", 0) + 1
            )
        for _ in table.provenance.get("dropped_rows", []):
            row_drops["parse"]["row-parse-failure"] = row_drops["parse"].get("row-parse-failure", 0) + 1

    for table in survivors_metadata:
        tallies["grounding"].entered += 1
        before_cols = set(table.provenance.get("column_drops", {}))
        before_rows = set(table.provenance.get("grounding_row_drops", []))
        grounded, verdict = ground_to_fulltext(table, require_fulltext=require_fulltext)
        for aspect in set(grounded.provenance.get("column_drops", {})) - before_cols:
            column_drops["math-column"] = column_drops.get("math-column", 0) + 1
        for _ in set(grounded.provenance.get("grounding_row_drops", [])) - before_rows:
            row_drops["grounding"]["no-fulltext"] = row_drops["grounding"].get("no-fulltext", 0) + 1
        note(verdict)
        if not verdict.passed:
            tallies["grounding"].drop(verdict.failed_filters[0])
            continue
        tallies["grounding"].out += 1
        survivors_grounding.append(grounded)

    seen_signatures: dict[str, str] = {}
    final_tables: list[ReviewTable] = []
    for table in sorted(survivors_grounding, key=lambda t: t.table_id):
        tallies["final"].entered += 1
        before_dedup = set(table.provenance.get("dedup_row_drops", []))
        finished, verdict = final_filter(table, strictness, seen_signatures)
        for _ in set(finished.provenance.get("dedup_row_drops", [])) - before_dedup:
            row_drops["final"]["duplicate-row"] = row_drops["final"].get("duplicate-row", 0) + 1
        note(verdict)
        if not verdict.passed:
            tallies["final"].drop(verdict.failed_filters[0])
            continue
        tallies["final"].out += 1
        final_tables.append(finished)

    funnel = {
        "strictness": strictness.value,
        "stages": {stage: tallies[stage].as_dict() for stage in STAGES},
        "row_drops": {k: dict(sorted(v.items())) for k, v in row_drops.items() if v},
        "column_drops": dict(sorted(column_drops.items())),
        "errors": dict(sorted(errors.items())),
        "notes": {"math_symbol_policy": MATH_POLICY_NOTE},
    }

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for table in final_tables:
            dump_table(table, out_dir / f"{table.table_id}.json")
        (out_dir / "funnel.json").write_text(
            json.dumps(funnel, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    return PipelineResult(tables=final_tables, funnel=funnel, verdicts=verdicts)

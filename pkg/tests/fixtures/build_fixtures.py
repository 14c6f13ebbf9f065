#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Run from the repository root:

    python3 tests/fixtures/build_fixtures.py

Outputs:
  tests/fixtures/corpus25/   25 canonical corpus tables with hand-planned
                             row/aspect counts (stats frozen in the tests)
  tests/fixtures/curation20/ 20 hand-labeled raw XML tables plus labels.json
                             and resolver.json for the curation pipeline
"""

from __future__ import annotations

import json
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parents[1] / "src"))

from digesttab.model import InTextReference, PaperRecord, make_table, serialize_table  # noqa: E402

ROWS_PER_TABLE = [2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 5, 5, 5, 5, 6, 6, 6, 7, 7, 8, 8, 9, 10, 11, 12]
ASPECTS_PER_TABLE = [2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 4, 4, 4, 4, 4, 5, 5, 5, 6, 6, 7, 8, 9, 13]

# (aspect name, value kind); tables take the first k entries
ASPECT_TEMPLATES = [
    ("Dataset", "entity"),
    ("Size", "numeric"),
    ("Access", "category"),
    ("Multilingual", "boolean"),
    ("Collection Process", "text"),
    ("Model", "entity"),
    ("Parameters", "numeric"),
    ("License", "category"),
    ("Public", "boolean"),
    ("Evaluation Notes", "text"),
    ("Domain", "entity"),
    ("Year", "numeric"),
    ("Modality", "category"),
]

CATEGORY_CYCLE = ["Open", "Proprietary", "Mixed"]
BOOLEAN_CYCLE = ["✓", "✗"]
ENTITY_STEMS = ["Vision", "Language", "Speech", "Graph", "Robotics", "Climate", "Genome"]


def cell_value(kind: str, table_index: int, row_index: int, aspect_index: int) -> str:
    salt = table_index * 31 + row_index * 7 + aspect_index
    if kind == "entity":
        stem = ENTITY_STEMS[salt % len(ENTITY_STEMS)]
        return f"{stem} Benchmark Suite {salt}"
    if kind == "numeric":
        return f"{10_000 + salt * 37:,}"
    if kind == "category":
        return CATEGORY_CYCLE[salt % len(CATEGORY_CYCLE)]
    if kind == "boolean":
        return BOOLEAN_CYCLE[salt % len(BOOLEAN_CYCLE)]
    return (
        "collected via various crowdsourcing platforms with manual quality "
        f"control in round {salt}"
    )


def build_corpus25(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    next_paper = 1
    for t in range(25):
        n_rows = ROWS_PER_TABLE[t]
        n_aspects = ASPECTS_PER_TABLE[t]
        table_id = f"fx{t + 1:03d}"

        cite_ids = []
        for r in range(n_rows):
            if t in (0, 1, 2) and r == 0:
                cite_ids.append("shared-a")
            elif t in (3, 4) and r == 0:
                cite_ids.append("shared-b")
            else:
                cite_ids.append(f"p{next_paper:03d}")
                next_paper += 1

        aspects = [name for name, _ in ASPECT_TEMPLATES[:n_aspects]]
        kinds = [kind for _, kind in ASPECT_TEMPLATES[:n_aspects]]
        grid = [
            [cell_value(kind, t, r, a) for a, kind in enumerate(kinds)]
            for r in range(n_rows)
        ]

        papers = {}
        for r, cite in enumerate(cite_ids):
            papers[cite] = PaperRecord(
                cite_id=cite,
                title=f"Study {cite}: systems for comparative analysis",
                abstract=(
                    f"We present {cite}, a study of comparative table synthesis. "
                    "The work reports datasets, methods, and availability in a "
                    "form suitable for cross-paper comparison."
                ),
                full_text=(
                    "1 Introduction\n"
                    f"This paper ({cite}) studies comparative synthesis of research tables. "
                    f"The dataset described here is called {cell_value('entity', t, r, 0)} and "
                    f"contains {cell_value('numeric', t, r, 1)} examples. "
                    f"Access to the resource is {cell_value('category', t, r, 2)}. "
                    "2 Method\n"
                    "We describe collection, annotation, and release procedures in detail, "
                    "including license terms and evaluation notes for downstream users.\n"
                    "3 Results\n"
                    "The resource supports literature review table construction tasks."
                ),
                external_id=f"S2-{cite}",
            )

        table = make_table(
            table_id,
            cite_ids,
            aspects,
            grid,
            source_paper_id=f"2301.{t + 1:05d}",
            caption=(
                f"Comparison of {n_rows} studies on shared aspects such as dataset, "
                f"size and access (group {table_id})."
            ),
            in_text_refs=[
                InTextReference(
                    section="Related Work",
                    text=f"Table {t + 1} summarizes the studies compared in group {table_id}.",
                )
            ],
            papers=papers,
        )
        (out_dir / f"{table_id}.json").write_text(serialize_table(table), encoding="utf-8")
    print(f"corpus25: wrote 25 tables to {out_dir}")


# -- curation fixtures --------------------------------------------------------

PAD = (
    "uses a pretrained transformer encoder with document level attention and "
    "careful preprocessing of section markers"
)


def tabular(rows: list[list[tuple[str, str]]]) -> str:
    parts = ["<tabular>"]
    for row in rows:
        parts.append("<tr>")
        for tag, text in row:
            parts.append(f"<{tag}>{text}</{tag}>")
        parts.append("</tr>")
    parts.append("</tabular>")
    return "".join(parts)


def xml_table(table_id: str, paper: str, body: str, caption: str | None = None) -> str:
    caption_el = f"<caption>{caption}</caption>" if caption else ""
    return f'<table id="{table_id}" paper="{paper}">{caption_el}{body}</table>'


def th_row(*names: str) -> list[tuple[str, str]]:
    return [("th", n) for n in names]


def td_row(*values: str) -> list[tuple[str, str]]:
    return [("td", v) for v in values]


def build_curation20(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    fixtures: dict[str, str] = {}
    labels: dict[str, dict] = {}

    def add(table_id: str, xml: str, *, high: str | None, medium: str | None) -> None:
        """high/medium: None = survives, else "stage:filter" or "error:kind"."""
        fixtures[table_id] = xml

        def split(value):
            if value is None:
                return {"survives": True, "stage": None, "filter": None}
            stage, filter_id = value.split(":", 1)
            return {"survives": False, "stage": stage, "filter": filter_id}

        labels[table_id] = {"high": split(high), "medium": split(medium)}

    # 1: minimal clean table, survives everything
    good_rows = [
        th_row("Model", "Task", "Notes"),
        td_row("BERT base encoder {{cite:c01}}", "question answering over articles", PAD),
        td_row("GPT decoder variant {{cite:c02}}", "summarization of reports", PAD + " two"),
        td_row("T5 sequence model {{cite:c03}}", "translation of manuals", PAD + " three"),
    ]
    add("f01-good-basic", xml_table("f01-good-basic", "src-001", tabular(good_rows)), high=None, medium=None)

    # 2: tiny body, below the character floor
    short_rows = [
        th_row("A", "B"),
        td_row("x {{cite:s01}}", "y"),
        td_row("z {{cite:s02}}", "w"),
    ]
    add("f02-short-xml", xml_table("f02-short-xml", "src-002", tabular(short_rows)),
        high="prefilter:char-length", medium="prefilter:char-length")

    # 3: oversized body, above the character ceiling
    long_rows = [
        th_row("Model", "Notes"),
        td_row("one {{cite:c04}}", "lorem " * 2600),
        td_row("two {{cite:c05}}", PAD),
    ]
    add("f03-long-xml", xml_table("f03-long-xml", "src-003", tabular(long_rows)),
        high="prefilter:char-length", medium="prefilter:char-length")

    # 4: no cell tags at all
    add(
        "f04-no-cells",
        xml_table("f04-no-cells", "src-004", "<tabular>" + (PAD + " ") * 5 + "</tabular>"),
        high="prefilter:no-cell-tags",
        medium="prefilter:no-cell-tags",
    )

    # 5: only one distinct citation
    one_cite_rows = [
        th_row("Model", "Task", "Notes"),
        td_row("single cited row {{cite:c06}}", "classification of images", PAD),
        td_row("an uncited baseline row", "detection of objects", PAD + " two"),
        td_row("another uncited row", "segmentation of scenes", PAD + " three"),
    ]
    add("f05-one-citation", xml_table("f05-one-citation", "src-005", tabular(one_cite_rows)),
        high="prefilter:lt2-citations", medium="prefilter:lt2-citations")

    # 6: a single row in total
    one_row = [
        td_row("alpha {{cite:c07}} {{cite:c08}} " + PAD, "beta " + PAD, "gamma " + PAD),
    ]
    add("f06-one-row", xml_table("f06-one-row", "src-006", tabular(one_row)),
        high="prefilter:lt2-rows", medium="prefilter:lt2-rows")

    # 7: a single column
    one_col = [
        [("th", "Method")],
        [("td", "first entry {{cite:c09}} " + PAD)],
        [("td", "second entry {{cite:c10}} " + PAD)],
        [("td", "third entry " + PAD)],
    ]
    add("f07-one-col", xml_table("f07-one-col", "src-007", tabular(one_col)),
        high="prefilter:lt2-cols", medium="prefilter:lt2-cols")

    # 8: citations spread over two columns (papers as values, not rows)
    multi_col = [
        th_row("Approach", "Task", "Compared against"),
        td_row("contrastive pretraining {{cite:c11}}", "retrieval of passages", "earlier work " + PAD),
        td_row("masked modeling {{cite:c12}}", "ranking of documents", "see also {{cite:c13}} " + PAD),
    ]
    add("f08-multi-col-cites", xml_table("f08-multi-col-cites", "src-008", tabular(multi_col)),
        high="prefilter:multi-column-citations", medium="prefilter:multi-column-citations")

    # 9: two header rows; the
    # flattened headers survive only under the relaxed filter set
    merged = [
        th_row("Model", "Dataset", "Notes"),
        th_row("Name", "Size", "Comments"),
        td_row("encoder stack {{cite:c14}}", "forty thousand examples", PAD),
        td_row("decoder stack {{cite:c15}}", "eighty thousand examples", PAD + " two"),
    ]
    add("f09-merged-header", xml_table("f09-merged-header", "src-009", tabular(merged)),
        high="final:merged-header", medium=None)

    # 10: one row lacks a citation and falls back to the source paper
    ncr = [
        th_row("Model", "Task", "Notes"),
        td_row("cited model one {{cite:c16}}", "parsing of programs", PAD),
        td_row("cited model two {{cite:c17}}", "analysis of logs", PAD + " two"),
        td_row("the present system", "joint parsing and analysis", PAD + " three"),
    ]
    add("f10-citation-free-row", xml_table("f10-citation-free-row", "src-010", tabular(ncr)),
        high="final:citation-free-row", medium=None)

    # 11: two rows lack citations; too many even for the relaxed set
    ncr2 = [
        th_row("Model", "Task", "Notes"),
        td_row("cited model one {{cite:c18}}", "recognition of speech", PAD),
        td_row("cited model two {{cite:c19}}", "synthesis of speech", PAD + " two"),
        td_row("our first variant", "joint recognition", PAD + " three"),
        td_row("our second variant", "joint synthesis", PAD + " four"),
    ]
    add("f11-two-citation-free", xml_table("f11-two-citation-free", "src-011", tabular(ncr2)),
        high="final:citation-free-row", medium="final:citation-free-row")

    # 12: one float column is dropped, enough aspects remain
    floats_ok = [
        th_row("Model", "Task", "Accuracy", "Notes"),
        td_row("probing classifier {{cite:c20}}", "intent detection", "0.87", PAD),
        td_row("linear baseline {{cite:c21}}", "slot filling", "0.91", PAD + " two"),
    ]
    add("f12-float-column-ok", xml_table("f12-float-column-ok", "src-012", tabular(floats_ok)),
        high=None, medium=None)

    # 13: dropping the float columns leaves a single aspect
    floats_fatal = [
        th_row("Model", "Score A", "Score B"),
        td_row("metric learner {{cite:c22}} " + PAD, "0.71", "0.64"),
        td_row("margin learner {{cite:c23}} " + PAD, "0.75", "0.69"),
    ]
    add("f13-float-column-fatal", xml_table("f13-float-column-fatal", "src-013", tabular(floats_fatal)),
        high="grounding:lt2-aspects", medium="grounding:lt2-aspects")

    # 14: integer year column must be retained
    years = [
        th_row("Model", "Year", "Notes"),
        td_row("first release {{cite:c24}}", "2019", PAD),
        td_row("second release {{cite:c25}}", "2021", PAD + " two"),
    ]
    add("f14-year-column", xml_table("f14-year-column", "src-014", tabular(years)),
        high=None, medium=None)

    # 15: one row's paper has no public full text; the table still stands
    nft_ok = [
        th_row("Model", "Task", "Notes"),
        td_row("open weights model {{cite:c26}}", "tagging of entities", PAD),
        td_row("released pipeline {{cite:c27}}", "linking of entities", PAD + " two"),
        td_row("closed system {{cite:c30}}", "resolution of entities", PAD + " three"),
    ]
    add("f15-no-fulltext-row-ok", xml_table("f15-no-fulltext-row-ok", "src-015", tabular(nft_ok)),
        high=None, medium=None)

    # 16: losing the textless row leaves one row under the strict set only
    nft_fatal = [
        th_row("Model", "Task", "Notes"),
        td_row("grounded system {{cite:c28}}", "reading of tables", PAD),
        td_row("ungrounded system {{cite:c33}}", "writing of tables", PAD + " two"),
    ]
    add("f16-no-fulltext-fatal", xml_table("f16-no-fulltext-fatal", "src-016", tabular(nft_fatal)),
        high="grounding:lt2-rows", medium=None)

    # 17: one citation cannot be resolved to metadata at all
    unresolved = [
        th_row("Model", "Task", "Notes"),
        td_row("known system {{cite:c29}}", "indexing of corpora", PAD),
        td_row("unknown system {{cite:c36}}", "sampling of corpora", PAD + " two"),
    ]
    add("f17-unresolved-citation", xml_table("f17-unresolved-citation", "src-017", tabular(unresolved)),
        high="metadata:lt2-matched-citations", medium="metadata:lt2-matched-citations")

    # 18: same content as f01 with different citations; exact duplicate
    dup_rows = [
        th_row("Model", "Task", "Notes"),
        td_row("BERT base encoder {{cite:c40}}", "question answering over articles", PAD),
        td_row("GPT decoder variant {{cite:c41}}", "summarization of reports", PAD + " two"),
        td_row("T5 sequence model {{cite:c42}}", "translation of manuals", PAD + " three"),
    ]
    add("f18-dup-basic", xml_table("f18-dup-basic", "src-018", tabular(dup_rows)),
        high="final:duplicate-table", medium="final:duplicate-table")

    # 19: two identical rows (same citation, same values) are merged
    dup_row_rows = [
        th_row("Model", "Task", "Notes"),
        td_row("distinct model {{cite:c43}}", "ranking of answers", PAD),
        td_row("another model {{cite:c44}}", "scoring of answers", PAD + " two"),
        td_row("repeated model {{cite:c45}}", "filtering of answers", PAD + " three"),
        td_row("repeated model {{cite:c45}}", "filtering of answers", PAD + " three"),
    ]
    add("f19-duplicate-rows", xml_table("f19-duplicate-rows", "src-019", tabular(dup_row_rows)),
        high=None, medium=None)

    # 20: not even well formed XML
    add("f20-malformed", "<table id='f20-malformed'><tabular><tr><td>broken",
        high="error:malformed-xml", medium="error:malformed-xml")

    for table_id, xml in fixtures.items():
        (out_dir / f"{table_id}.xml").write_text(xml, encoding="utf-8")
    (out_dir / "labels.json").write_text(
        json.dumps(labels, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    # resolver records: every cited id plus source papers; two ids lack
    # full texts on purpose and c36 is deliberately absent
    records: dict[str, dict] = {}
    cited = [f"c{i:02d}" for i in range(1, 46)] + [f"s{i:02d}" for i in range(1, 3)]
    cited += [f"src-{i:03d}" for i in range(1, 20)]
    for cid in cited:
        if cid == "c36":
            continue
        entry = {
            "title": f"Resolved paper {cid}",
            "abstract": f"Abstract for paper {cid} describing the system in brief.",
            "external_id": f"S2-{cid}",
        }
        if cid not in ("c30", "c33"):
            entry["full_text"] = (
                "1 Introduction\n"
                f"Full text for paper {cid}. The system is described with enough detail "
                "to ground table values.\n2 Method\nDetails follow."
            )
        records[cid] = entry
    (out_dir / "resolver.json").write_text(
        json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    # sanity: fixtures meant to pass the length gate must actually pass it
    for table_id, xml in fixtures.items():
        if table_id in ("f02-short-xml", "f03-long-xml", "f20-malformed"):
            continue
        root = ET.fromstring(xml)
        body = root.find(".//tabular")
        length = len(ET.tostring(body, encoding="unicode"))
        assert 400 <= length <= 15000, f"{table_id}: tabular length {length} out of range"
    print(f"curation20: wrote {len(fixtures)} fixtures to {out_dir}")


if __name__ == "__main__":
    build_corpus25(HERE / "corpus25")
    build_curation20(HERE / "curation20")

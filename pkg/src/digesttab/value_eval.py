"""Value generation evaluated in isolation.

Feeding the reference schema into value generation gives every reference
cell a generated counterpart, so cell accuracy can be measured without
trusting schema alignment. Three context settings mirror the generation
regimes: column names only, plus the reference caption, plus in-text
references.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .alignment import SchemaAligner, ScorerKind
from .errors import (
    GenerationFailedError,
    MalformedResponseError,
    SchemaMismatchError,
    ValidationError,
)
from .generation import CellAnswer, ContextKind, GenerationContext, TableGenerator
from .model import CellValue, ReviewTable
from .stats import cohen_kappa

VALUE_LABELS = ("complete", "partial", "none")


class ValueEvalSetting(str, Enum):
    COLUMN_NAMES = "column-names"
    CAPTION_CONTEXT = "caption-context"
    ALL_CONTEXT = "all-context"


def context_for_setting(ref: ReviewTable, setting: ValueEvalSetting) -> GenerationContext:
    if setting is ValueEvalSetting.COLUMN_NAMES:
        return GenerationContext(kind=ContextKind.BASELINE)
    if setting is ValueEvalSetting.CAPTION_CONTEXT:
        if not ref.caption:
            raise ValidationError("caption-context setting needs the reference caption")
        return GenerationContext(kind=ContextKind.GOLD_CAPTION, caption=ref.caption)
    if not ref.caption or not ref.in_text_refs:
        raise ValidationError("all-context setting needs caption and in-text references")
    return GenerationContext(
        kind=ContextKind.GOLD_CAPTION_REFS, caption=ref.caption, in_text_refs=ref.in_text_refs
    )


@dataclass(frozen=True)
class ValuePairJudgment:
    row: str
    aspect: str
    gold: CellValue
    generated: CellValue
    auto_scores: Mapping[str, float]
    human_label: str | None = None
    table_id: str = ""

    def cell_id(self) -> str:
        return f"{self.table_id}:{self.row}:{self.aspect}"


def generate_values_for_reference(
    generator: TableGenerator, ref: ReviewTable, setting: ValueEvalSetting
) -> ReviewTable:
    """Fill the reference table's exact grid with generated values.

    Generation failures leave the cell empty; rows are never dropped, so
    the output always scores against the full reference grid.
    """
    for key in ref.row_keys:
        record = ref.papers.get(key)
        if record is None or not record.full_text:
            raise ValidationError(f"reference row {key!r} has no full text")
    context = context_for_setting(ref, setting)

    cells: dict[tuple[str, str], CellValue] = {}
    failures: list[str] = []
    for aspect in ref.aspects:
        query = generator.build_value_query(aspect, context)
        answers: list[CellAnswer] = []
        for key in ref.row_keys:
            try:
                answers.append(generator.generate_value(ref.papers[key], query))
            except (GenerationFailedError, MalformedResponseError):
                failures.append(f"{key}/{aspect}")
                answers.append(CellAnswer.none())
        column = generator.rewrite_column(answers, aspect)
        for key, cell in zip(ref.row_keys, column):
            cells[(key, aspect)] = cell

    provenance: dict[str, Any] = {
        "mode": "value-eval",
        "setting": setting.value,
        "source_table": ref.table_id,
    }
    if failures:
        provenance["value_failures"] = sorted(failures)
    return ReviewTable(
        table_id=ref.table_id,
        source_paper_id=ref.source_paper_id,
        caption=None,
        in_text_refs=(),
        row_keys=ref.row_keys,
        aspects=ref.aspects,
        cells=cells,
        papers=dict(ref.papers),
        provenance=provenance,
    )


def score_values(
    ref: ReviewTable,
    gen: ReviewTable,
    scorers: Sequence[ScorerKind],
    aligner: SchemaAligner | None = None,
) -> list[ValuePairJudgment]:
    """One judgment per cell. Empty generated values score 0 on every
    scorer; cells whose gold value is empty are left unscored and excluded
    from summary denominators."""
    if tuple(ref.aspects) != tuple(gen.aspects) or tuple(ref.row_keys) != tuple(gen.row_keys):
        raise SchemaMismatchError("reference and generated tables must share schema and rows")
    if any(s is ScorerKind.LLM for s in scorers):
        raise ValidationError("the LLM aligner is not a value scorer")
    aligner = aligner or SchemaAligner()

    judgments = []
    for key in ref.row_keys:
        for aspect in ref.aspects:
            gold = ref.cells[(key, aspect)]
            generated = gen.cells[(key, aspect)]
            if gold.empty:
                scores: dict[str, float] = {}
            elif generated.empty:
                scores = {s.value: 0.0 for s in scorers}
            else:
                scores = {
                    s.value: aligner.score_pair(gold.text, generated.text, s) for s in scorers
                }
            judgments.append(
                ValuePairJudgment(
                    row=key,
                    aspect=aspect,
                    gold=gold,
                    generated=generated,
                    auto_scores=scores,
                    table_id=ref.table_id,
                )
            )
    return judgments


def summarize_judgments(judgments: Sequence[ValuePairJudgment]) -> dict[str, Any]:
    scored = [j for j in judgments if j.auto_scores]
    excluded = len(judgments) - len(scored)
    means: dict[str, float] = {}
    if scored:
        names = sorted({name for j in scored for name in j.auto_scores})
        for name in names:
            values = [j.auto_scores[name] for j in scored if name in j.auto_scores]
            means[name] = sum(values) / len(values)
    return {
        "n_cells": len(judgments),
        "n_scored": len(scored),
        "n_gold_empty_excluded": excluded,
        "mean_scores": means,
    }


def judgment_to_json(judgment: ValuePairJudgment) -> dict[str, Any]:
    return {
        "table_id": judgment.table_id,
        "row": judgment.row,
        "aspect": judgment.aspect,
        "gold": judgment.gold.text,
        "gold_empty": judgment.gold.empty,
        "generated": judgment.generated.text,
        "generated_empty": judgment.generated.empty,
        "auto_scores": dict(judgment.auto_scores),
        "human_label": judgment.human_label,
    }


# -- annotation export / import ---------------------------------------------


def blind_setting_id(setting: ValueEvalSetting) -> str:
    return "set-" + hashlib.sha256(setting.value.encode()).hexdigest()[:6]


def export_value_annotations(
    judgments_by_setting: Mapping[ValueEvalSetting, Sequence[ValuePairJudgment]],
) -> tuple[str, dict[str, str]]:
    """Annotation CSV with blinded setting labels; gold-empty cells are not
    exported. Returns (csv_text, blind-id -> setting key)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["cell_id", "gold", "generated", "setting_blind_id", "label"])
    key: dict[str, str] = {}
    for setting, judgments in judgments_by_setting.items():
        blind = blind_setting_id(setting)
        key[blind] = setting.value
        for judgment in judgments:
            if judgment.gold.empty:
                continue
            writer.writerow(
                [judgment.cell_id(), judgment.gold.text, judgment.generated.text, blind, ""]
            )
    return buffer.getvalue(), key


@dataclass
class ValueAnnotationReport:
    per_setting: dict[str, dict[str, Any]]
    kappa: float | None
    n_annotators: int
    label_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "per_setting": self.per_setting,
            "cohen_kappa": self.kappa,
            "n_annotators": self.n_annotators,
        }


def import_value_annotations(
    annotator_files: Sequence[str],
    setting_key: Mapping[str, str] | None = None,
) -> ValueAnnotationReport:
    """Pool labels across annotators into per-setting proportions; with two
    or more annotators, agreement is computed over cells they share."""
    if not annotator_files:
        raise ValidationError("no annotation files supplied")
    per_annotator: list[dict[tuple[str, str], str]] = []
    for text in annotator_files:
        labels: dict[tuple[str, str], str] = {}
        for row in csv.DictReader(io.StringIO(text)):
            label = (row.get("label") or "").strip().casefold()
            if label not in VALUE_LABELS:
                raise ValidationError(f"label {row.get('label')!r} not in {VALUE_LABELS}")
            labels[(row["cell_id"], row["setting_blind_id"])] = label
        per_annotator.append(labels)

    counts: dict[str, dict[str, int]] = {}
    for labels in per_annotator:
        for (_, blind), label in labels.items():
            setting = (setting_key or {}).get(blind, blind)
            bucket = counts.setdefault(setting, {l: 0 for l in VALUE_LABELS})
            bucket[label] += 1

    per_setting: dict[str, dict[str, Any]] = {}
    for setting, bucket in sorted(counts.items()):
        total = sum(bucket.values())
        per_setting[setting] = {
            "counts": dict(bucket),
            "proportions": {label: bucket[label] / total for label in VALUE_LABELS},
            "n": total,
        }

    kappa = None
    if len(per_annotator) >= 2:
        first, second = per_annotator[0], per_annotator[1]
        shared = sorted(set(first) & set(second))
        if shared:
            kappa = cohen_kappa([first[k] for k in shared], [second[k] for k in shared])

    return ValueAnnotationReport(
        per_setting=per_setting,
        kappa=kappa,
        n_annotators=len(per_annotator),
        label_counts=counts,
    )


def render_value_report_markdown(report: ValueAnnotationReport) -> str:
    lines = [
        "| Setting | Complete | Partial | None |",
        "|---|---|---|---|",
    ]
    for setting, entry in report.per_setting.items():
        proportions = entry["proportions"]
        bucket = entry["counts"]
        lines.append(
            "| %s | %.2f%% (%d) | %.2f%% (%d) | %.2f%% (%d) |"
            % (
                setting,
                proportions["complete"] * 100,
                bucket["complete"],
                proportions["partial"] * 100,
                bucket["partial"],
                proportions["none"] * 100,
                bucket["none"],
            )
        )
    if report.kappa is not None:
        lines.append(f"\nInter-annotator agreement (Cohen's kappa): {report.kappa:.2f}")
    return "\n".join(lines) + "\n"


def write_judgments_jsonl(judgments: Sequence[ValuePairJudgment], path: str | Path) -> Path:
    import json

    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for judgment in judgments:
            handle.write(json.dumps(judgment_to_json(judgment), ensure_ascii=False) + "\n")
    return path

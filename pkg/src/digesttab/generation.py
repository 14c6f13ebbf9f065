"""Joint and decomposed table generation.

Joint mode asks for schema and values in one call. Decomposed mode asks
for a schema first, then fills each cell by document-grounded QA over the
paper's full text, then rewrites each column for consistent style. Five
context regimes condition the schema step: none, a generated caption, the
gold caption, the gold caption plus in-text references, or five retrieved
exemplar tables.

Two retry mechanisms coexist and must not be confused: semantic retries
reissue a prompt whose output was unusable (format or count mismatch),
while value-generation retries rephrase the question when the model finds
no answer.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Sequence

from . import prompts
from .errors import (
    GenerationFailedError,
    MalformedResponseError,
    ValidationError,
)
from .gateway import ChatMessage, ChatRequest, ModelGateway, parallel_map
from .model import CellValue, InTextReference, PaperRecord, ReviewTable, Schema, validate_table

DEFAULT_BATCH_SIZE = 20  # abstracts per generation batch
DEFAULT_RETRY_BUDGET = 5  # semantic retries after the first attempt
VALUE_RETRY_VARIANTS = 4
MAX_EXCERPTS = 10
MAX_EXCERPT_WORDS = 800


class ContextKind(str, Enum):
    BASELINE = "baseline"
    GENERATED_CAPTION = "gen-caption"
    GOLD_CAPTION = "gold-caption"
    GOLD_CAPTION_REFS = "gold-caption-refs"
    FEW_SHOT = "fewshot"


@dataclass(frozen=True)
class GenerationContext:
    kind: ContextKind
    caption: str | None = None
    in_text_refs: tuple[InTextReference, ...] | None = None
    exemplars: tuple[ReviewTable, ...] | None = None

    def __post_init__(self):
        if self.kind is ContextKind.GOLD_CAPTION and not self.caption:
            raise ValidationError("gold-caption context requires a caption")
        if self.kind is ContextKind.GOLD_CAPTION_REFS and (not self.caption or not self.in_text_refs):
            raise ValidationError("gold-caption-refs context requires caption and in-text references")
        if self.kind is ContextKind.FEW_SHOT:
            if not self.exemplars or len(self.exemplars) != 5:
                raise ValidationError("few-shot context requires exactly 5 exemplar tables")


@dataclass(frozen=True)
class ValueQuery:
    aspect: str
    description: str | None
    question: str
    retry_variants: tuple[str, ...]

    def __post_init__(self):
        if not self.question.strip():
            raise ValidationError("value query question is empty")
        if len(self.retry_variants) != VALUE_RETRY_VARIANTS:
            raise ValidationError(f"expected {VALUE_RETRY_VARIANTS} retry variants")


@dataclass(frozen=True)
class CellAnswer:
    answer: str
    excerpts: tuple[str, ...]
    empty: bool

    @staticmethod
    def none() -> "CellAnswer":
        return CellAnswer(answer="", excerpts=(), empty=True)


@dataclass(frozen=True)
class ModelRoles:
    """Which model id serves each pipeline step."""

    schema: str = "schema-model"
    value: str = "value-model"
    rewrite: str = "rewrite-model"
    describe: str = "describe-model"
    decontext: str = "decontext-model"
    caption: str = "caption-model"


class _FormatError(Exception):
    """Model output did not match the requested shape; retryable."""


def _extract_json(text: str) -> Any:
    fenced = re.search(r"```(?:json|List)?\s*(.*?)```", text, flags=re.DOTALL)
    candidates = [fenced.group(1)] if fenced else []
    candidates.append(text)
    decoder = json.JSONDecoder()
    for candidate in candidates:
        for match in re.finditer(r"[\[{]", candidate):
            try:
                value, _ = decoder.raw_decode(candidate[match.start():])
                return value
            except json.JSONDecodeError:
                continue
    raise _FormatError(f"no JSON value found in: {text[:120]!r}")


def _parse_schema_list(text: str, expected: int) -> list[str]:
    value = _extract_json(text)
    if isinstance(value, dict):
        items = list(value.keys())
    elif isinstance(value, list):
        items = [str(v) for v in value]
    else:
        raise _FormatError("schema output is neither a list nor an object")
    items = [i.strip() for i in items if str(i).strip()]
    if len(items) != expected:
        raise _FormatError(f"asked for {expected} aspects, got {len(items)}")
    if len(set(items)) != len(items):
        raise _FormatError("aspect names are not distinct")
    if any(i == "References" for i in items):
        raise _FormatError("'References' is reserved for row identity")
    return items


def _parse_joint_table(text: str, n_aspects: int, n_papers: int) -> dict[str, list[str]]:
    value = _extract_json(text)
    if not isinstance(value, dict):
        raise _FormatError("joint output is not a JSON object")
    grid = {str(k).strip(): v for k, v in value.items() if str(k).strip()}
    grid.pop("References", None)
    if len(grid) != n_aspects:
        raise _FormatError(f"asked for {n_aspects} columns, got {len(grid)}")
    out: dict[str, list[str]] = {}
    for aspect, column in grid.items():
        if not isinstance(column, list) or len(column) != n_papers:
            raise _FormatError(f"column {aspect!r} does not hold {n_papers} values")
        out[aspect] = [v if isinstance(v, str) else json.dumps(v, ensure_ascii=False) for v in column]
    return out


def _parse_value_answer(text: str) -> CellAnswer | None:
    """None means unusable output; an empty-object sentinel maps to the
    explicit empty answer."""
    try:
        value = _extract_json(text)
    except _FormatError:
        return None
    if isinstance(value, dict) and not value:
        return CellAnswer.none()
    if not isinstance(value, dict) or "answer" not in value:
        return None
    answer = value.get("answer")
    if not isinstance(answer, str) or not answer.strip():
        return CellAnswer.none()
    raw_excerpts = value.get("excerpts") or []
    if not isinstance(raw_excerpts, list):
        return None
    excerpts: list[str] = []
    words = 0
    for item in raw_excerpts[:MAX_EXCERPTS]:
        excerpt = str(item)
        remaining = MAX_EXCERPT_WORDS - words
        if remaining <= 0:
            break
        tokens = excerpt.split()
        if len(tokens) > remaining:
            excerpt = " ".join(tokens[:remaining])
            tokens = tokens[:remaining]
        excerpts.append(excerpt)
        words += len(tokens)
    return CellAnswer(answer=answer.strip(), excerpts=tuple(excerpts), empty=False)


def _fit_fulltext(full_text: str, focus: str, budget_chars: int) -> str:
    """Budgeted context: keep the document head, then pull in later
    paragraphs that mention the focus terms."""
    if len(full_text) <= budget_chars:
        return full_text
    head_budget = int(budget_chars * 0.75)
    head = full_text[:head_budget]
    tail = full_text[head_budget:]
    terms = [t.lower() for t in re.findall(r"[A-Za-z]{3,}", focus)]
    picked: list[str] = []
    remaining = budget_chars - head_budget
    for paragraph in tail.split("\n"):
        if remaining <= 0:
            break
        if terms and any(t in paragraph.lower() for t in terms):
            use = paragraph[:remaining]
            picked.append(use)
            remaining -= len(use) + 1
    return head + ("\n" + "\n".join(picked) if picked else "")


def _require_generation_inputs(papers: Sequence[PaperRecord], n_aspects: int) -> None:
    if len(papers) < 2:
        raise ValidationError("need at least two input papers")
    if n_aspects < 2:
        raise ValidationError("need at least two aspects")
    for paper in papers:
        if not paper.title.strip() or not (paper.abstract or "").strip():
            raise ValidationError(f"paper {paper.cite_id!r} lacks title or abstract")


def _chunks(items: Sequence[Any], size: int) -> list[list[Any]]:
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


class TableGenerator:
    def __init__(
        self,
        gateway: ModelGateway,
        roles: ModelRoles | None = None,
        *,
        batch_size: int = DEFAULT_BATCH_SIZE,
        retry_budget: int = DEFAULT_RETRY_BUDGET,
        retry_variants_enabled: int = VALUE_RETRY_VARIANTS,
        column_batch_size: int | None = None,
        max_tokens: int = 2048,
        temperature: float = 0.0,
        max_fulltext_chars: int = 24000,
        max_workers: int = 1,
    ):
        if batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if retry_budget < 0:
            raise ValidationError("retry budget must be >= 0")
        if not 0 <= retry_variants_enabled <= VALUE_RETRY_VARIANTS:
            raise ValidationError("retry_variants_enabled must be 0..4")
        self.gateway = gateway
        self.roles = roles or ModelRoles()
        self.batch_size = batch_size
        self.retry_budget = retry_budget
        self.retry_variants_enabled = retry_variants_enabled
        self.column_batch_size = column_batch_size
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.max_fulltext_chars = max_fulltext_chars
        self.max_workers = max_workers
        self._semantic_retries = 0  # running tally of reissued prompts, for provenance

    # -- plumbing ---------------------------------------------------------

    def _request(self, model_id: str, user: str, *, system: str | None, attempt: int) -> ChatRequest:
        content = user
        if attempt > 0 and self.temperature == 0:
            # identical prompts would replay the cached failure; nudge the format
            content = user + prompts.FORMAT_REMINDER
        return ChatRequest(
            model_id=model_id,
            messages=(ChatMessage(role="user", content=content),),
            system=system,
            max_tokens=self.max_tokens,
            temperature=self.temperature,
            attempt=attempt,
        )

    def _retry_chat(
        self,
        model_id: str,
        user: str,
        parse: Callable[[str], Any],
        what: str,
        *,
        system: str | None = prompts.SYSTEM_PROMPT,
    ) -> tuple[Any, int]:
        last = ""
        for attempt in range(1 + self.retry_budget):
            if attempt > 0:
                self._semantic_retries += 1
            response = self.gateway.chat(self._request(model_id, user, system=system, attempt=attempt))
            try:
                return parse(response.text), attempt
            except _FormatError as err:
                last = str(err)
        raise GenerationFailedError(
            f"{what} abandoned after {self.retry_budget} retries: {last}"
        )

    # -- joint generation -------------------------------------------------

    def generate_joint(self, papers: Sequence[PaperRecord], n_aspects: int) -> ReviewTable:
        """One-call schema+values generation, batched over papers when the
        input exceeds the abstracts-per-batch threshold."""
        _require_generation_inputs(papers, n_aspects)
        batches = _chunks(list(papers), self.batch_size)
        aspects: list[str] | None = None
        rows: list[str] = []
        cells: dict[tuple[str, str], CellValue] = {}
        batch_names: list[list[str]] = []
        retries_used = 0

        for batch in batches:
            prompt = prompts.JOINT_TABLE_TEMPLATE.format(
                col_num=n_aspects,
                column_num=n_aspects,
                paper_num=len(batch),
                json_format=prompts.joint_json_format(len(batch), n_aspects),
                papers=prompts.format_papers(batch),
            )
            grid, attempts = self._retry_chat(
                self.roles.schema,
                prompt,
                lambda text, n=len(batch): _parse_joint_table(text, n_aspects, n),
                "joint table generation",
            )
            retries_used += attempts
            names = list(grid.keys())
            batch_names.append(names)
            if aspects is None:
                aspects = names
            for i, paper in enumerate(batch):
                rows.append(paper.cite_id)
                # later batches map onto the first batch's schema by position
                for aspect, name in zip(aspects, names):
                    cells[(paper.cite_id, aspect)] = CellValue.of(grid[name][i])

        assert aspects is not None
        provenance: dict[str, Any] = {
            "mode": "joint",
            "model": self.roles.schema,
            "prompts_version": prompts.PROMPTS_VERSION,
            "n_batches": len(batches),
            "retries_used": retries_used,
        }
        if len(batches) > 1 and any(names != aspects for names in batch_names):
            provenance["batch_aspect_names"] = batch_names
        table = ReviewTable(
            table_id="joint-" + _short_digest([p.cite_id for p in papers], n_aspects),
            source_paper_id=None,
            caption=None,
            in_text_refs=(),
            row_keys=tuple(rows),
            aspects=tuple(aspects),
            cells=cells,
            papers={p.cite_id: p for p in papers},
            provenance=provenance,
        )
        violations = validate_table(table)
        if violations:
            raise GenerationFailedError(f"joint generation produced an invalid table: {violations[0]}")
        return table

    # -- decomposed generation --------------------------------------------

    def generate_schema(
        self, papers: Sequence[PaperRecord], n_aspects: int, context: GenerationContext
    ) -> Schema:
        _require_generation_inputs(papers, n_aspects)
        if self.column_batch_size and n_aspects > self.column_batch_size:
            counts = [self.column_batch_size] * (n_aspects // self.column_batch_size)
            if n_aspects % self.column_batch_size:
                counts.append(n_aspects % self.column_batch_size)
            collected: list[str] = []
            for count in counts:
                chunk = self._generate_schema_single(papers, count, context, exclude=collected)
                for name in chunk:
                    candidate = name
                    serial = 1
                    while candidate in collected:
                        serial += 1
                        candidate = f"{name} ({serial})"
                    collected.append(candidate)
            return Schema(tuple(collected))
        return Schema(tuple(self._generate_schema_single(papers, n_aspects, context)))

    def _generate_schema_single(
        self,
        papers: Sequence[PaperRecord],
        n_aspects: int,
        context: GenerationContext,
        exclude: Sequence[str] = (),
    ) -> list[str]:
        papers_block = prompts.format_papers(papers)
        if context.kind is ContextKind.GENERATED_CAPTION:
            prompt = prompts.SCHEMA_WITH_GENERATED_CAPTION_TEMPLATE.format(
                num_columns=n_aspects, papers=papers_block
            )
        elif context.kind in (ContextKind.GOLD_CAPTION, ContextKind.GOLD_CAPTION_REFS):
            refs = context.in_text_refs if context.kind is ContextKind.GOLD_CAPTION_REFS else ()
            prompt = prompts.SCHEMA_WITH_CAPTION_TEMPLATE.format(
                caption=context.caption,
                in_text_block=prompts.format_in_text_block(refs or ()),
                num_columns=n_aspects,
                papers=papers_block,
            )
        elif context.kind is ContextKind.FEW_SHOT:
            prompt = prompts.SCHEMA_FEW_SHOT_TEMPLATE.format(
                exemplars=prompts.format_exemplars(context.exemplars or ()),
                num_columns=n_aspects,
                papers=papers_block,
            )
        else:
            prompt = prompts.SCHEMA_BASELINE_TEMPLATE.format(num_columns=n_aspects, papers=papers_block)
        if exclude:
            prompt += prompts.COLUMN_BATCH_EXCLUSION_NOTE.format(
                existing=json.dumps(list(exclude), ensure_ascii=False)
            )
        aspects, _ = self._retry_chat(
            self.roles.schema,
            prompt,
            lambda text: _parse_schema_list(text, n_aspects),
            f"schema generation ({context.kind.value})",
        )
        return aspects

    def generate_caption(self, papers: Sequence[PaperRecord]) -> str:
        _require_generation_inputs(papers, 2)
        prompt = prompts.CAPTION_GENERATION_TEMPLATE.format(papers=prompts.format_papers(papers))

        def parse(text: str) -> str:
            caption = " ".join(text.split())
            if not caption:
                raise _FormatError("caption is empty")
            return caption

        caption, _ = self._retry_chat(self.roles.caption, prompt, parse, "caption generation")
        return caption

    def build_value_query(self, aspect: str, context: GenerationContext) -> ValueQuery:
        """No-context regimes use a fixed question template; regimes with a
        caption first describe the column, then rewrite the description as
        a one-line question."""
        if not aspect.strip():
            raise ValidationError("aspect name is empty")
        if not context.caption:
            question = prompts.NO_CONTEXT_QUERY.format(column=aspect)
            variants = tuple(t.format(column=aspect) for t in prompts.NO_CONTEXT_RETRY_QUERIES)
            return ValueQuery(aspect=aspect, description=None, question=question, retry_variants=variants)

        if context.kind is ContextKind.GOLD_CAPTION_REFS and context.in_text_refs:
            describe_prompt = prompts.COLUMN_DESCRIPTION_WITH_REFS_TEMPLATE.format(
                column=aspect,
                caption=context.caption,
                in_text_ref=prompts.format_in_text_inline(context.in_text_refs),
            )
        else:
            describe_prompt = prompts.COLUMN_DESCRIPTION_TEMPLATE.format(
                column=aspect, caption=context.caption
            )

        def parse_nonempty(text: str) -> str:
            cleaned = " ".join(text.split())
            if not cleaned:
                raise _FormatError("empty response")
            return cleaned

        description, _ = self._retry_chat(
            self.roles.describe, describe_prompt, parse_nonempty, f"column description ({aspect})"
        )
        rewrite_prompt = f"{description}\n\n{prompts.DESCRIPTION_TO_QUESTION}"
        question, _ = self._retry_chat(
            self.roles.describe, rewrite_prompt, parse_nonempty, f"question rewrite ({aspect})"
        )
        variants = tuple(f"{question} {suffix}" for suffix in prompts.CONTEXT_RETRY_SUFFIXES)
        return ValueQuery(aspect=aspect, description=description, question=question, retry_variants=variants)

    def generate_value(self, paper: PaperRecord, query: ValueQuery) -> CellAnswer:
        """Document-grounded QA for one cell. An empty-object response is
        retried with each rephrased variant in order; if every attempt comes
        back empty the cell is an explicit empty value."""
        if not paper.full_text:
            raise ValidationError(f"paper {paper.cite_id!r} has no full text")
        questions = [query.question, *query.retry_variants[: self.retry_variants_enabled]]
        saw_empty = False
        saw_malformed = False
        for question in questions:
            body = _fit_fulltext(paper.full_text, f"{query.aspect} {question}", self.max_fulltext_chars)
            prompt = prompts.VALUE_QA_TEMPLATE.format(full_text=body, question=question)
            response = self.gateway.chat(
                self._request(self.roles.value, prompt, system=None, attempt=0)
            )
            answer = _parse_value_answer(response.text)
            if answer is None:
                saw_malformed = True
                continue
            if answer.empty:
                saw_empty = True
                continue
            return answer
        if saw_empty or not saw_malformed:
            return CellAnswer.none()
        raise MalformedResponseError(
            f"value generation for {query.aspect!r} returned unparseable output on every attempt"
        )

    def rewrite_column(self, values: Sequence[CellAnswer], aspect: str) -> list[CellValue]:
        cells, _ = self._rewrite_column_impl(values, aspect)
        return cells

    def _rewrite_column_impl(
        self, values: Sequence[CellAnswer], aspect: str
    ) -> tuple[list[CellValue], bool]:
        if not values:
            raise ValidationError("rewrite needs at least one value")
        non_empty = [(i, v.answer) for i, v in enumerate(values) if not v.empty]
        out: list[CellValue] = [CellValue.missing() for _ in values]
        if not non_empty:
            return out, False
        prompt = prompts.COLUMN_REWRITE_TEMPLATE.format(
            column=aspect,
            count=len(non_empty),
            values_json=json.dumps([text for _, text in non_empty], ensure_ascii=False),
        )

        def parse(text: str) -> list[str]:
            value = _extract_json(text)
            if not isinstance(value, list) or len(value) != len(non_empty):
                raise _FormatError(f"expected a list of {len(non_empty)} strings")
            return [str(v) for v in value]

        try:
            rewritten, _ = self._retry_chat(self.roles.rewrite, prompt, parse, f"column rewrite ({aspect})")
        except GenerationFailedError:
            # degraded path: keep the untruncated originals
            for i, text in non_empty:
                out[i] = CellValue.of(text)
            return out, True
        for (i, _), text in zip(non_empty, rewritten):
            out[i] = CellValue.of(text)
        return out, False

    def generate_table_decomposed(
        self, papers: Sequence[PaperRecord], n_aspects: int, context: GenerationContext
    ) -> ReviewTable:
        _require_generation_inputs(papers, n_aspects)
        for paper in papers:
            if not paper.full_text:
                raise ValidationError(f"paper {paper.cite_id!r} has no full text for value generation")
        retries_before = self._semantic_retries
        generated_caption = None
        if context.kind is ContextKind.GENERATED_CAPTION and not context.caption:
            generated_caption = self.generate_caption(papers)
            context = replace(context, caption=generated_caption)

        schema = self.generate_schema(papers, n_aspects, context)

        cells: dict[tuple[str, str], CellValue] = {}
        value_failures: list[str] = []
        rewrite_fallbacks: list[str] = []
        for aspect in schema.aspects:
            query = self.build_value_query(aspect, context)

            def cell_for(paper: PaperRecord, q: ValueQuery = query) -> CellAnswer:
                try:
                    return self.generate_value(paper, q)
                except MalformedResponseError:
                    value_failures.append(f"{paper.cite_id}/{q.aspect}")
                    return CellAnswer.none()

            answers = parallel_map(cell_for, list(papers), max_workers=self.max_workers)
            column, degraded = self._rewrite_column_impl(answers, aspect)
            if degraded:
                rewrite_fallbacks.append(aspect)
            for paper, cell in zip(papers, column):
                cells[(paper.cite_id, aspect)] = cell

        provenance: dict[str, Any] = {
            "mode": "decomposed",
            "context": context.kind.value,
            "models": {
                "schema": self.roles.schema,
                "value": self.roles.value,
                "rewrite": self.roles.rewrite,
                "describe": self.roles.describe,
            },
            "prompts_version": prompts.PROMPTS_VERSION,
            "retries_used": self._semantic_retries - retries_before,
            "exemplar_format": prompts.EXEMPLAR_FORMAT_VERSION
            if context.kind is ContextKind.FEW_SHOT
            else None,
        }
        if generated_caption:
            provenance["generated_caption"] = generated_caption
        if value_failures:
            provenance["value_failures"] = sorted(value_failures)
        if rewrite_fallbacks:
            provenance["rewrite_fallbacks"] = rewrite_fallbacks

        table = ReviewTable(
            table_id="decomposed-" + _short_digest([p.cite_id for p in papers], n_aspects),
            source_paper_id=None,
            caption=generated_caption,
            in_text_refs=(),
            row_keys=tuple(p.cite_id for p in papers),
            aspects=schema.aspects,
            cells=cells,
            papers={p.cite_id: p for p in papers},
            provenance=provenance,
        )
        violations = validate_table(table)
        if violations:
            raise GenerationFailedError(f"decomposed generation produced an invalid table: {violations[0]}")
        return table


def _short_digest(cite_ids: Sequence[str], n_aspects: int) -> str:
    payload = json.dumps({"papers": list(cite_ids), "n": n_aspects}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:10]

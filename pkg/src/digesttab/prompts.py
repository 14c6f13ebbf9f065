"""Prompt templates for table, schema, value, and alignment generation.

Templates are versioned as a unit: any edit must bump PROMPTS_VERSION so
cached responses and recorded provenance stay attributable.
"""

from __future__ import annotations

import json
from typing import Sequence

from .model import InTextReference, PaperRecord, ReviewTable, wrap_cite_marker

PROMPTS_VERSION = "1"
EXEMPLAR_FORMAT_VERSION = "exemplar-json-v1"

SYSTEM_PROMPT = (
    "You are an intelligent and precise assistant that can understand the contents of "
    "research papers. You are knowledgable on different fields and domains of science, "
    "in particular computer science. You are able to interpret research papers, create "
    "questions and answers, and compare multiple papers."
)

JOINT_TABLE_TEMPLATE = """We would like you to build a table that has each paper as a row and, as each column, a dimension that compares between the papers. You will be given multiple papers labeled Paper 1, 2, and so on. You will be provided with the title and content of each paper. Please create a table that compares and contrasts the given papers. Make {col_num} dimensions which are phrases that can compare multiple papers, so that the table has {col_num} columns. The table should also have {paper_num} papers as rows. Return a JSON object of the following format:

```json
{json_format}
```
**Check that the table has {paper_num} papers as rows and {column_num} dimensions as columns.**.

[Paper Content]
{papers}"""

SCHEMA_WITH_GENERATED_CAPTION_TEMPLATE = """Imagine the following scenario: A user is making a table for a scholarly paper that contains information about multiple papers and compares these papers. To compare and contrast the papers, the user provides the title and content of each paper. Your task is the following: Given a list of papers, you should find aspects that are shared by the given research papers. Then, within each aspect, you should identify {num_columns} attributes that can be used to compare the given papers.

First, you should return the list of similar aspects as a Python list as follows: "["<similar aspect that all given papers shared>", ...]". Then, think of each aspect as the topic for the Related Work section of the user's paper. Finally, find attributes that can compare the given papers within the Related Work section. Return a JSON object in the following format:

```json
{{
  "<attribute 1>": ["<comparable attribute within the aspect 1>", "<comparable attribute within the aspect 1>", ...],
  ...
}}
```

[Paper Content]
{papers}

Please ensure that your response strictly follows the given format. Adherence to the specified structure is mandatory."""

SCHEMA_WITH_CAPTION_TEMPLATE = """Imagine the following scenario: A user is making a table for a scholarly paper that contains information about multiple papers and compares these papers. To compare and contrast the papers, the user provides the title and content of each paper. To help you build the table, the user provides a caption of this table, which is referred to in the paper as additional information.

[Caption]
{caption}
{in_text_block}
Your task is the following: Given a list of papers and table caption, you should identify {num_columns} table columns to compare given research papers. Return a list in the following format:

```List
["<comparable attribute within the table caption>", "<comparable attribute within the table caption>", ...]
```

[Paper Content]
{papers}

Please ensure that your response strictly follows the given format. Adherence to the specified structure is mandatory."""

SCHEMA_FEW_SHOT_TEMPLATE = """Imagine the following scenario: A user is making a table for a scholarly paper that contains information about multiple papers and compares these papers. To compare and contrast the papers, the user provides the title and content of each paper. To help you build the table, the user provides similar tables that you can refer to as follows:

{exemplars}

Your task is the following: Given a list of papers and table examples, you should identify {num_columns} table columns to compare given research papers. Return a list in the following format:

[List]
["<comparable attribute>", "<comparable attribute>", ...]
[List]

{papers}

Please ensure that your response strictly follows the given format. Adherence to the specified structure is mandatory."""

# Minimal no-context variant of the captioned schema prompt, used when no
# auxiliary information conditions the generation.
SCHEMA_BASELINE_TEMPLATE = """Imagine the following scenario: A user is making a table for a scholarly paper that contains information about multiple papers and compares these papers. To compare and contrast the papers, the user provides the title and content of each paper.

Your task is the following: Given a list of papers, you should identify {num_columns} table columns to compare given research papers. Return a list in the following format:

```List
["<comparable attribute>", "<comparable attribute>", ...]
```

[Paper Content]
{papers}

Please ensure that your response strictly follows the given format. Adherence to the specified structure is mandatory."""

VALUE_QA_TEMPLATE = """Answer a question using the provided scientific paper.

Your response should be a JSON object with the following fields:

- answer: The answer to the question. The answer should use concise language, but be comprehensive. Only provide answers that are objectively supported by the text in paper.

- excerpts: A list of one or more *EXACT* text spans extracted from the paper that support the answer. Return between at most ten spans, and no more that 800 words. Make sure to cover all aspects of the answer above.

If there is no answer, return an empty dictionary, i.e., '{{}}'.

Paper:
 {full_text}

Given the information above, please answer the question: "{question}"."""

COLUMN_DESCRIPTION_TEMPLATE = """A user is making a table for a scholarly paper that contains information about multiple papers and compares these papers.
This table contains a column called {column}. Please write a  brief definition for this column.

Here is the caption for the table: {caption}.

Definition:
"""

COLUMN_DESCRIPTION_WITH_REFS_TEMPLATE = """A user is making a table for a scholarly paper that contains information about multiple papers and compares these papers.
This table contains a column called {column}. Please write a  brief definition for this column.

Here is the caption for the table: {caption}.

Following is some additional information about this table: {in_text_ref}.

Definition:
"""

DESCRIPTION_TO_QUESTION = "Rewrite this description as a one-line question."

NO_CONTEXT_QUERY = "From the provided paper full-text, can you extract {column}?"

NO_CONTEXT_RETRY_QUERIES = (
    "Extract information about {column} aspect from this paper.",
    "What information can you find about {column}?",
    "We want to create a table comparing papers. Extract the information from this paper that goes in the column called {column}.",
    "In a literature review table comparing multiple papers, what information from this paper would go under column {column}?",
)

CONTEXT_RETRY_SUFFIXES = (
    "Return a summary of this information",
    "Try to extract this information.",
    "Summarize information about this.",
    "What information can you find about this?",
)

CAPTION_GENERATION_TEMPLATE = """Write a one-paragraph caption for a literature review table that compares the following papers. The caption should be a short description that is consistent with all of the input papers. Respond with the caption text only.

{papers}

Caption:"""

COLUMN_REWRITE_TEMPLATE = """The following values were generated for the column "{column}" of a literature review table, one value per paper. Rewrite the values to be shorter and more consistent in style for display in table format. Return a JSON list containing exactly {count} strings, one rewritten value per input value, in the same order.

Values:
{values_json}"""

DECONTEXT_TEMPLATE = """A table column is identified by its header and the values that appear under it. Write a brief stand-alone description of the information this column records, so that the description can be understood without seeing the table. Expand abbreviations where the values make the expansion clear. Respond with the description only.

Column header: {name}
Column values: {values}

Description:"""

COLUMN_ALIGNER_TEMPLATE = """Given two tables, match column headers if their columns have very similar values. Most columns will not have a match.

Respond with a json list, whose elements are two element lists. The first element is the key of Object 1 and the matching key of Object 2.
For example, if the key 'Dataset size' and 'Number of training examples' are matched, you should return '[['Dataset size', 'Number of training examples']]. If no keys contain the same information, then just output an empty list '[]'

{exemplars}Table 1:
{table_1}

Table 2:
{table_2}

Response:"""

FORMAT_REMINDER = (
    "\n\nReminder: your previous output did not follow the requested format. "
    "Respond with exactly the format specified above and nothing else."
)

COLUMN_BATCH_EXCLUSION_NOTE = (
    "\n\nThe following columns already exist; do not repeat them: {existing}"
)


def format_paper(index: int, paper: PaperRecord) -> str:
    abstract = paper.abstract or ""
    return f"Paper {index}\nTitle: {paper.title}\nAbstract: {abstract}\n"


def format_papers(papers: Sequence[PaperRecord]) -> str:
    return "\n".join(format_paper(i + 1, p) for i, p in enumerate(papers))


def format_in_text_block(refs: Sequence[InTextReference]) -> str:
    if not refs:
        return "\n"
    joined = "".join("{%s: %s}" % (r.section, r.text) for r in refs)
    return f"\n[In-text reference]\n{joined}\n\n"


def format_in_text_inline(refs: Sequence[InTextReference]) -> str:
    return " ".join(f"{r.section}: {r.text}" if r.section else r.text for r in refs)


def joint_json_format(n_papers: int, n_aspects: int) -> str:
    """Skeleton of the expected joint-generation output: one key per
    dimension, one value per paper in input order."""
    values = ", ".join(f'"<value for paper {i + 1}>"' for i in range(n_papers))
    lines = [f'  "<dimension {j + 1}>": [{values}]' for j in range(n_aspects)]
    return "{\n" + ",\n".join(lines) + "\n}"


def serialize_exemplar(table: ReviewTable) -> str:
    grid: dict[str, list[str]] = {"References": [wrap_cite_marker(k) for k in table.row_keys]}
    for aspect in table.aspects:
        grid[aspect] = [table.cells[(row, aspect)].text for row in table.row_keys]
    return json.dumps({"caption": table.caption or "", "table": grid}, ensure_ascii=False)


def format_exemplars(tables: Sequence[ReviewTable]) -> str:
    return "".join(
        "{Table %d: %s}" % (i + 1, serialize_exemplar(t)) for i, t in enumerate(tables)
    )


def serialize_table_for_alignment(aspect_to_values: dict[str, list[str]]) -> str:
    return json.dumps(aspect_to_values, ensure_ascii=False, indent=2)

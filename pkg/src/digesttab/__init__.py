"""digesttab: curate, generate, and evaluate literature review tables."""

from .model import (
    CellValue,
    InTextReference,
    PaperRecord,
    ReviewTable,
    Schema,
    Violation,
    load_table,
    dump_table,
    make_table,
    parse_table,
    serialize_table,
    validate_table,
)

__all__ = [
    "CellValue",
    "InTextReference",
    "PaperRecord",
    "ReviewTable",
    "Schema",
    "Violation",
    "load_table",
    "dump_table",
    "make_table",
    "parse_table",
    "serialize_table",
    "validate_table",
]

__version__ = "0.1.0"

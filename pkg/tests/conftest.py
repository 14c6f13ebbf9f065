from __future__ import annotations

import json
from pathlib import Path

import pytest

from digesttab.curation import StaticResolver
from digesttab.gateway import ModelGateway
from digesttab.model import InTextReference, PaperRecord, make_table
from digesttab.stubs import DeterministicTaskStub, SeededStubEmbedder

FIXTURES = Path(__file__).resolve().parent / "fixtures"
CORPUS25 = FIXTURES / "corpus25"
CURATION20 = FIXTURES / "curation20"


@pytest.fixture(scope="session")
def corpus25_dir() -> Path:
    return CORPUS25


@pytest.fixture(scope="session")
def curation20_dir() -> Path:
    return CURATION20


@pytest.fixture(scope="session")
def curation_labels() -> dict:
    return json.loads((CURATION20 / "labels.json").read_text(encoding="utf-8"))


@pytest.fixture()
def fixture_resolver() -> StaticResolver:
    return StaticResolver(json.loads((CURATION20 / "resolver.json").read_text(encoding="utf-8")))


def paper(cite_id: str, *, full_text: bool = True) -> PaperRecord:
    return PaperRecord(
        cite_id=cite_id,
        title=f"Title of {cite_id}",
        abstract=f"Abstract of {cite_id} covering data and methods.",
        full_text=(
            f"1 Introduction\nPaper {cite_id} introduces a dataset of 10,000 videos "
            f"for the task of recognition. 2 Details\nThe resource {cite_id} is public."
        )
        if full_text
        else None,
    )


@pytest.fixture()
def two_papers() -> list[PaperRecord]:
    return [paper("pa"), paper("pb")]


@pytest.fixture()
def small_table():
    return make_table(
        "tiny",
        ["pa", "pb"],
        ["Task", "Size"],
        [["video QA", "10,000"], ["classification", "250"]],
        caption="Comparison of two video datasets.",
        in_text_refs=[InTextReference(section="Intro", text="See the comparison table.")],
        papers={"pa": paper("pa"), "pb": paper("pb")},
    )


@pytest.fixture()
def stub_gateway(tmp_path):
    return ModelGateway(
        chat_provider=DeterministicTaskStub(),
        embed_provider=SeededStubEmbedder(),
        cache_dir=tmp_path / "cache",
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            name = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in name:
                continue
            short = name.split("::")[-1]
            if not short.startswith("test_c"):
                continue
            criterion = short.split("_")[1]
            verdict = {"passed": "PASS", "skipped": "SKIP"}.get(status, "FAIL")
            key = (criterion, short)
            # a parametrized criterion fails if any case fails
            if key not in lines or verdict == "FAIL":
                lines[key] = verdict
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for (criterion, short), verdict in sorted(lines.items()):
        terminalreporter.write_line(f"[{verdict}] {short}")

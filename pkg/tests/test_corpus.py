from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from digesttab.corpus import (
    AspectType,
    CaptionIndex,
    classify_aspect,
    compute_stats,
    load_corpus,
    nearest_captions,
    render_stats_text,
)
from digesttab.errors import AllEmptyColumnError, EmptyCorpusError, ProviderError
from digesttab.gateway import ModelGateway
from digesttab.model import CellValue, make_table
from digesttab.stubs import SeededStubEmbedder, StaticEmbedder


# -- aspect classification -------------------------------------------------------


def cells(*texts: str) -> list[CellValue]:
    return [CellValue.of(t) for t in texts]


def test_boolean_checkmarks():
    assert classify_aspect(cells("✓", "✗", "✓")) is AspectType.BOOLEAN


def test_boolean_yes_no_with_na():
    assert classify_aspect(cells("Yes", "No", "n/a")) is AspectType.BOOLEAN


def test_dashes_alone_are_not_boolean():
    assert classify_aspect(cells("-", "-")) is not AspectType.BOOLEAN


def test_numeric_with_commas():
    assert classify_aspect(cells("10,000", "250")) is AspectType.NUMERIC


def test_numeric_with_percent():
    assert classify_aspect(cells("95%", "87%")) is AspectType.NUMERIC


def test_category_small_vocabulary():
    assert classify_aspect(cells("Open", "Proprietary", "Open")) is AspectType.CATEGORY


def test_text_long_descriptions():
    assert (
        classify_aspect(cells("collected via various crowdsourcing platforms for research purposes"))
        is AspectType.TEXT
    )


def test_entity_mid_length_names():
    column = cells(
        "Stanford Natural Language Inference Corpus",
        "CNN Daily Mail Summaries Set",
        "Large Movie Review Collection v2",
    )
    assert classify_aspect(column) is AspectType.ENTITY


def test_all_empty_column_rejected():
    with pytest.raises(AllEmptyColumnError):
        classify_aspect(cells("", "  "))


def test_classification_ignores_empty_cells():
    assert classify_aspect(cells("10,000", "", "250")) is AspectType.NUMERIC


@given(st.permutations(["10,000", "250", "3", "4,200"]))
def test_classification_order_invariant(values):
    assert classify_aspect(cells(*values)) is AspectType.NUMERIC


# -- stats ------------------------------------------------------------------------


def test_stats_single_table():
    table = make_table("one", ["a", "b", "c"], ["Task", "Size"], [["x", "1"], ["y", "2"], ["z", "3"]])
    stats = compute_stats([table])
    assert stats.rows.min == 3 and stats.rows.max == 3
    assert stats.rows.median == 3.0 and stats.rows.mean == 3.0 and stats.rows.total == 3
    assert stats.aspects.total == 2


def test_stats_two_tables_median():
    t1 = make_table("t1", ["a", "b"], ["X", "Y"], [["1", "2"], ["3", "4"]])
    t2 = make_table("t2", ["c", "d", "e", "f"], ["X", "Y"], [["1", "2"]] * 4)
    stats = compute_stats([t1, t2])
    assert stats.rows.median == 3.0
    assert stats.rows.total == 6


def test_stats_empty_corpus_rejected():
    with pytest.raises(EmptyCorpusError):
        compute_stats([])


def test_stats_distribution_sums_to_one(corpus25_dir):
    stats = compute_stats(load_corpus(corpus25_dir))
    assert math.isclose(sum(stats.aspect_type_distribution.values()), 1.0, abs_tol=1e-9)
    assert stats.rows.min <= stats.rows.median <= stats.rows.max


def test_stats_totals_equal_per_table_sums(corpus25_dir):
    tables = load_corpus(corpus25_dir)
    stats = compute_stats(tables)
    assert stats.rows.total == sum(len(t.row_keys) for t in tables)
    assert stats.aspects.total == sum(len(t.aspects) for t in tables)


def test_stats_report_carries_reference_flags(corpus25_dir):
    stats = compute_stats(load_corpus(corpus25_dir))
    flags = stats.to_json()["reference_flags"]
    assert flags["row_total_reference"] == 11016
    assert flags["row_total_as_printed_in_source"] == "11,0016"
    assert "11016" in render_stats_text(stats) or "11,0016" in render_stats_text(stats)


def test_stats_attribution_covers_every_column(corpus25_dir):
    tables = load_corpus(corpus25_dir)
    stats = compute_stats(tables)
    assert len(stats.aspect_type_attribution) == sum(len(t.aspects) for t in tables)


# -- caption index ------------------------------------------------------------------


def gw(embedder) -> ModelGateway:
    return ModelGateway(embed_provider=embedder, cache_dir=None)


def captioned(table_id: str, caption: str):
    return make_table(
        table_id, ["a", "b"], ["X", "Y"], [["1", "2"], ["3", "4"]], caption=caption
    )


def test_nearest_captions_hand_computed_ranking():
    # fixed vectors: cosines computed by hand (dot products of unit vectors)
    mapping = {
        "query caption": [1.0, 0.0],
        "parallel caption": [1.0, 0.0],  # cos = 1.0
        "diagonal caption": [math.sqrt(0.5), math.sqrt(0.5)],  # cos ~= 0.7071
        "orthogonal caption": [0.0, 1.0],  # cos = 0.0
    }
    gateway = gw(StaticEmbedder(mapping))
    tables = [
        captioned("t-par", "parallel caption"),
        captioned("t-diag", "diagonal caption"),
        captioned("t-orth", "orthogonal caption"),
    ]
    index = CaptionIndex.build(tables, gateway)
    ranked = nearest_captions("query caption", 3, gateway, index)
    assert [tid for tid, _ in ranked] == ["t-par", "t-diag", "t-orth"]
    assert ranked[0][1] == pytest.approx(1.0, abs=1e-6)
    assert ranked[1][1] == pytest.approx(math.sqrt(0.5), abs=1e-9)
    assert ranked[2][1] == pytest.approx(0.0, abs=1e-9)


def test_nearest_captions_excludes_query_table():
    mapping = {
        "same caption": [0.0, 1.0],
        "other caption": [0.0, 1.0],
    }
    gateway = gw(StaticEmbedder(mapping))
    tables = [captioned("t-self", "same caption"), captioned("t-other", "other caption")]
    index = CaptionIndex.build(tables, gateway)
    ranked = nearest_captions("same caption", 5, gateway, index, exclude_table_id="t-self")
    assert [tid for tid, _ in ranked] == ["t-other"]
    assert ranked[0][1] == pytest.approx(1.0, abs=1e-6)


def test_nearest_captions_k_larger_than_corpus():
    gateway = gw(SeededStubEmbedder())
    tables = [captioned(f"t{i}", f"caption number {i}") for i in range(3)]
    index = CaptionIndex.build(tables, gateway)
    ranked = nearest_captions("caption number 0", 10, gateway, index)
    assert len(ranked) == 3
    assert all(-1.0 - 1e-9 <= sim <= 1.0 + 1e-9 for _, sim in ranked)
    assert all(ranked[i][1] >= ranked[i + 1][1] for i in range(len(ranked) - 1))


def test_nearest_captions_ties_break_lexicographically():
    mapping = {"q": [1.0, 0.0], "cap1": [1.0, 0.0], "cap2": [1.0, 0.0]}
    gateway = gw(StaticEmbedder(mapping))
    tables = [captioned("zz", "cap1"), captioned("aa", "cap2")]
    index = CaptionIndex.build(tables, gateway)
    ranked = nearest_captions("q", 2, gateway, index)
    assert [tid for tid, _ in ranked] == ["aa", "zz"]


def test_caption_index_round_trips_through_disk(tmp_path):
    gateway = gw(SeededStubEmbedder())
    tables = [captioned(f"t{i}", f"caption number {i}") for i in range(4)]
    index = CaptionIndex.build(tables, gateway)
    path = index.save(tmp_path / "captions.index.json")
    loaded = CaptionIndex.load(path)
    assert loaded.model_id == index.model_id
    q1 = nearest_captions("caption number 2", 2, gateway, index)
    q2 = nearest_captions("caption number 2", 2, gateway, loaded)
    assert [t for t, _ in q1] == [t for t, _ in q2]


def test_embedder_unavailable_propagates():
    gateway = ModelGateway(embed_provider=None, cache_dir=None)
    tables = [captioned("t1", "caption one"), captioned("t2", "caption two")]
    with pytest.raises(ProviderError):
        CaptionIndex.build(tables, gateway)

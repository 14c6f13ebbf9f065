from __future__ import annotations

import csv
import io
import itertools
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from digesttab.alignment import (
    AlignmentConfig,
    FeaturizerMode,
    SchemaAligner,
    ScorerKind,
    blind_config_id,
    calibrate,
    content_tokens,
    cosine_clamped,
    exact_match_score,
    export_precision_annotations,
    import_precision_annotations,
    jaccard_score,
)
from digesttab.errors import MalformedResponseError, ValidationError
from digesttab.gateway import ModelGateway
from digesttab.model import make_table
from digesttab.stopwords import STOPWORDS
from digesttab.stubs import ScriptedChatProvider, SeededStubEmbedder


def aligner_with_embed(tmp_path=None) -> SchemaAligner:
    gateway = ModelGateway(embed_provider=SeededStubEmbedder(), cache_dir=tmp_path)
    return SchemaAligner(gateway)


def table(table_id: str, aspects: list[str], rows: int = 2):
    keys = [f"{table_id}-r{i}" for i in range(rows)]
    grid = [[f"{a} value {i}" for a in aspects] for i in range(rows)]
    return make_table(table_id, keys, aspects, grid)


# -- scorers -----------------------------------------------------------------


def test_exact_match_is_normalized_equality():
    assert exact_match_score("task", "task") == 1.0
    assert exact_match_score("  Task ", "task") == 1.0
    assert exact_match_score("task", "dataset") == 0.0


def test_jaccard_stopword_removal_makes_sets_equal():
    assert jaccard_score("size of the dataset", "dataset size") == 1.0


def test_jaccard_disjoint_sets():
    assert jaccard_score("task", "application") == 0.0


def test_jaccard_partial_overlap():
    assert jaccard_score("DPO, PPO", "DPO") == 0.5


def test_jaccard_stopword_only_texts_score_zero():
    assert jaccard_score("of the", "of the") == 0.0


def brute_force_jaccard(a: str, b: str) -> float:
    import re

    def toks(text):
        return {
            t
            for t in re.findall(r"[^\W_]+", text.casefold(), flags=re.UNICODE)
            if t not in STOPWORDS
        }

    ta, tb = toks(a), toks(b)
    if not ta | tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def test_jaccard_matches_brute_force_on_200_random_pairs():
    rng = random.Random(1234)
    vocabulary = [
        "dataset", "size", "of", "the", "task", "model", "training", "examples",
        "language", "a", "accuracy", "method", "and", "for", "annotation", "label",
    ]
    for _ in range(200):
        a = " ".join(rng.choices(vocabulary, k=rng.randint(1, 8)))
        b = " ".join(rng.choices(vocabulary, k=rng.randint(1, 8)))
        assert jaccard_score(a, b) == brute_force_jaccard(a, b)


def test_exact_match_reflexive_symmetric_on_random_strings():
    rng = random.Random(99)
    alphabet = "abcdef XYZ  123"
    for _ in range(100):
        a = "".join(rng.choices(alphabet, k=rng.randint(1, 12))) or "a"
        b = "".join(rng.choices(alphabet, k=rng.randint(1, 12))) or "b"
        if not a.strip() or not b.strip():
            continue
        assert exact_match_score(a, a) == 1.0
        assert exact_match_score(a, b) == exact_match_score(b, a)


def test_embed_cosine_matches_hand_computation():
    embedder = SeededStubEmbedder()
    aligner = aligner_with_embed()
    for a, b in [("dataset size", "number of examples"), ("task", "task"), ("x", "y")]:
        u = embedder.embed([a])[0]
        v = embedder.embed([b])[0]
        dot = sum(ui * vi for ui, vi in zip(u, v))
        norm_u = sum(ui * ui for ui in u) ** 0.5
        norm_v = sum(vi * vi for vi in v) ** 0.5
        expected = max(0.0, dot / (norm_u * norm_v))
        got = aligner.score_pair(a, b, ScorerKind.EMBED)
        assert got == pytest.approx(expected, abs=1e-9)


def test_cosine_clamped_floors_negatives():
    assert cosine_clamped([1.0, 0.0], [-1.0, 0.0]) == 0.0
    assert cosine_clamped([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)


@given(st.text(max_size=30), st.text(max_size=30))
@settings(max_examples=100)
def test_scorer_symmetry(a, b):
    if not a.strip() or not b.strip():
        return
    assert exact_match_score(a, b) == exact_match_score(b, a)
    assert jaccard_score(a, b) == jaccard_score(b, a)
    assert 0.0 <= jaccard_score(a, b) <= 1.0


def test_score_pair_rejects_empty_inputs():
    aligner = SchemaAligner()
    with pytest.raises(ValidationError):
        aligner.score_pair("", "x", ScorerKind.EXACT)


# -- featurize ------------------------------------------------------------------


def test_featurize_name_is_identity(small_table):
    aligner = SchemaAligner()
    assert aligner.featurize("Task", small_table, FeaturizerMode.NAME) == "Task"


def test_featurize_values_concatenates_in_row_order(small_table):
    aligner = SchemaAligner()
    feature = aligner.featurize("Task", small_table, FeaturizerMode.VALUES)
    assert feature == "Task: video QA; classification"


def test_featurize_values_skips_empty_cells():
    t = make_table("e", ["a", "b"], ["Task", "Size"], [["x", ""], ["y", "5"]])
    aligner = SchemaAligner()
    assert aligner.featurize("Size", t, FeaturizerMode.VALUES) == "Size: 5"


def test_featurize_decontext_calls_chat(small_table):
    provider = ScriptedChatProvider(
        lambda req: "This column records the video question answering task."
    )
    aligner = SchemaAligner(ModelGateway(chat_provider=provider, cache_dir=None))
    feature = aligner.featurize("Task", small_table, FeaturizerMode.DECONTEXT)
    assert "video question answering" in feature
    prompt = provider.call_log[0].last_user_content()
    assert "Column header: Task" in prompt
    assert "video QA" in prompt


def test_featurize_unknown_aspect_rejected(small_table):
    with pytest.raises(ValidationError):
        SchemaAligner().featurize("Nope", small_table, FeaturizerMode.NAME)


def test_featurize_decontext_without_provider_rejected(small_table):
    with pytest.raises(ValidationError):
        SchemaAligner().featurize("Task", small_table, FeaturizerMode.DECONTEXT)


# -- llm aligner -------------------------------------------------------------------


def test_llm_align_parses_pairs():
    gen = table("g", ["Dataset size", "Task"])
    ref = table("r", ["Number of training examples", "Domain"])
    provider = ScriptedChatProvider(
        [json.dumps([["Dataset size", "Number of training examples"]])]
    )
    aligner = SchemaAligner(ModelGateway(chat_provider=provider, cache_dir=None))
    pairs = aligner.llm_align(gen, ref, FeaturizerMode.NAME)
    assert pairs == {("Dataset size", "Number of training examples")}
    prompt = provider.call_log[0].last_user_content()
    # ten in-context exemplars, half with no matches
    assert prompt.count("Response:") == 11  # 10 exemplars + the live pair
    assert prompt.count("Response: []") == 5


def test_llm_align_empty_list():
    provider = ScriptedChatProvider(["[]"])
    aligner = SchemaAligner(ModelGateway(chat_provider=provider, cache_dir=None))
    assert aligner.llm_align(table("g", ["A", "B"]), table("r", ["C", "D"]), FeaturizerMode.NAME) == set()


def test_llm_align_discards_unknown_aspects():
    provider = ScriptedChatProvider([json.dumps([["A", "Nope"], ["A", "C"]])])
    aligner = SchemaAligner(ModelGateway(chat_provider=provider, cache_dir=None))
    pairs = aligner.llm_align(table("g", ["A", "B"]), table("r", ["C", "D"]), FeaturizerMode.NAME)
    assert pairs == {("A", "C")}


def test_llm_align_malformed_after_retries():
    provider = ScriptedChatProvider(lambda req: "not a json list")
    aligner = SchemaAligner(ModelGateway(chat_provider=provider, cache_dir=None), retry_budget=1)
    with pytest.raises(MalformedResponseError):
        aligner.llm_align(table("g", ["A", "B"]), table("r", ["C", "D"]), FeaturizerMode.NAME)
    assert len(provider.call_log) == 2


# -- align -----------------------------------------------------------------------


def test_align_identical_schemas_exact_match_full_recall():
    t = table("x", ["Task", "Dataset"])
    config = AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5)
    result = SchemaAligner().align(t, table("y", ["Task", "Dataset"]), config)
    assert result.recall == 1.0
    assert result.matched_ref_aspects == frozenset({"Task", "Dataset"})


def test_align_two_of_three_recall():
    gen = table("g", ["Task", "Dataset"])
    ref = table("r", ["Task", "Dataset", "Metric"])
    config = AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5)
    result = SchemaAligner().align(gen, ref, config)
    assert result.recall == pytest.approx(2 / 3)
    assert result.matched_ref_aspects == frozenset({"Task", "Dataset"})


def test_align_self_alignment_on_corpus_fixture(corpus25_dir):
    from digesttab.corpus import load_corpus

    aligner = SchemaAligner()
    config = AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.99)
    for t in load_corpus(corpus25_dir)[:5]:
        assert aligner.align(t, t, config).recall == 1.0


def test_align_threshold_monotonicity_with_stub_embedder(tmp_path):
    aligner = aligner_with_embed(tmp_path)
    rng = random.Random(5)
    names = ["Task", "Dataset", "Size", "Domain", "Method", "Metric", "Year", "Source"]
    for _ in range(50):
        gen_names = rng.sample(names, rng.randint(2, 4))
        ref_names = rng.sample(names, rng.randint(2, 4))
        gen = table("g", gen_names)
        ref = table("r", ref_names)
        previous = 1.1
        recalls = []
        for t in (0.1, 0.3, 0.5, 0.7, 0.9):
            result = aligner.align(gen, ref, AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EMBED, t))
            recalls.append(result.recall)
        assert all(a >= b for a, b in zip(recalls, recalls[1:])), (gen_names, ref_names, recalls)


def test_align_greedy_assignment_is_one_to_one():
    aligner = aligner_with_embed()
    gen = table("g", ["Task", "Task description"])
    ref = table("r", ["Task", "Dataset"])
    result = aligner.align(gen, ref, AlignmentConfig(FeaturizerMode.NAME, ScorerKind.JACCARD, 0.3))
    gens = [g for g, _ in result.greedy_assignment]
    refs = [r for _, r in result.greedy_assignment]
    assert len(set(gens)) == len(gens) and len(set(refs)) == len(refs)


def test_align_llm_scorer_binary_scores():
    gen = table("g", ["Dataset size", "Task"])
    ref = table("r", ["Number of training examples", "Domain"])
    provider = ScriptedChatProvider([json.dumps([["Dataset size", "Number of training examples"]])])
    aligner = SchemaAligner(ModelGateway(chat_provider=provider, cache_dir=None))
    result = aligner.align(gen, ref, AlignmentConfig(FeaturizerMode.NAME, ScorerKind.LLM, 0.7))
    assert result.pair_scores[("Dataset size", "Number of training examples")] == 1.0
    assert result.pair_scores[("Task", "Domain")] == 0.0
    assert result.recall == 0.5


def test_alignment_config_rejects_out_of_range_threshold():
    with pytest.raises(ValidationError):
        AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 1.5)


def test_result_json_round_trip_fields():
    t = table("x", ["Task", "Dataset"])
    config = AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5)
    payload = SchemaAligner().align(t, table("y", ["Task", "Metric"]), config).to_json()
    assert payload["recall"] == 0.5
    assert {"gen", "ref", "score"} <= set(payload["pair_scores"][0])


# -- calibration --------------------------------------------------------------------


def pairs_fixture():
    gen1 = table("t1", ["Task", "Dataset"])
    ref1 = table("t1r", ["Task", "Metric"])
    gen2 = table("t2", ["Size", "Domain"])
    ref2 = table("t2r", ["Size", "Domain"])
    return [(gen1, ref1), (gen2, ref2)]


def test_calibrate_exact_match_constant_across_thresholds():
    report = calibrate(
        SchemaAligner(),
        pairs_fixture(),
        [FeaturizerMode.NAME],
        [ScorerKind.EXACT],
        [0.1, 0.5, 0.9],
        seed=3,
    )
    recalls = [row.mean_recall for row in report.rows]
    assert recalls[0] == recalls[1] == recalls[2]


def test_calibrate_deterministic_csv():
    def run():
        return calibrate(
            SchemaAligner(ModelGateway(embed_provider=SeededStubEmbedder(), cache_dir=None)),
            pairs_fixture(),
            [FeaturizerMode.NAME],
            [ScorerKind.JACCARD, ScorerKind.EMBED],
            [0.3, 0.7],
            seed=11,
        ).to_csv()

    assert run() == run()


def test_calibrate_embed_recall_monotone_in_threshold():
    report = calibrate(
        SchemaAligner(ModelGateway(embed_provider=SeededStubEmbedder(), cache_dir=None)),
        pairs_fixture(),
        [FeaturizerMode.NAME],
        [ScorerKind.EMBED],
        [0.5, 0.9],
        seed=0,
    )
    by_t = {row.threshold: row.mean_recall for row in report.rows}
    assert by_t[0.9] <= by_t[0.5]


def test_calibrate_bootstrap_matches_independent_resampler():
    report = calibrate(
        SchemaAligner(),
        pairs_fixture() * 3,  # 6 recall samples
        [FeaturizerMode.NAME],
        [ScorerKind.EXACT],
        [0.5],
        seed=21,
        bootstrap_iterations=500,
    )
    row = report.rows[0]
    recalls = list(row.per_pair_recalls)

    from digesttab.alignment import _config_seed
    rng = np.random.default_rng(_config_seed(21, FeaturizerMode.NAME, ScorerKind.EXACT, 0.5))
    boots = []
    n = len(recalls)
    for _ in range(500):
        idx = rng.integers(0, n, size=n)
        boots.append(sum(recalls[i] for i in idx) / n)
    lo, hi = np.quantile(boots, [0.025, 0.975])
    assert row.ci_low == pytest.approx(float(lo), abs=1e-9)
    assert row.ci_high == pytest.approx(float(hi), abs=1e-9)


def test_calibrate_csv_schema():
    report = calibrate(
        SchemaAligner(), pairs_fixture(), [FeaturizerMode.NAME], [ScorerKind.EXACT], [0.7], seed=0
    )
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == ["featurizer", "scorer", "t", "mean_recall", "ci_low", "ci_high"]
    assert len(rows) == 2


# -- precision annotations -------------------------------------------------------------


def make_result():
    gen = table("g", ["Task", "Dataset"])
    ref = table("r", ["Task", "Dataset"])
    config = AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5)
    return SchemaAligner().align(gen, ref, config)


def test_export_import_precision_round_trip():
    result = make_result()
    text, key = export_precision_annotations([result])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 2
    assert set(key.values()) == {result.config.label()}
    # rate: 1 complete, 1 partial
    rows[0]["rating"] = "complete"
    rows[1]["rating"] = "partial"
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=rows[0].keys(), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    report = import_precision_annotations(buffer.getvalue())
    assert report["overall"]["precision_lower"] == 0.5
    assert report["overall"]["precision_upper"] == 1.0


def test_import_precision_bounds_seven_one_two():
    blind = blind_config_id(AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5))
    rows = ["pair_id,gen_aspect_feature,ref_aspect_feature,config_blind_id,rating"]
    ratings = ["complete"] * 7 + ["partial"] * 1 + ["incorrect"] * 2
    for i, rating in enumerate(ratings):
        rows.append(f"p{i},ga,ra,{blind},{rating}")
    report = import_precision_annotations("\n".join(rows))
    assert report["overall"]["precision_lower"] == pytest.approx(0.70)
    assert report["overall"]["precision_upper"] == pytest.approx(0.80)


def test_import_precision_rejects_bad_rating():
    blind = blind_config_id(AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5))
    text = "pair_id,gen_aspect_feature,ref_aspect_feature,config_blind_id,rating\np0,a,b,%s,great" % blind
    with pytest.raises(ValidationError):
        import_precision_annotations(text)


def test_export_zero_pairs_gives_na_bounds():
    gen = table("g", ["Task", "Dataset"])
    ref = table("r", ["Metric", "Venue"])
    config = AlignmentConfig(FeaturizerMode.NAME, ScorerKind.EXACT, 0.5)
    result = SchemaAligner().align(gen, ref, config)
    text, _ = export_precision_annotations([result])
    report = import_precision_annotations(text)
    assert report["overall"]["precision_lower"] is None

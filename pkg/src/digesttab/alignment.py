"""Schema alignment: featurize aspects, score pairs, threshold into matches.

A featurizer maps an aspect (plus its column context) to comparison text;
a scorer maps two featurized texts to [0, 1]. A reference aspect counts as
matched when some generated aspect scores strictly above the threshold,
and schema recall is the matched fraction of reference aspects. The
calibration sweep reruns the grid of configurations and reports mean
recall with bootstrap intervals.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np

from . import prompts
from .errors import MalformedResponseError, ValidationError
from .gateway import ChatMessage, ChatRequest, ModelGateway
from .model import ReviewTable
from .stats import bootstrap_ci
from .stopwords import STOPWORDS

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class FeaturizerMode(str, Enum):
    NAME = "name"
    VALUES = "values"
    DECONTEXT = "decontext"


class ScorerKind(str, Enum):
    EXACT = "exact-match"
    JACCARD = "jaccard"
    EMBED = "embed-cosine"
    LLM = "llm-aligner"


@dataclass(frozen=True)
class AlignmentConfig:
    featurizer: FeaturizerMode
    scorer: ScorerKind
    threshold: float

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold must be in [0, 1], got {self.threshold}")

    def label(self) -> str:
        return f"{self.featurizer.value}/{self.scorer.value}@{self.threshold:g}"


DEFAULT_CONFIG = AlignmentConfig(
    featurizer=FeaturizerMode.DECONTEXT, scorer=ScorerKind.EMBED, threshold=0.7
)


@dataclass(frozen=True)
class AlignmentResult:
    gen_table_id: str
    ref_table_id: str
    config: AlignmentConfig
    pair_scores: Mapping[tuple[str, str], float]
    matched_ref_aspects: frozenset[str]
    matched_pairs: frozenset[tuple[str, str]]
    recall: float
    gen_features: Mapping[str, str]
    ref_features: Mapping[str, str]
    greedy_assignment: tuple[tuple[str, str], ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "gen_table_id": self.gen_table_id,
            "ref_table_id": self.ref_table_id,
            "config": {
                "featurizer": self.config.featurizer.value,
                "scorer": self.config.scorer.value,
                "threshold": self.config.threshold,
            },
            "pair_scores": [
                {"gen": g, "ref": r, "score": s}
                for (g, r), s in sorted(self.pair_scores.items())
            ],
            "matched_ref_aspects": sorted(self.matched_ref_aspects),
            "matched_pairs": [list(p) for p in sorted(self.matched_pairs)],
            "recall": self.recall,
            "gen_features": dict(sorted(self.gen_features.items())),
            "ref_features": dict(sorted(self.ref_features.items())),
            "greedy_assignment": [list(p) for p in self.greedy_assignment],
        }


# -- scorers ---------------------------------------------------------------


def normalize_for_exact(text: str) -> str:
    import unicodedata

    return re.sub(r"\s+", " ", unicodedata.normalize("NFC", text)).strip().casefold()


def exact_match_score(a: str, b: str) -> float:
    return 1.0 if normalize_for_exact(a) == normalize_for_exact(b) else 0.0


def content_tokens(text: str) -> set[str]:
    return {t for t in (m.group(0).casefold() for m in _TOKEN_RE.finditer(text)) if t not in STOPWORDS}


def jaccard_score(a: str, b: str) -> float:
    """Jaccard over stopword-filtered token sets; two empty sets score 0."""
    set_a, set_b = content_tokens(a), content_tokens(b)
    union = set_a | set_b
    if not union:
        return 0.0
    return len(set_a & set_b) / len(union)


def cosine_clamped(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine clamped to [0, 1]: negative similarity can never cross a legal
    threshold, so nothing is lost by flooring at zero."""
    a = np.asarray(list(u), dtype=float)
    b = np.asarray(list(v), dtype=float)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return max(0.0, float(np.dot(a, b) / denom))


# Ten in-context exemplar pairs for the LLM aligner; half have no matches
# so the model learns that most columns stay unmatched.
ALIGNER_EXEMPLARS: tuple[tuple[dict, dict, list], ...] = (
    (
        {"Dataset size": ["10,000", "250k"], "Task": ["QA", "NER"]},
        {"Number of training examples": ["10,000", "250,000"], "Year": ["2019", "2021"]},
        [["Dataset size", "Number of training examples"]],
    ),
    (
        {"Language": ["English", "German"], "Domain": ["news", "bio"]},
        {"Corpus language": ["English", "German"], "License": ["MIT", "CC"]},
        [["Language", "Corpus language"]],
    ),
    (
        {"Model": ["BERT", "GPT-2"], "Params": ["110M", "1.5B"]},
        {"Architecture": ["transformer encoder", "transformer decoder"], "Model size": ["110M", "1.5B"]},
        [["Params", "Model size"]],
    ),
    (
        {"Evaluation metric": ["accuracy", "F1"], "Input": ["image", "text"]},
        {"Metric": ["accuracy", "F1 score"], "Modality": ["vision", "language"]},
        [["Evaluation metric", "Metric"], ["Input", "Modality"]],
    ),
    (
        {"Annotation method": ["crowdsourced", "expert"], "Size": ["1k", "5k"]},
        {"Labeling approach": ["crowd workers", "domain experts"], "Examples": ["1,000", "5,000"]},
        [["Annotation method", "Labeling approach"], ["Size", "Examples"]],
    ),
    (
        {"Task": ["summarization", "translation"], "Venue": ["ACL", "EMNLP"]},
        {"Hardware": ["GPU", "TPU"], "Batch size": ["32", "64"]},
        [],
    ),
    (
        {"Sensor type": ["lidar", "radar"], "Range": ["100m", "250m"]},
        {"Optimizer": ["Adam", "SGD"], "Learning rate": ["1e-4", "1e-3"]},
        [],
    ),
    (
        {"Species": ["mouse", "zebrafish"], "Tissue": ["brain", "liver"]},
        {"Dataset": ["CNN/Daily Mail", "XSum"], "Summary length": ["56", "23"]},
        [],
    ),
    (
        {"Protocol": ["TCP", "UDP"], "Latency": ["low", "high"]},
        {"Crop": ["maize", "wheat"], "Region": ["EU", "US"]},
        [],
    ),
    (
        {"Game": ["chess", "go"], "Agents": ["2", "2"]},
        {"Instrument": ["MRI", "CT"], "Resolution": ["1mm", "0.5mm"]},
        [],
    ),
)


def _render_exemplars() -> str:
    blocks = []
    for left, right, answer in ALIGNER_EXEMPLARS:
        blocks.append(
            "Table 1:\n%s\n\nTable 2:\n%s\n\nResponse: %s\n\n"
            % (
                prompts.serialize_table_for_alignment({k: list(v) for k, v in left.items()}),
                prompts.serialize_table_for_alignment({k: list(v) for k, v in right.items()}),
                json.dumps(answer, ensure_ascii=False),
            )
        )
    return "".join(blocks)


class SchemaAligner:
    """Bundles featurization, scoring, and the threshold-matching step.

    Name and Values featurizers are pure functions; Decontext issues one
    cached chat call per aspect, and the LLM scorer issues one call per
    table pair.
    """

    def __init__(
        self,
        gateway: ModelGateway | None = None,
        *,
        decontext_model: str = "decontext-model",
        aligner_model: str = "aligner-model",
        retry_budget: int = 2,
        max_tokens: int = 1024,
    ):
        self.gateway = gateway
        self.decontext_model = decontext_model
        self.aligner_model = aligner_model
        self.retry_budget = retry_budget
        self.max_tokens = max_tokens

    # -- featurize ---------------------------------------------------------

    def featurize(self, aspect: str, table: ReviewTable, mode: FeaturizerMode) -> str:
        if aspect not in table.aspects:
            raise ValidationError(f"aspect {aspect!r} not in table {table.table_id!r}")
        if mode is FeaturizerMode.NAME:
            return aspect
        values = [c.text for c in table.column(aspect) if not c.empty]
        if mode is FeaturizerMode.VALUES:
            return f"{aspect}: " + "; ".join(values)
        if self.gateway is None:
            raise ValidationError("decontext featurizer needs a chat provider")
        prompt = prompts.DECONTEXT_TEMPLATE.format(name=aspect, values="; ".join(values))
        response = self.gateway.chat(
            ChatRequest(
                model_id=self.decontext_model,
                messages=(ChatMessage(role="user", content=prompt),),
                max_tokens=self.max_tokens,
            )
        )
        text = " ".join(response.text.split())
        return text if text else aspect

    # -- score -------------------------------------------------------------

    def score_pair(self, a: str, b: str, scorer: ScorerKind) -> float:
        if not a or not b:
            raise ValidationError("scorer inputs must be non-empty")
        if scorer is ScorerKind.EXACT:
            return exact_match_score(a, b)
        if scorer is ScorerKind.JACCARD:
            return jaccard_score(a, b)
        if scorer is ScorerKind.EMBED:
            if self.gateway is None:
                raise ValidationError("embedding scorer needs an embedding provider")
            u, v = self.gateway.embed([a, b])
            return cosine_clamped(u, v)
        raise ValidationError("the LLM aligner scores whole tables, not isolated pairs")

    # -- LLM aligner ---------------------------------------------------------

    def llm_align(
        self, gen: ReviewTable, ref: ReviewTable, featurizer: FeaturizerMode
    ) -> set[tuple[str, str]]:
        """Prompt for aligned column pairs between the two tables, headers
        replaced by their featurized forms. Returns pairs in original
        aspect names; pairs naming unknown aspects are discarded."""
        if self.gateway is None:
            raise ValidationError("LLM aligner needs a chat provider")
        gen_features = {a: self.featurize(a, gen, featurizer) for a in gen.aspects}
        ref_features = {a: self.featurize(a, ref, featurizer) for a in ref.aspects}
        gen_grid = {
            gen_features[a]: [c.text for c in gen.column(a)] for a in gen.aspects
        }
        ref_grid = {
            ref_features[a]: [c.text for c in ref.column(a)] for a in ref.aspects
        }
        prompt = prompts.COLUMN_ALIGNER_TEMPLATE.format(
            exemplars=_render_exemplars(),
            table_1=prompts.serialize_table_for_alignment(gen_grid),
            table_2=prompts.serialize_table_for_alignment(ref_grid),
        )
        by_feature_gen = _invert(gen_features)
        by_feature_ref = _invert(ref_features)

        last_error = ""
        for attempt in range(1 + self.retry_budget):
            response = self.gateway.chat(
                ChatRequest(
                    model_id=self.aligner_model,
                    messages=(ChatMessage(role="user", content=prompt),),
                    max_tokens=self.max_tokens,
                    attempt=attempt,
                )
            )
            try:
                raw_pairs = _parse_pairs(response.text)
            except ValueError as err:
                last_error = str(err)
                continue
            pairs: set[tuple[str, str]] = set()
            for left, right in raw_pairs:
                gen_aspect = by_feature_gen.get(left)
                ref_aspect = by_feature_ref.get(right)
                if gen_aspect is None or ref_aspect is None:
                    logger.warning(
                        "aligner returned a pair naming an absent aspect, discarding: %r / %r",
                        left,
                        right,
                    )
                    continue
                pairs.add((gen_aspect, ref_aspect))
            return pairs
        raise MalformedResponseError(f"aligner output stayed unparseable: {last_error}")

    # -- align ----------------------------------------------------------------

    def align(self, gen: ReviewTable, ref: ReviewTable, config: AlignmentConfig) -> AlignmentResult:
        gen_features = {a: self.featurize(a, gen, config.featurizer) for a in gen.aspects}
        ref_features = {a: self.featurize(a, ref, config.featurizer) for a in ref.aspects}

        pair_scores: dict[tuple[str, str], float] = {}
        if config.scorer is ScorerKind.LLM:
            matched = self.llm_align(gen, ref, config.featurizer)
            for g in gen.aspects:
                for r in ref.aspects:
                    pair_scores[(g, r)] = 1.0 if (g, r) in matched else 0.0
        elif config.scorer is ScorerKind.EMBED:
            texts = [gen_features[a] for a in gen.aspects] + [ref_features[a] for a in ref.aspects]
            vectors = self.gateway.embed(texts) if self.gateway else None
            if vectors is None:
                raise ValidationError("embedding scorer needs an embedding provider")
            gen_vecs = dict(zip(gen.aspects, vectors[: len(gen.aspects)]))
            ref_vecs = dict(zip(ref.aspects, vectors[len(gen.aspects) :]))
            for g in gen.aspects:
                for r in ref.aspects:
                    pair_scores[(g, r)] = cosine_clamped(gen_vecs[g], ref_vecs[r])
        else:
            for g in gen.aspects:
                for r in ref.aspects:
                    pair_scores[(g, r)] = self.score_pair(
                        gen_features[g], ref_features[r], config.scorer
                    )

        return build_result(gen, ref, config, pair_scores, gen_features, ref_features)


def _invert(features: Mapping[str, str]) -> dict[str, str]:
    # first-wins on feature collisions; collisions mean two identical columns
    out: dict[str, str] = {}
    for aspect, feature in features.items():
        out.setdefault(feature, aspect)
    return out


def _parse_pairs(text: str) -> list[tuple[str, str]]:
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\[", text):
        try:
            value, _ = decoder.raw_decode(text[match.start():])
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            pairs = []
            for item in value:
                if isinstance(item, (list, tuple)) and len(item) == 2:
                    pairs.append((str(item[0]), str(item[1])))
                else:
                    raise ValueError(f"pair element is not a 2-list: {item!r}")
            return pairs
    raise ValueError(f"no JSON list found in {text[:120]!r}")


def build_result(
    gen: ReviewTable,
    ref: ReviewTable,
    config: AlignmentConfig,
    pair_scores: Mapping[tuple[str, str], float],
    gen_features: Mapping[str, str],
    ref_features: Mapping[str, str],
) -> AlignmentResult:
    """Threshold-matching step shared by every scorer: a reference aspect is
    matched when its best generated score is strictly above the threshold."""
    t = config.threshold
    matched_pairs = frozenset(pair for pair, score in pair_scores.items() if score > t)
    matched_refs = frozenset(r for (_, r) in matched_pairs)
    recall = len(matched_refs) / len(ref.aspects)

    used_gen: set[str] = set()
    used_ref: set[str] = set()
    greedy: list[tuple[str, str]] = []
    for (g, r), score in sorted(pair_scores.items(), key=lambda kv: (-kv[1], kv[0])):
        if score > t and g not in used_gen and r not in used_ref:
            greedy.append((g, r))
            used_gen.add(g)
            used_ref.add(r)

    return AlignmentResult(
        gen_table_id=gen.table_id,
        ref_table_id=ref.table_id,
        config=config,
        pair_scores=dict(pair_scores),
        matched_ref_aspects=matched_refs,
        matched_pairs=matched_pairs,
        recall=recall,
        gen_features=dict(gen_features),
        ref_features=dict(ref_features),
        greedy_assignment=tuple(greedy),
    )


# -- calibration ---------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationRow:
    featurizer: FeaturizerMode
    scorer: ScorerKind
    threshold: float
    mean_recall: float
    ci_low: float
    ci_high: float
    micro_recall: float
    per_pair_recalls: tuple[float, ...]


@dataclass(frozen=True)
class CalibrationReport:
    rows: tuple[CalibrationRow, ...]
    seed: int
    bootstrap_iterations: int

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["featurizer", "scorer", "t", "mean_recall", "ci_low", "ci_high"])
        for row in self.rows:
            writer.writerow(
                [
                    row.featurizer.value,
                    row.scorer.value,
                    f"{row.threshold:g}",
                    f"{row.mean_recall:.9f}",
                    f"{row.ci_low:.9f}",
                    f"{row.ci_high:.9f}",
                ]
            )
        return buffer.getvalue()

    def to_json(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "bootstrap_iterations": self.bootstrap_iterations,
            "rows": [
                {
                    "featurizer": r.featurizer.value,
                    "scorer": r.scorer.value,
                    "t": r.threshold,
                    "mean_recall": r.mean_recall,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "micro_recall": r.micro_recall,
                }
                for r in self.rows
            ],
        }


def _config_seed(base_seed: int, featurizer: FeaturizerMode, scorer: ScorerKind, t: float) -> int:
    payload = f"{base_seed}:{featurizer.value}:{scorer.value}:{t:g}"
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:4], "big")


def calibrate(
    aligner: SchemaAligner,
    pairs: Sequence[tuple[ReviewTable, ReviewTable]],
    featurizers: Sequence[FeaturizerMode],
    scorers: Sequence[ScorerKind],
    thresholds: Sequence[float],
    *,
    seed: int = 0,
    bootstrap_iterations: int = 1000,
) -> CalibrationReport:
    """Sweep the (featurizer, scorer, threshold) grid over table pairs.

    Pair scores are computed once per (featurizer, scorer) and re-thresholded,
    so the sweep cost is independent of the threshold grid. Mean recall is
    macro (per-table); micro recall pools matched reference aspects.
    """
    if not pairs:
        raise ValidationError("calibration needs at least one table pair")
    rows: list[CalibrationRow] = []
    for featurizer in featurizers:
        for scorer in scorers:
            scored: list[AlignmentResult] = [
                aligner.align(gen, ref, AlignmentConfig(featurizer, scorer, 0.0))
                for gen, ref in pairs
            ]
            for t in thresholds:
                recalls = []
                matched_total = 0
                ref_total = 0
                for result, (gen, ref) in zip(scored, pairs):
                    rebuilt = build_result(
                        gen,
                        ref,
                        AlignmentConfig(featurizer, scorer, t),
                        result.pair_scores,
                        result.gen_features,
                        result.ref_features,
                    )
                    recalls.append(rebuilt.recall)
                    matched_total += len(rebuilt.matched_ref_aspects)
                    ref_total += len(ref.aspects)
                mean_recall = sum(recalls) / len(recalls)
                if len(recalls) >= 2:
                    ci_low, ci_high = bootstrap_ci(
                        recalls,
                        iterations=bootstrap_iterations,
                        seed=_config_seed(seed, featurizer, scorer, t),
                    )
                else:
                    ci_low = ci_high = mean_recall
                rows.append(
                    CalibrationRow(
                        featurizer=featurizer,
                        scorer=scorer,
                        threshold=t,
                        mean_recall=mean_recall,
                        ci_low=ci_low,
                        ci_high=ci_high,
                        micro_recall=matched_total / ref_total if ref_total else 0.0,
                        per_pair_recalls=tuple(recalls),
                    )
                )
    return CalibrationReport(rows=tuple(rows), seed=seed, bootstrap_iterations=bootstrap_iterations)


# -- precision annotation export/import -----------------------------------------

PRECISION_RATINGS = ("incorrect", "partial", "complete")


def blind_config_id(config: AlignmentConfig) -> str:
    payload = f"{config.featurizer.value}|{config.scorer.value}|{config.threshold:g}"
    return "cfg-" + hashlib.sha256(payload.encode()).hexdigest()[:6]


def export_precision_annotations(results: Sequence[AlignmentResult]) -> tuple[str, dict[str, str]]:
    """CSV of predicted matched pairs for human rating, with blinded config
    labels. Returns (csv_text, blind-id -> config-label key)."""
    if not results:
        raise ValidationError("nothing to export")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["pair_id", "gen_aspect_feature", "ref_aspect_feature", "config_blind_id", "rating"])
    key: dict[str, str] = {}
    for index, result in enumerate(results):
        blind = blind_config_id(result.config)
        key[blind] = result.config.label()
        for g, r in sorted(result.matched_pairs):
            pair_id = f"{index:04d}-" + hashlib.sha256(f"{g}|{r}|{blind}".encode()).hexdigest()[:8]
            writer.writerow([pair_id, result.gen_features[g], result.ref_features[r], blind, ""])
    return buffer.getvalue(), key


def import_precision_annotations(csv_text: str) -> dict[str, Any]:
    """Compute precision bounds from rated pairs: the lower bound counts only
    complete matches, the upper bound also counts partial ones."""
    reader = csv.DictReader(io.StringIO(csv_text))
    counts: dict[str, dict[str, int]] = {}
    for row in reader:
        rating = (row.get("rating") or "").strip().casefold()
        if rating not in PRECISION_RATINGS:
            raise ValidationError(f"rating {row.get('rating')!r} not in {PRECISION_RATINGS}")
        blind = row["config_blind_id"]
        bucket = counts.setdefault(blind, {r: 0 for r in PRECISION_RATINGS})
        bucket[rating] += 1

    def bounds(bucket: dict[str, int]) -> dict[str, Any]:
        total = sum(bucket.values())
        if total == 0:
            return {"n": 0, "precision_lower": None, "precision_upper": None}
        return {
            "n": total,
            "precision_lower": bucket["complete"] / total,
            "precision_upper": (bucket["complete"] + bucket["partial"]) / total,
            "counts": dict(bucket),
        }

    overall: dict[str, int] = {r: 0 for r in PRECISION_RATINGS}
    for bucket in counts.values():
        for rating, count in bucket.items():
            overall[rating] += count
    return {
        "per_config": {blind: bounds(bucket) for blind, bucket in sorted(counts.items())},
        "overall": bounds(overall),
    }

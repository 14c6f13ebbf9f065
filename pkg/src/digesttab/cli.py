"""Command-line entry point.

Every artifact-producing run writes a manifest next to its outputs with
the config digest, input/output digests, and the cache digests it touched,
so a run can be replayed byte-for-byte from a warm cache.

Exit codes: 0 success, 1 usage, 2 validation, 3 provider/resolver,
4 generation failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import config as config_mod
from .alignment import (
    AlignmentConfig,
    FeaturizerMode,
    ScorerKind,
    calibrate,
    export_precision_annotations,
    import_precision_annotations,
)
from .corpus import CaptionIndex, compute_stats, load_corpus, nearest_captions, render_stats_text
from .curation import Strictness, run_pipeline
from .errors import (
    DigesttabError,
    GenerationFailedError,
    MalformedResponseError,
    ProviderError,
    ResolverUnavailableError,
    UsageError,
    ValidationError,
)
from .generation import ContextKind, GenerationContext
from .model import dump_table, load_table, table_to_json
from .stats import (
    LikertRating,
    RatingDimension,
    matched_vs_unmatched_report,
    render_matched_report_markdown,
    report_to_json,
)
from .value_eval import (
    ValueEvalSetting,
    export_value_annotations,
    generate_values_for_reference,
    import_value_annotations,
    render_value_report_markdown,
    score_values,
    summarize_judgments,
    write_judgments_jsonl,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_PROVIDER = 3
EXIT_GENERATION = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); usage errors are exit 1 here
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="digesttab", description=__doc__)
    parser.add_argument("--config", help="YAML/JSON run configuration file")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("curate", parents=[], help="run the curation pipeline over raw XML tables")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strictness", choices=[s.value for s in Strictness], default="high")
    p.add_argument("--resolver", help='"http" or "fixture:<records.json>"')

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--json", dest="json_out", help="write the JSON report here")

    p = sub.add_parser("generate", help="generate a table for one corpus entry")
    p.add_argument("--corpus", required=True)
    p.add_argument("--table-id", required=True)
    p.add_argument("--mode", choices=["joint", "decomposed"], required=True)
    p.add_argument("--context", choices=[c.value for c in ContextKind], default="baseline")
    p.add_argument("--n-aspects", default="ref", help='"ref" or an integer')
    p.add_argument("--out", required=True)

    p = sub.add_parser("align", help="align a generated table against a reference table")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--featurizer", choices=[f.value for f in FeaturizerMode])
    p.add_argument("--scorer", choices=[s.value for s in ScorerKind])
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")

    p = sub.add_parser("calibrate", help="sweep featurizer/scorer/threshold combinations")
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--featurizers", default="name")
    p.add_argument("--scorers", default="exact-match,jaccard")
    p.add_argument("--thresholds", default="0.1,0.3,0.5,0.7,0.9")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json")

    p = sub.add_parser("eval-values", help="generate and score values for a reference schema")
    p.add_argument("--ref", required=True)
    p.add_argument("--setting", choices=[s.value for s in ValueEvalSetting], required=True)
    p.add_argument("--scorers", default="exact-match,jaccard")
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("report", help="matched-vs-unmatched rating report")
    p.add_argument("--ratings", required=True, help="CSV: table_id, aspect, dimension, rater_id, value")
    p.add_argument("--alignments", required=True, help="JSON: {table_id: {aspect: bool}}")
    p.add_argument("--conditions", help="JSON: {table_id: condition}")
    p.add_argument("--out-json")
    p.add_argument("--out-md")

    p = sub.add_parser("export-annotations", help="export blinded annotation sheets")
    p.add_argument("--kind", choices=["schema-precision", "value"], required=True)
    p.add_argument("--results", nargs="*", default=[], help="align result JSON files (schema-precision)")
    p.add_argument("--judgments", nargs="*", default=[], help="SETTING=judgments.jsonl specs (value)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("import-annotations", help="import rated annotation sheets")
    p.add_argument("--kind", choices=["schema-precision", "value"], required=True)
    p.add_argument("--files", nargs="+", required=True)
    p.add_argument("--key", help="blind-id key JSON written at export time")
    p.add_argument("--out")

    return parser


# -- manifest helpers ----------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(obj: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _write_manifest(
    anchor: Path,
    command: str,
    cfg: config_mod.RunConfig,
    inputs: Sequence[Path],
    outputs: Sequence[Path],
    gateway=None,
) -> Path:
    manifest = {
        "command": command,
        "config_digest": cfg.digest(),
        "inputs": {str(p): _sha256_file(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256_file(Path(p)) for p in outputs if Path(p).is_file()},
    }
    if gateway is not None:
        manifest["cache"] = {
            "digests": list(gateway.stats.used_digests),
            "hits": gateway.stats.cache_hits,
            "misses": gateway.stats.cache_misses,
        }
        manifest["run"] = {"network_calls": gateway.stats.network_calls}
    if anchor.is_dir():
        path = anchor / "manifest.json"
    else:
        path = anchor.with_name(anchor.name + ".manifest.json")
    return _write_json(manifest, path)


# -- handlers -------------------------------------------------------------------


def cmd_curate(args, cfg: config_mod.RunConfig) -> int:
    resolver = config_mod.build_resolver(cfg, args.resolver)
    out_dir = Path(args.out)
    result = run_pipeline(args.input, Strictness(args.strictness), resolver, out_dir)
    outputs = sorted(out_dir.glob("*.json"))
    _write_manifest(out_dir, "curate", cfg, sorted(Path(args.input).glob("*")), outputs)
    print(f"curate: {result.funnel['stages']['final']['out']} table(s) kept; funnel at {out_dir / 'funnel.json'}")
    return EXIT_OK


def cmd_stats(args, cfg: config_mod.RunConfig) -> int:
    tables = load_corpus(args.corpus)
    stats = compute_stats(tables)
    report = stats.to_json()
    sys.stdout.write(render_stats_text(stats))
    if args.json_out:
        path = _write_json(report, Path(args.json_out))
        _write_manifest(path, "stats", cfg, sorted(Path(args.corpus).glob("*.json")), [path])
    else:
        sys.stdout.write(json.dumps(report, indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


def _resolve_context(args, cfg, corpus, ref, gateway) -> GenerationContext:
    kind = ContextKind(args.context)
    if kind is ContextKind.BASELINE or kind is ContextKind.GENERATED_CAPTION:
        return GenerationContext(kind=kind)
    if kind is ContextKind.GOLD_CAPTION:
        if not ref.caption:
            raise ValidationError(f"table {ref.table_id} has no caption for gold-caption context")
        return GenerationContext(kind=kind, caption=ref.caption)
    if kind is ContextKind.GOLD_CAPTION_REFS:
        if not ref.caption or not ref.in_text_refs:
            raise ValidationError(
                f"table {ref.table_id} lacks caption or in-text references for gold-caption-refs"
            )
        return GenerationContext(kind=kind, caption=ref.caption, in_text_refs=ref.in_text_refs)
    # few-shot: retrieve the 5 nearest captioned tables, excluding the target
    if not ref.caption:
        raise ValidationError(f"table {ref.table_id} has no caption to retrieve exemplars with")
    index = CaptionIndex.build(corpus, gateway)
    neighbors = nearest_captions(ref.caption, 5, gateway, index, exclude_table_id=ref.table_id)
    if len(neighbors) < 5:
        raise ValidationError("few-shot context needs at least 5 other captioned tables")
    by_id = {t.table_id: t for t in corpus}
    exemplars = tuple(by_id[tid] for tid, _ in neighbors)
    return GenerationContext(kind=kind, exemplars=exemplars)


def cmd_generate(args, cfg: config_mod.RunConfig) -> int:
    corpus = load_corpus(args.corpus)
    by_id = {t.table_id: t for t in corpus}
    if args.table_id not in by_id:
        raise ValidationError(f"table {args.table_id!r} not in corpus {args.corpus}")
    ref = by_id[args.table_id]
    papers = [ref.papers[key] for key in ref.row_keys if key in ref.papers]
    if len(papers) != len(ref.row_keys):
        raise ValidationError(f"table {args.table_id!r} has rows without paper records")
    n_aspects = len(ref.aspects) if args.n_aspects == "ref" else int(args.n_aspects)

    gateway = config_mod.build_gateway(cfg)
    generator = config_mod.build_generator(cfg, gateway)
    if args.mode == "joint":
        if args.context != ContextKind.BASELINE.value:
            raise ValidationError("joint mode is the no-context regime; use --context baseline")
        table = generator.generate_joint(papers, n_aspects)
    else:
        context = _resolve_context(args, cfg, corpus, ref, gateway)
        table = generator.generate_table_decomposed(papers, n_aspects, context)

    provenance = dict(table.provenance)
    provenance["reference_table"] = ref.table_id
    provenance["cache_digests"] = list(gateway.stats.used_digests)
    table = table.with_changes(provenance=provenance)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_table(table, out)
    _write_manifest(out, "generate", cfg, [Path(args.corpus) / f"{ref.table_id}.json"], [out], gateway)
    print(f"generate: wrote {out}")
    return EXIT_OK


def cmd_align(args, cfg: config_mod.RunConfig) -> int:
    align_config = config_mod.alignment_config_from(cfg, args.featurizer, args.scorer, args.threshold)
    needs_provider = align_config.featurizer is FeaturizerMode.DECONTEXT or align_config.scorer in (
        ScorerKind.EMBED,
        ScorerKind.LLM,
    )
    gateway = config_mod.build_gateway(cfg) if needs_provider else None
    aligner = config_mod.build_aligner(cfg, gateway)
    gen = load_table(args.gen)
    ref = load_table(args.ref)
    result = aligner.align(gen, ref, align_config)
    payload = result.to_json()
    if args.out:
        path = _write_json(payload, Path(args.out))
        _write_manifest(path, "align", cfg, [Path(args.gen), Path(args.ref)], [path], gateway)
    else:
        sys.stdout.write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_calibrate(args, cfg: config_mod.RunConfig) -> int:
    gen_dir, ref_dir = Path(args.gen_dir), Path(args.ref_dir)
    gen_tables = {t.table_id: t for t in load_corpus(gen_dir)}
    ref_tables = {t.table_id: t for t in load_corpus(ref_dir)}
    shared = sorted(set(gen_tables) & set(ref_tables))
    if not shared:
        raise ValidationError("no table ids shared between --gen-dir and --ref-dir")
    pairs = [(gen_tables[tid], ref_tables[tid]) for tid in shared]

    featurizers = [FeaturizerMode(f.strip()) for f in args.featurizers.split(",") if f.strip()]
    scorers = [ScorerKind(s.strip()) for s in args.scorers.split(",") if s.strip()]
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    needs_provider = FeaturizerMode.DECONTEXT in featurizers or any(
        s in (ScorerKind.EMBED, ScorerKind.LLM) for s in scorers
    )
    gateway = config_mod.build_gateway(cfg) if needs_provider else None
    aligner = config_mod.build_aligner(cfg, gateway)

    report = calibrate(aligner, pairs, featurizers, scorers, thresholds, seed=cfg.seed)
    csv_path = Path(args.out_csv)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    outputs = [csv_path]
    if args.out_json:
        outputs.append(_write_json(report.to_json(), Path(args.out_json)))
    _write_manifest(csv_path, "calibrate", cfg, [], outputs, gateway)
    print(f"calibrate: wrote {csv_path} ({len(report.rows)} configurations over {len(pairs)} pairs)")
    return EXIT_OK


def cmd_eval_values(args, cfg: config_mod.RunConfig) -> int:
    ref = load_table(args.ref)
    setting = ValueEvalSetting(args.setting)
    scorers = [ScorerKind(s.strip()) for s in args.scorers.split(",") if s.strip()]
    gateway = config_mod.build_gateway(cfg)
    generator = config_mod.build_generator(cfg, gateway)
    aligner = config_mod.build_aligner(cfg, gateway)

    generated = generate_values_for_reference(generator, ref, setting)
    judgments = score_values(ref, generated, scorers, aligner)
    summary = summarize_judgments(judgments)
    summary["setting"] = setting.value

    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    table_path = Path(str(prefix) + ".table.json")
    dump_table(generated, table_path)
    judgments_path = write_judgments_jsonl(judgments, Path(str(prefix) + ".judgments.jsonl"))
    summary_path = _write_json(summary, Path(str(prefix) + ".summary.json"))
    _write_manifest(
        summary_path, "eval-values", cfg, [Path(args.ref)], [table_path, judgments_path, summary_path], gateway
    )
    print(f"eval-values: wrote {table_path}, {judgments_path}, {summary_path}")
    return EXIT_OK


def _load_ratings_csv(path: Path) -> list[LikertRating]:
    ratings = []
    with path.open(encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            ratings.append(
                LikertRating(
                    table_id=row["table_id"],
                    aspect=row["aspect"],
                    dimension=RatingDimension(row["dimension"].strip().lower()),
                    rater_id=row["rater_id"],
                    value=int(row["value"]),
                )
            )
    return ratings


def cmd_report(args, cfg: config_mod.RunConfig) -> int:
    ratings = _load_ratings_csv(Path(args.ratings))
    alignment_doc = json.loads(Path(args.alignments).read_text(encoding="utf-8"))
    alignments = {
        (table_id, aspect): bool(flag)
        for table_id, aspects in alignment_doc.items()
        for aspect, flag in aspects.items()
    }
    conditions = None
    if args.conditions:
        conditions = json.loads(Path(args.conditions).read_text(encoding="utf-8"))
    report = matched_vs_unmatched_report(ratings, alignments, conditions, seed=cfg.seed)
    markdown = render_matched_report_markdown(report)
    payload = report_to_json(report)
    outputs = []
    if args.out_json:
        outputs.append(_write_json(payload, Path(args.out_json)))
    if args.out_md:
        md_path = Path(args.out_md)
        md_path.parent.mkdir(parents=True, exist_ok=True)
        md_path.write_text(markdown, encoding="utf-8")
        outputs.append(md_path)
    if not outputs:
        sys.stdout.write(markdown)
    else:
        _write_manifest(outputs[0], "report", cfg, [Path(args.ratings), Path(args.alignments)], outputs)
    return EXIT_OK


def cmd_export_annotations(args, cfg: config_mod.RunConfig) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "schema-precision":
        if not args.results:
            raise ValidationError("schema-precision export needs --results files")
        results = [_result_from_json(json.loads(Path(p).read_text(encoding="utf-8"))) for p in args.results]
        text, key = export_precision_annotations(results)
    else:
        if not args.judgments:
            raise ValidationError('value export needs --judgments "SETTING=file.jsonl" specs')
        by_setting = {}
        for spec in args.judgments:
            if "=" not in spec:
                raise ValidationError(f"bad --judgments spec {spec!r}, expected SETTING=file")
            setting_name, file_name = spec.split("=", 1)
            setting = ValueEvalSetting(setting_name)
            by_setting[setting] = _judgments_from_jsonl(Path(file_name))
        text, key = export_value_annotations(by_setting)
    out.write_text(text, encoding="utf-8")
    _write_json(key, out.with_suffix(out.suffix + ".key.json"))
    print(f"export-annotations: wrote {out}")
    return EXIT_OK


def cmd_import_annotations(args, cfg: config_mod.RunConfig) -> int:
    if args.kind == "schema-precision":
        if len(args.files) != 1:
            raise ValidationError("schema-precision import takes exactly one rated CSV")
        report = import_precision_annotations(Path(args.files[0]).read_text(encoding="utf-8"))
    else:
        key = None
        if args.key:
            key = json.loads(Path(args.key).read_text(encoding="utf-8"))
        texts = [Path(p).read_text(encoding="utf-8") for p in args.files]
        value_report = import_value_annotations(texts, key)
        sys.stdout.write(render_value_report_markdown(value_report))
        report = value_report.to_json()
    rendered = json.dumps(report, indent=2, ensure_ascii=False) + "\n"
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def _result_from_json(payload: Mapping[str, Any]):
    from .alignment import AlignmentResult

    config = AlignmentConfig(
        featurizer=FeaturizerMode(payload["config"]["featurizer"]),
        scorer=ScorerKind(payload["config"]["scorer"]),
        threshold=float(payload["config"]["threshold"]),
    )
    pair_scores = {(e["gen"], e["ref"]): float(e["score"]) for e in payload["pair_scores"]}
    return AlignmentResult(
        gen_table_id=payload["gen_table_id"],
        ref_table_id=payload["ref_table_id"],
        config=config,
        pair_scores=pair_scores,
        matched_ref_aspects=frozenset(payload["matched_ref_aspects"]),
        matched_pairs=frozenset(tuple(p) for p in payload["matched_pairs"]),
        recall=float(payload["recall"]),
        gen_features=dict(payload["gen_features"]),
        ref_features=dict(payload["ref_features"]),
        greedy_assignment=tuple(tuple(p) for p in payload["greedy_assignment"]),
    )


def _judgments_from_jsonl(path: Path):
    from .model import CellValue
    from .value_eval import ValuePairJudgment

    judgments = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        judgments.append(
            ValuePairJudgment(
                row=obj["row"],
                aspect=obj["aspect"],
                gold=CellValue(text=obj["gold"], empty=bool(obj["gold_empty"])),
                generated=CellValue(text=obj["generated"], empty=bool(obj["generated_empty"])),
                auto_scores=obj.get("auto_scores") or {},
                human_label=obj.get("human_label"),
                table_id=obj.get("table_id", ""),
            )
        )
    return judgments


HANDLERS = {
    "curate": cmd_curate,
    "stats": cmd_stats,
    "generate": cmd_generate,
    "align": cmd_align,
    "calibrate": cmd_calibrate,
    "eval-values": cmd_eval_values,
    "report": cmd_report,
    "export-annotations": cmd_export_annotations,
    "import-annotations": cmd_import_annotations,
}


def dispatch(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if not args.command:
            raise UsageError(parser.format_usage())
        cfg = config_mod.load_config(args.config) if args.config else config_mod.load_config()
        return HANDLERS[args.command](args, cfg)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FileNotFoundError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ProviderError, ResolverUnavailableError) as err:
        print(f"provider error: {err}", file=sys.stderr)
        return EXIT_PROVIDER
    except (GenerationFailedError, MalformedResponseError) as err:
        print(f"generation failed: {err}", file=sys.stderr)
        return EXIT_GENERATION
    except DigesttabError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

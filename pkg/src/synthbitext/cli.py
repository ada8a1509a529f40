"""Command-line entry point: every pipeline stage and evaluation as a subcommand.

stdout carries only machine-readable JSON results; progress, counts and
diagnostics go to stderr, so the tool composes in shell pipelines.

Exit codes: 0 success, 1 validation or usage error, 2 backend/transport
error, 3 data error. ``--dry-run`` validates inputs and prints the execution
plan without ever opening a network connection.

Stage subcommands (``preprocess``, ``translate``, ``filter-sim``,
``backtranslate``, ``filter-rt``) run in two modes: given ``--config`` only,
they execute their stage against the configured checkpoint directory, so a
stage-by-stage run is byte-identical to one ``pipeline`` invocation; given
``--in`` they operate on explicit files instead.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema

from . import corpus, evalharness
from .backends import BackendClient, HttpTransport, ProtocolError, TransportError
from .corpus import DatasetError
from .pipeline import (
    STAGES,
    Pipeline,
    PipelineConfig,
    PipelineStageError,
    RoundTripRecord,
    filter_roundtrip,
    filter_similarity,
    make_roundtrip_records,
    render_flat_text,
)
from .prompts import ResponseParseError

log = logging.getLogger(__name__)

_SCHEMA_RESOURCE = "config.schema.json"


class CliError(Exception):
    """Validation problem; maps to exit code 1."""

    exit_code = 1


class _UsageError(CliError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep control over the exit code
        raise _UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


def config_schema() -> dict:
    from importlib.resources import files

    return json.loads(files("synthbitext").joinpath(_SCHEMA_RESOURCE).read_text("utf-8"))


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate ``pipeline.json`` (JSON Schema + semantic checks)."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc.msg}") from exc
    try:
        jsonschema.validate(data, config_schema())
    except jsonschema.ValidationError as exc:
        location = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(f"config {path}: {exc.message} (at {location})") from exc
    try:
        return PipelineConfig.from_dict(data, base_dir=path.parent)
    except ValueError as exc:
        raise CliError(f"config {path}: {exc}") from exc


def _emit(document) -> None:
    print(json.dumps(document, ensure_ascii=False))


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _require_file(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing required {what}")
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _config_for(args) -> PipelineConfig:
    if not args.config:
        raise CliError("this command requires --config")
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.input:
        config = dataclasses.replace(
            config, dataset=str(_require_file(args.input, "--in dataset"))
        )
    config.validate()
    return config


def _dry_run_plan(command: str, plan: list[str]) -> int:
    _emit({"command": command, "ok": True, "plan": plan})
    return 0


# ---------------------------------------------------------------------------
# stage commands


_STAGE_OF_COMMAND = {
    "preprocess": "preprocess",
    "translate": "translate",
    "filter-sim": "filter_sim",
    "backtranslate": "backtranslate",
    "filter-rt": "finalize",  # the round-trip filter also assembles final outputs
}


def _run_config_stage(args, command: str, transport_factory) -> int:
    config = _config_for(args)
    pipeline = Pipeline(config, transport_factory=transport_factory)
    target = _STAGE_OF_COMMAND[command]
    pending = pipeline.plan()
    wanted = [s for s in STAGES[: STAGES.index(target) + 1] if s in pending]
    own = {"filter-rt": ["filter_rt", "finalize"]}.get(command, [target])
    if args.dry_run:
        return _dry_run_plan(command, wanted)
    predecessors = [s for s in wanted if s not in own]
    if predecessors:
        raise CliError(
            f"stage {command!r} requires earlier stages {predecessors} to have "
            f"completed in {config.checkpoint_dir}; run them or use 'pipeline'"
        )
    if not wanted:
        _info(f"stage {command!r} already complete in {config.checkpoint_dir}")
        _emit({"command": command, "ok": True, "skipped": True})
        return 0
    pipeline.run(until=target)
    counts = json.loads(
        (Path(config.checkpoint_dir) / Pipeline.STATE).read_text(encoding="utf-8")
    )["counts"]
    _emit({"command": command, "ok": True, "counts": counts})
    return 0


def cmd_preprocess(args, transport_factory) -> int:
    if args.config and not args.input:
        return _run_config_stage(args, "preprocess", transport_factory)
    # standalone file mode
    path = _require_file(args.input, "--in dataset")
    if not args.kind:
        raise CliError("standalone preprocess requires --kind")
    if not args.output:
        raise CliError("standalone preprocess requires --out")
    if args.dry_run:
        return _dry_run_plan("preprocess", ["preprocess"])
    dataset = corpus.load_dataset(path, args.kind)
    cutoff = None
    if args.kind == "sa":
        if args.no_q3:
            retained = dataset
        else:
            retained, cutoff = corpus.q3_length_filter(dataset, cutoff=args.cutoff)
    elif args.kind == "mcqa":
        excluded = _parse_choice_list(args.exclude_choices) if args.exclude_choices else {2, 6}
        retained = corpus.drop_choice_counts(dataset, excluded)
    else:
        raise CliError("preprocess supports kinds 'sa' and 'mcqa'")
    corpus.save_dataset(retained, args.output)
    _info(f"preprocess: {len(dataset)} -> {len(retained)} entries")
    _emit({"input": len(dataset), "retained": len(retained), "cutoff": cutoff})
    return 0


def _parse_choice_list(raw: str) -> set[int]:
    try:
        return {int(piece) for piece in raw.split(",") if piece.strip()}
    except ValueError as exc:
        raise CliError(f"--exclude-choices must be comma-separated integers: {raw!r}") from exc


def _client(config: PipelineConfig, role: str, transport_factory) -> BackendClient:
    endpoint = config.endpoints.get(role)
    if endpoint is None:
        raise CliError(f"config defines no {role!r} endpoint")
    transport = transport_factory(endpoint) if transport_factory else HttpTransport()
    return BackendClient(endpoint, transport=transport)


def cmd_translate(args, transport_factory) -> int:
    if not args.input:
        return _run_config_stage(args, "translate", transport_factory)
    config = _config_for(args)
    path = Path(config.dataset)
    if not args.output:
        raise CliError("standalone translate requires --out")
    if args.dry_run:
        return _dry_run_plan("translate", ["translate"])
    dataset = corpus.load_dataset(path, config.task)
    client = _client(config, "translator", transport_factory)
    from .pipeline import _entry_segments  # single source of truth for granularity

    segments = [_entry_segments(e) for e in dataset]
    flat = [t for segs in segments for t in segs]
    translated = client.translate_batch(flat, config.src_lang, config.tgt_lang)
    records = []
    cursor = 0
    for entry, segs in zip(dataset, segments):
        records.append({"id": entry.id, "segments": translated[cursor : cursor + len(segs)]})
        cursor += len(segs)
    corpus.write_jsonl(records, args.output)
    _info(f"translate: {len(dataset)} entries ({len(flat)} segments)")
    _emit({"entries": len(dataset), "segments": len(flat), "out": str(args.output)})
    return 0


def cmd_filter_sim(args, transport_factory) -> int:
    if not args.input:
        return _run_config_stage(args, "filter-sim", transport_factory)
    config = _config_for(args)
    fwd_path = _require_file(args.fwd, "--fwd translations file")
    if not args.output:
        raise CliError("standalone filter-sim requires --out")
    if args.dry_run:
        return _dry_run_plan("filter-sim", ["filter_sim"])
    dataset = corpus.load_dataset(config.dataset, config.task)
    forward = corpus.read_jsonl(fwd_path)
    if [e.id for e in dataset] != [r["id"] for r in forward]:
        raise DatasetError("forward translations do not align with the dataset")
    threshold = args.threshold if args.threshold is not None else config.similarity_threshold
    client = _client(config, "embedder", transport_factory)
    retained, decisions = filter_similarity(
        [render_flat_text(e) for e in dataset],
        ["\n".join(r["segments"]) for r in forward],
        client,
        threshold,
        ids=[e.id for e in dataset],
    )
    corpus.write_jsonl((d.to_record() for d in decisions), args.output)
    _info(f"filter-sim: {len(retained)}/{len(dataset)} retained at threshold {threshold}")
    _emit({"retained": len(retained), "total": len(dataset), "threshold": threshold})
    return 0


def cmd_backtranslate(args, transport_factory) -> int:
    if not args.input:
        return _run_config_stage(args, "backtranslate", transport_factory)
    config = _config_for(args)
    fwd_path = _require_file(args.fwd, "--fwd translations file")
    if not args.output:
        raise CliError("standalone backtranslate requires --out")
    if args.dry_run:
        return _dry_run_plan("backtranslate", ["backtranslate"])
    dataset = corpus.load_dataset(config.dataset, config.task)
    forward = {r["id"]: r["segments"] for r in corpus.read_jsonl(fwd_path)}
    client = _client(config, "translator", transport_factory)
    segments = [forward[e.id] for e in dataset]
    flat = [t for segs in segments for t in segs]
    back_flat = client.translate_batch(flat, src_lang=config.tgt_lang, tgt_lang=config.src_lang)
    back = []
    cursor = 0
    for segs in segments:
        back.append("\n".join(back_flat[cursor : cursor + len(segs)]))
        cursor += len(segs)
    records = make_roundtrip_records(
        ids=[e.id for e in dataset],
        src_texts=[render_flat_text(e) for e in dataset],
        fwd_texts=["\n".join(forward[e.id]) for e in dataset],
        back_texts=back,
    )
    corpus.write_jsonl((r.to_record() for r in records), args.output)
    _info(f"backtranslate: {len(records)} round-trip records")
    _emit({"records": len(records), "out": str(args.output)})
    return 0


def cmd_filter_rt(args, transport_factory) -> int:
    if not args.input:
        return _run_config_stage(args, "filter-rt", transport_factory)
    path = _require_file(args.input, "--in round-trip records file")
    if not args.output:
        raise CliError("standalone filter-rt requires --out")
    if args.dry_run:
        return _dry_run_plan("filter-rt", ["filter_rt"])
    records = [RoundTripRecord.from_record(r) for r in corpus.read_jsonl(path)]
    retained, decisions, thresholds = filter_roundtrip(
        records, mode=args.mode, mu_bleu=args.mu_bleu, mu_meteor=args.mu_meteor
    )
    out = Path(args.output)
    corpus.write_jsonl((d.to_record() for d in decisions), out)
    thresholds_doc = {
        "mode": thresholds.mode,
        "mu_bleu": thresholds.mu_bleu,
        "mu_meteor": thresholds.mu_meteor,
    }
    thresholds_path = out.with_name(out.stem + ".thresholds.json")
    thresholds_path.write_text(
        json.dumps(thresholds_doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    _info(f"filter-rt: {len(retained)}/{len(records)} records retained")
    _emit({**thresholds_doc, "retained": len(retained), "total": len(records)})
    return 0


def cmd_pipeline(args, transport_factory) -> int:
    config = _config_for(args)
    pipeline = Pipeline(config, transport_factory=transport_factory)
    if args.dry_run:
        return _dry_run_plan("pipeline", pipeline.plan())
    pairs, report = pipeline.run()
    _info(f"pipeline: {report.stage_counts}")
    _emit(
        {
            "stage_counts": report.stage_counts,
            "thresholds": report.thresholds,
            "outputs": {
                name: str(pipeline.path(name))
                for name in Pipeline.OUTPUT_FILES
            },
            "pairs": len(pairs),
        }
    )
    return 0


# ---------------------------------------------------------------------------
# evaluation commands


def cmd_stats(args, transport_factory) -> int:
    path = _require_file(args.input, "--in dataset")
    if not args.kind:
        raise CliError("stats requires --kind")
    if args.dry_run:
        return _dry_run_plan("stats", ["stats"])
    dataset = corpus.load_dataset(path, args.kind)
    stats = corpus.compute_corpus_stats(dataset)
    _emit(stats.to_json_dict())
    return 0


def cmd_eval_mt(args, transport_factory) -> int:
    manifest = _require_file(args.suite, "--suite manifest")
    if not args.hyps:
        raise CliError("eval-mt requires --hyps directory")
    hyps_dir = Path(args.hyps)
    if not hyps_dir.is_dir():
        raise CliError(f"--hyps directory not found: {hyps_dir}")
    if args.dry_run:
        return _dry_run_plan("eval-mt", ["eval-mt"])
    suite = evalharness.load_suite_manifest(manifest)
    outputs = {}
    for name in suite.subsets:
        hyp_file = hyps_dir / f"{name}.txt"
        if not hyp_file.is_file():
            raise CliError(f"missing hypothesis file for subset {name!r}: {hyp_file}")
        outputs[name] = evalharness.load_hypotheses(hyp_file)
    report = evalharness.evaluate_mt(suite, outputs, system=args.system)
    _info(evalharness.render_report_table(report))
    document = report.to_json_dict()
    if args.output:
        Path(args.output).write_text(
            json.dumps(document, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    _emit(document)
    return 0


def cmd_eval_task(args, transport_factory) -> int:
    preds_path = _require_file(args.preds, "--preds file")
    gold_path = _require_file(args.gold, "--gold dataset")
    if args.task not in ("sa", "mcqa"):
        raise CliError("eval-task requires --task sa|mcqa")
    if args.dry_run:
        return _dry_run_plan("eval-task", ["eval-task"])
    gold = corpus.load_dataset(gold_path, args.task)
    preds_by_id = {}
    for record in corpus.read_jsonl(preds_path):
        if "id" not in record or "pred" not in record:
            raise DatasetError("prediction records need 'id' and 'pred' fields")
        preds_by_id[record["id"]] = record["pred"]
    missing = [e.id for e in gold if e.id not in preds_by_id]
    if missing:
        raise DatasetError(f"missing predictions for ids {missing[:10]}")
    preds = [preds_by_id[e.id] for e in gold]
    golds = [e.label if args.task == "sa" else e.answer for e in gold]
    scores = evalharness.evaluate_task(preds, golds, args.task)
    _emit(
        {
            "task": args.task,
            "balanced_accuracy": scores.balanced_accuracy,
            "f1": scores.f1,
            "per_class_recall": {str(k): v for k, v in sorted(scores.per_class_recall.items())},
        }
    )
    return 0


def cmd_compare_gold(args, transport_factory) -> int:
    config = _config_for(args)
    synthetic_path = _require_file(args.synthetic, "--synthetic corpus")
    gold_path = _require_file(args.gold, "--gold corpus")
    if args.dry_run:
        return _dry_run_plan("compare-gold", ["compare-gold"])
    synthetic = corpus.load_dataset(synthetic_path, "parallel")
    gold = corpus.load_dataset(gold_path, "parallel")
    client = _client(config, "embedder", transport_factory)
    score = evalharness.compare_to_gold(synthetic, gold, client)
    _emit({"score": score, "pairs": len(synthetic)})
    return 0


def cmd_fertility(args, transport_factory) -> int:
    texts_path = _require_file(args.input, "--in texts file")
    tokens_path = _require_file(args.tokens, "--tokens file")
    if args.dry_run:
        return _dry_run_plan("fertility", ["fertility"])
    texts = texts_path.read_text(encoding="utf-8").splitlines()
    token_counts = []
    for line_no, line in enumerate(tokens_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            token_counts.append(int(line.strip()))
        except ValueError as exc:
            raise DatasetError(
                f"token counts must be integers", line=line_no, path=tokens_path
            ) from exc
    ratio = evalharness.tokenizer_fertility(texts, token_counts)
    _emit({"fertility": ratio, "texts": len(texts)})
    return 0


# ---------------------------------------------------------------------------
# parser


_HANDLERS = {
    "preprocess": cmd_preprocess,
    "translate": cmd_translate,
    "filter-sim": cmd_filter_sim,
    "backtranslate": cmd_backtranslate,
    "filter-rt": cmd_filter_rt,
    "pipeline": cmd_pipeline,
    "eval-mt": cmd_eval_mt,
    "eval-task": cmd_eval_task,
    "stats": cmd_stats,
    "compare-gold": cmd_compare_gold,
    "fertility": cmd_fertility,
}


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline.json configuration file")
    common.add_argument("--in", dest="input", help="input file (enables standalone file mode)")
    common.add_argument("--out", dest="output", help="output file")
    common.add_argument(
        "--dry-run",
        action="store_true",
        help="validate and print the plan; never talks to any backend",
    )
    common.add_argument("--seed", type=int, help="override the configured random seed")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = _Parser(prog="synthbitext", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("preprocess", parents=[common], help="length/choice-count filtering")
    p.add_argument("--kind", choices=("sa", "mcqa"), help="dataset kind (standalone mode)")
    p.add_argument("--cutoff", type=int, help="fixed word-count cutoff instead of deriving Q3")
    p.add_argument("--no-q3", action="store_true", help="skip the length filter (SA)")
    p.add_argument("--exclude-choices", help="comma-separated choice counts to drop (MCQA)")

    sub.add_parser("translate", parents=[common], help="forward translation")

    p = sub.add_parser("filter-sim", parents=[common], help="embedding-similarity filter")
    p.add_argument("--fwd", help="forward translations JSONL (standalone mode)")
    p.add_argument("--threshold", type=float, help="override the similarity threshold")

    p = sub.add_parser("backtranslate", parents=[common], help="back-translation + scoring")
    p.add_argument("--fwd", help="forward translations JSONL (standalone mode)")

    p = sub.add_parser("filter-rt", parents=[common], help="round-trip BLEU/METEOR filter")
    p.add_argument("--mode", choices=("data_mean", "fixed"), default="data_mean")
    p.add_argument("--mu-bleu", type=float, help="fixed BLEU threshold")
    p.add_argument("--mu-meteor", type=float, help="fixed METEOR threshold")

    sub.add_parser("pipeline", parents=[common], help="run all stages")

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("--kind", choices=corpus.KINDS, help="dataset kind")

    p = sub.add_parser("eval-mt", parents=[common], help="score translation outputs")
    p.add_argument("--suite", help="suite manifest JSON")
    p.add_argument("--hyps", help="directory with <subset>.txt hypothesis files")
    p.add_argument("--system", default="system", help="system name for the report")

    p = sub.add_parser("eval-task", parents=[common], help="score SA/MCQA predictions")
    p.add_argument("--preds", help="predictions JSONL ({'id':..., 'pred':...})")
    p.add_argument("--gold", help="gold dataset JSONL")
    p.add_argument("--task", choices=("sa", "mcqa"))

    p = sub.add_parser("compare-gold", parents=[common], help="synthetic-vs-gold embedding cosine")
    p.add_argument("--synthetic", help="synthetic parallel corpus JSONL")
    p.add_argument("--gold", help="gold parallel corpus JSONL")

    p = sub.add_parser("fertility", parents=[common], help="tokens-per-word ratio")
    p.add_argument("--tokens", help="file with one token count per line")

    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineStageError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, (TransportError, ProtocolError)):
        return 2
    if isinstance(exc, CliError):
        return exc.exit_code
    if isinstance(exc, (DatasetError, ResponseParseError)):
        return 3
    if isinstance(exc, FileNotFoundError):
        return 1
    if isinstance(exc, (ValueError, KeyError)):
        return 3
    raise exc


def run_cli(argv=None, transport_factory=None) -> int:
    """Parse ``argv`` and execute; returns the process exit code.

    ``transport_factory`` (endpoint -> transport) exists for tests; the
    default builds HTTP transports. ``--dry-run`` never invokes it.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _HANDLERS[args.command](args, transport_factory)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

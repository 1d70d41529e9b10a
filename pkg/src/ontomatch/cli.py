"""Command-line entry point for the matching pipeline.

Verbs: build-kb, predict, match, eval, compare, gen-synthetic, run-all.
Global flags (--config, --out, --seed, --k, --tau) may appear after any
verb; flag values override the config file.

Exit codes: 0 success, 2 configuration error, 3 input parse error,
4 embedding/LLM endpoint failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import config as config_mod
from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateEntityId,
    EmptyOntology,
    EndpointUnavailable,
    InvalidParameter,
    MalformedRecord,
    MismatchedInputs,
    MissingPlaceholder,
    MissingVector,
    OntomatchError,
    ProviderUnavailable,
    StaleKB,
    UnknownEntity,
    ZeroVector,
)
from .evaluation import (
    SPLIT_FULL,
    SPLIT_TEST,
    SPLIT_TRAIN,
    compare_runs,
    evaluate,
    load_reference,
    split_reference,
    write_eval_report,
)
from .fileio import atomic_write_text, format_wall_time
from .matcher import (
    Alignment,
    MatchRunReport,
    PIPELINE_BASELINE,
    PIPELINE_MILA,
    match_baseline,
    match_mila,
    read_alignment,
    read_report,
    write_alignment,
    write_report,
    write_trace,
)
from .ontology import load_ontology
from .retrieval import (
    build_candidate_dbs,
    build_kb,
    load_candidate_db,
    load_kb,
    save_candidate_db,
    save_kb,
)
from .synth import generate_corpus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_ENDPOINT = 4

_CONFIG_ERRORS = (ConfigError, InvalidParameter, StaleKB, MismatchedInputs)
_PARSE_ERRORS = (
    MalformedRecord,
    DuplicateEntityId,
    EmptyOntology,
    UnknownEntity,
    MissingVector,
    MissingPlaceholder,
    ZeroVector,
    DimensionMismatch,
)
_ENDPOINT_ERRORS = (EndpointUnavailable, ProviderUnavailable)


def _kb_dir(cfg) -> str:
    return os.path.join(cfg.out, "kb")


def _candidates_dir(cfg) -> str:
    return os.path.join(cfg.out, "candidates")


def _run_dir(cfg, run_id: str) -> str:
    return os.path.join(cfg.out, "runs", run_id)


def _load_cfg(args) -> config_mod.RunConfig:
    values = config_mod.load_config_file(args.config) if args.config else {}
    return config_mod.build_config(
        values,
        out=getattr(args, "out", None),
        seed=getattr(args, "seed", None),
        k=getattr(args, "k", None),
        tau=getattr(args, "tau", None),
    )


def _load_ontologies(cfg):
    if not cfg.source_dump or not cfg.target_dump:
        raise ConfigError(
            "source.dump and target.dump must be set (config file or flags)"
        )
    source = load_ontology(cfg.source_dump, cfg.source_name)
    target = load_ontology(cfg.target_dump, cfg.target_name)
    return source, target


def _write_timings(directory: str, name: str, seconds: float) -> None:
    payload = {name + "_s": round(seconds, 3), name: format_wall_time(seconds)}
    atomic_write_text(
        os.path.join(directory, "timings.json"),
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
    )


def cmd_build_kb(args) -> int:
    cfg = _load_cfg(args)
    source, target = _load_ontologies(cfg)
    provider = config_mod.build_provider(cfg)
    start = time.perf_counter()
    source_kb = build_kb(source, provider)
    target_kb = build_kb(target, provider)
    kb_dir = _kb_dir(cfg)
    save_kb(source_kb, os.path.join(kb_dir, "source.kb"))
    save_kb(target_kb, os.path.join(kb_dir, "target.kb"))
    elapsed = time.perf_counter() - start
    _write_timings(kb_dir, "kb_build", elapsed)
    print(
        f"built KBs: {len(source_kb)} + {len(target_kb)} labels "
        f"(dim {provider.dim}) in {format_wall_time(elapsed)}"
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    source, target = _load_ontologies(cfg)
    provider = config_mod.build_provider(cfg)
    kb_dir = _kb_dir(cfg)
    source_kb = load_kb(
        os.path.join(kb_dir, "source.kb"), expected_fingerprint=provider.fingerprint
    )
    target_kb = load_kb(
        os.path.join(kb_dir, "target.kb"), expected_fingerprint=provider.fingerprint
    )
    start = time.perf_counter()
    s2t, t2s = build_candidate_dbs(
        source, target, source_kb, target_kb, cfg.k, cfg.tau
    )
    cand_dir = _candidates_dir(cfg)
    save_candidate_db(s2t, os.path.join(cand_dir, "s2t.tsv"))
    save_candidate_db(t2s, os.path.join(cand_dir, "t2s.tsv"))
    elapsed = time.perf_counter() - start
    _write_timings(cand_dir, "predict", elapsed)
    print(
        f"candidate DBs: {s2t.total_candidates} s2t + {t2s.total_candidates} t2s "
        f"pairs (k={cfg.k}, tau={cfg.tau}) in {format_wall_time(elapsed)}"
    )
    return EXIT_OK


def _default_run_id(pipeline: str) -> str:
    return f"{time.strftime('%Y%m%dT%H%M%S')}-{pipeline}-{os.getpid()}"


def _load_dbs(cfg, source, target):
    cand_dir = _candidates_dir(cfg)
    s2t_path = os.path.join(cand_dir, "s2t.tsv")
    t2s_path = os.path.join(cand_dir, "t2s.tsv")
    for path in (s2t_path, t2s_path):
        if not os.path.exists(path):
            raise ConfigError(
                f"candidate DB {path} does not exist; run `ontomatch predict` first"
            )
    s2t = load_candidate_db(s2t_path, source)
    t2s = load_candidate_db(t2s_path, target)
    for db in (s2t, t2s):
        if db.k != cfg.k or db.tau != cfg.tau:
            raise StaleKB(
                f"candidate DB was built with (k={db.k}, tau={db.tau}) but the "
                f"run asks for (k={cfg.k}, tau={cfg.tau}); re-run predict"
            )
    return s2t, t2s


def _run_match(cfg, pipeline: str, run_id: str) -> tuple[MatchRunReport, str]:
    source, target = _load_ontologies(cfg)
    s2t, t2s = _load_dbs(cfg, source, target)
    run_dir = _run_dir(cfg, run_id)
    os.makedirs(run_dir, exist_ok=True)
    llm = config_mod.build_llm_client(
        cfg, log_path=os.path.join(run_dir, "llm_log.jsonl")
    )
    template = config_mod.load_template(cfg)
    if pipeline == PIPELINE_MILA:
        report = match_mila(
            None, s2t, t2s, llm, template,
            source_onto=source, target_onto=target,
            max_workers=cfg.match_workers,
        )
    else:
        report = match_baseline(
            None, s2t, llm, template,
            source_onto=source, target_onto=target,
            max_workers=cfg.match_workers,
        )
    write_alignment(report.alignment, os.path.join(run_dir, "alignment.tsv"))
    write_trace(report.trace, os.path.join(run_dir, "trace.tsv"))
    write_report(report, os.path.join(run_dir, "report.json"))
    atomic_write_text(
        os.path.join(run_dir, "config.txt"), config_mod.snapshot(cfg)
    )
    return report, run_dir


def cmd_match(args) -> int:
    cfg = _load_cfg(args)
    pipeline = args.pipeline
    run_id = args.run_id or _default_run_id(pipeline)
    report, run_dir = _run_match(cfg, pipeline, run_id)
    print(
        f"{pipeline}: {len(report.alignment)} correspondences, "
        f"{report.llm_query_count} LLM queries, {report.hcb_count} HCB accepts, "
        f"{format_wall_time(report.wall_times.get('match', 0.0))} "
        f"-> {run_dir}"
    )
    if report.multi_matched_targets:
        print(
            f"note: {len(report.multi_matched_targets)} target(s) matched by "
            "several sources (see report.json)"
        )
    if report.partial:
        print(
            f"error: run aborted early, partial results kept: "
            f"{report.abort_reason}",
            file=sys.stderr,
        )
        return EXIT_ENDPOINT
    return EXIT_OK


def _pick_split(reference, split: str, fraction: float, seed: int):
    if split == SPLIT_FULL:
        return reference
    train, test = split_reference(reference, fraction=fraction, seed=seed)
    return train if split == SPLIT_TRAIN else test


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    alignment = read_alignment(args.alignment)
    reference = _pick_split(
        load_reference(args.reference), args.split, args.split_fraction, cfg.seed
    )
    report = evaluate(
        alignment,
        reference,
        metadata={
            "alignment_path": args.alignment,
            "reference_path": args.reference,
            "split": args.split,
        },
    )
    out_path = os.path.join(os.path.dirname(args.alignment) or ".", "eval.json")
    write_eval_report(report, out_path)
    print(report.summary())
    return EXIT_OK


def _report_from_run_dir(run_dir: str) -> MatchRunReport:
    alignment_path = os.path.join(run_dir, "alignment.tsv")
    report_path = os.path.join(run_dir, "report.json")
    for path in (alignment_path, report_path):
        if not os.path.exists(path):
            raise ConfigError(f"{run_dir} is not a run directory ({path} missing)")
    alignment: Alignment = read_alignment(alignment_path)
    data = read_report(report_path)
    return MatchRunReport(
        pipeline=data["pipeline"],
        alignment=alignment,
        trace=[],
        llm_query_count=data["llm_query_count"],
        hcb_count=data["hcb_count"],
        wall_times=data.get("wall_times_s", {}),
        partial=data.get("partial", False),
        abort_reason=data.get("abort_reason"),
        multi_matched_targets=data.get("multi_matched_targets", []),
    )


def cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    reference = load_reference(args.reference)
    report_a = _report_from_run_dir(args.run_dirs[0])
    report_b = _report_from_run_dir(args.run_dirs[1])
    eval_a = evaluate(report_a.alignment, reference)
    eval_b = evaluate(report_b.alignment, reference)
    comparison = compare_runs(report_a, eval_a, report_b, eval_b)
    text = comparison.render_text()
    atomic_write_text(os.path.join(cfg.out, "compare.txt"), text)
    atomic_write_text(os.path.join(cfg.out, "compare.tsv"), comparison.render_tsv())
    print(text, end="")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    cfg = _load_cfg(args)
    corpus_dir = os.path.join(cfg.out, "synthetic")
    corpus = generate_corpus(
        corpus_dir,
        n_entities=args.n,
        synonym_rate=args.synonym_rate,
        noise_level=args.noise_level,
        hcb_fraction=args.hcb_fraction,
        seed=cfg.seed,
    )
    config_lines = [
        f"source.dump = {os.path.abspath(corpus.source_path)}",
        "source.name = SRC",
        f"target.dump = {os.path.abspath(corpus.target_path)}",
        "target.name = TGT",
        "embedding.kind = file",
        f"embedding.file = {os.path.abspath(corpus.vectors_path)}",
        "llm.kind = oracle",
        f"llm.reference = {os.path.abspath(corpus.reference_path)}",
        f"eval.reference = {os.path.abspath(corpus.reference_path)}",
        f"out = {os.path.abspath(cfg.out)}",
        f"k = {cfg.k}",
        f"tau = {cfg.tau!r}",
        f"seed = {cfg.seed}",
    ]
    config_path = os.path.join(corpus_dir, "corpus.config")
    atomic_write_text(config_path, "\n".join(config_lines) + "\n")
    print(
        f"synthetic corpus: {corpus.n_pairs} pairs ({corpus.hcb_pairs} HCB, "
        f"{corpus.parasite_pairs} rank-2), dim {corpus.dim} -> {corpus_dir}"
    )
    print(f"ready-to-run config: {config_path}")
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _load_cfg(args)
    rc = cmd_build_kb(args)
    if rc != EXIT_OK:
        return rc
    rc = cmd_predict(args)
    if rc != EXIT_OK:
        return rc
    pipelines = (
        [PIPELINE_MILA, PIPELINE_BASELINE]
        if args.pipeline == "both"
        else [args.pipeline]
    )
    base_run_id = args.run_id or _default_run_id("all")
    run_dirs = []
    for pipeline in pipelines:
        run_id = f"{base_run_id}-{pipeline}" if len(pipelines) > 1 else base_run_id
        report, run_dir = _run_match(cfg, pipeline, run_id)
        run_dirs.append(run_dir)
        print(
            f"{pipeline}: {len(report.alignment)} correspondences, "
            f"{report.llm_query_count} LLM queries, {report.hcb_count} HCB accepts "
            f"-> {run_dir}"
        )
        if report.partial:
            print(
                f"error: run aborted early, partial results kept: "
                f"{report.abort_reason}",
                file=sys.stderr,
            )
            return EXIT_ENDPOINT
    if cfg.eval_reference:
        reference = load_reference(cfg.eval_reference)
        for run_dir in run_dirs:
            alignment = read_alignment(os.path.join(run_dir, "alignment.tsv"))
            report = evaluate(
                alignment, reference, metadata={"alignment_path": run_dir}
            )
            write_eval_report(report, os.path.join(run_dir, "eval.json"))
            print(f"{os.path.basename(run_dir)}: {report.summary()}")
        if len(run_dirs) == 2:
            report_a = _report_from_run_dir(run_dirs[0])
            report_b = _report_from_run_dir(run_dirs[1])
            comparison = compare_runs(
                report_a,
                evaluate(report_a.alignment, reference),
                report_b,
                evaluate(report_b.alignment, reference),
            )
            atomic_write_text(
                os.path.join(cfg.out, "compare.txt"), comparison.render_text()
            )
            atomic_write_text(
                os.path.join(cfg.out, "compare.tsv"), comparison.render_tsv()
            )
            print(comparison.render_text(), end="")
    else:
        print("no eval.reference configured; skipping evaluation")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key=value config file")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--k", type=int, help="top-k candidates per label")
    common.add_argument("--tau", type=float, help="similarity threshold")
    common.add_argument(
        "--verbose", action="store_true", help="log progress at INFO level"
    )

    parser = argparse.ArgumentParser(
        prog="ontomatch",
        description="Batch ontology matching: embedding retrieval, "
        "mutual-rank shortcuts, budgeted LLM confirmation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "build-kb", parents=[common], help="embed both ontologies into vector KBs"
    )
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser(
        "predict", parents=[common],
        help="build both directional candidate DBs from the KBs",
    )
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser(
        "match", parents=[common], help="run a matching pipeline over the DBs"
    )
    p.add_argument(
        "--pipeline", choices=[PIPELINE_MILA, PIPELINE_BASELINE],
        default=PIPELINE_MILA,
    )
    p.add_argument(
        "--run-id", help="run directory name (default: timestamp-pipeline-pid)"
    )
    p.set_defaults(func=cmd_match)

    p = sub.add_parser(
        "eval", parents=[common], help="score an alignment against a reference"
    )
    p.add_argument("--alignment", required=True, help="alignment file to score")
    p.add_argument("--reference", required=True, help="reference alignment TSV")
    p.add_argument(
        "--split", choices=[SPLIT_FULL, SPLIT_TRAIN, SPLIT_TEST],
        default=SPLIT_FULL, help="restrict the reference to a split",
    )
    p.add_argument("--split-fraction", type=float, default=0.7)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "compare", parents=[common], help="compare two finished run directories"
    )
    p.add_argument("run_dirs", nargs=2, metavar="RUN_DIR")
    p.add_argument("--reference", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "gen-synthetic", parents=[common],
        help="generate a synthetic corpus with a known reference",
    )
    p.add_argument("--n", type=int, required=True, help="number of matched pairs")
    p.add_argument("--synonym-rate", type=float, default=0.0)
    p.add_argument("--noise-level", type=float, default=0.0)
    p.add_argument("--hcb-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser(
        "run-all", parents=[common],
        help="build-kb, predict, match, and eval in one go",
    )
    p.add_argument(
        "--pipeline",
        choices=[PIPELINE_MILA, PIPELINE_BASELINE, "both"],
        default=PIPELINE_MILA,
    )
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except _ENDPOINT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except OntomatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()

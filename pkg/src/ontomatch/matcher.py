"""Bidirectional/HCB identification and the two matching pipelines.

The prioritized depth-first pipeline walks each source entity's candidate
list in rank order: candidates that are not bidirectional are skipped without
an LLM call, a high-confidence bidirectional (HCB) pair is accepted outright,
and anything else goes to the LLM, accepting on the first Yes. The baseline
pipeline prompts on every candidate and keeps the highest-scored Yes.

Source entities are independent; each one's own search is strictly
sequential because later LLM calls depend on earlier verdicts. Traces are
merged in iteration order (ascending source id by default) regardless of
completion order.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .errors import (
    EndpointUnavailable,
    InvalidParameter,
    MalformedRecord,
    StaleKB,
)
from .fileio import atomic_write_text, format_wall_time
from .llm import LlmClient, PromptTemplate, Verdict, classify_equivalence, render_prompt
from .ontology import Ontology
from .retrieval import DIRECTION_S2T, DIRECTION_T2S, CandidateDB

logger = logging.getLogger(__name__)

RELATION_EQUIVALENCE = "equivalence"

PROVENANCE_HCB = "HCB"
PROVENANCE_LLM = "LLM-confirmed"
PROVENANCE_BASELINE = "baseline-LLM"

OUTCOME_NOT_BIDIRECTIONAL = "not-bidirectional"
OUTCOME_HCB_ACCEPT = "HCB-accept"
OUTCOME_LLM_YES = "LLM-yes"
OUTCOME_LLM_NO = "LLM-no"

PIPELINE_MILA = "mila"
PIPELINE_BASELINE = "baseline"


@dataclass(frozen=True)
class Correspondence:
    """One accepted equivalence with its score and how it was decided."""

    id: str
    source_id: str
    target_id: str
    relation: str
    confidence: float
    provenance: str


@dataclass(frozen=True)
class Alignment:
    """A set of correspondences plus the parameters they were produced under."""

    source_onto: str
    target_onto: str
    k: int
    tau: float
    fingerprint: str
    correspondences: tuple[Correspondence, ...]

    def __post_init__(self):
        seen: set[str] = set()
        for corr in self.correspondences:
            if corr.source_id in seen:
                raise InvalidParameter(
                    f"more than one correspondence for source {corr.source_id!r}"
                )
            seen.add(corr.source_id)

    def __len__(self) -> int:
        return len(self.correspondences)

    @property
    def pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (corr.source_id, corr.target_id) for corr in self.correspondences
        )


@dataclass(frozen=True)
class TraceEvent:
    source_id: str
    rank: int
    candidate_id: str
    outcome: str


@dataclass
class MatchRunReport:
    """Everything one pipeline run produced, with query accounting."""

    pipeline: str
    alignment: Alignment
    trace: list[TraceEvent]
    llm_query_count: int
    hcb_count: int
    wall_times: dict[str, float] = field(default_factory=dict)
    partial: bool = False
    abort_reason: str | None = None
    multi_matched_targets: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        by_provenance: dict[str, int] = {}
        for corr in self.alignment.correspondences:
            by_provenance[corr.provenance] = by_provenance.get(corr.provenance, 0) + 1
        return {
            "pipeline": self.pipeline,
            "source_onto": self.alignment.source_onto,
            "target_onto": self.alignment.target_onto,
            "k": self.alignment.k,
            "tau": self.alignment.tau,
            "provider_fingerprint": self.alignment.fingerprint,
            "alignment_size": len(self.alignment),
            "correspondences_by_provenance": by_provenance,
            "llm_query_count": self.llm_query_count,
            "hcb_count": self.hcb_count,
            "trace_length": len(self.trace),
            "wall_times_s": {k: round(v, 3) for k, v in self.wall_times.items()},
            "wall_times": {
                k: format_wall_time(v) for k, v in self.wall_times.items()
            },
            "partial": self.partial,
            "abort_reason": self.abort_reason,
            "multi_matched_targets": self.multi_matched_targets,
        }


def _check_db_pair(s2t: CandidateDB, t2s: CandidateDB) -> None:
    if s2t.direction != DIRECTION_S2T or t2s.direction != DIRECTION_T2S:
        raise InvalidParameter(
            f"expected directions ({DIRECTION_S2T}, {DIRECTION_T2S}), "
            f"got ({s2t.direction}, {t2s.direction})"
        )
    if s2t.k != t2s.k or s2t.tau != t2s.tau:
        raise InvalidParameter(
            f"candidate DBs disagree on (k, tau): "
            f"({s2t.k}, {s2t.tau}) vs ({t2s.k}, {t2s.tau})"
        )
    if s2t.fingerprint != t2s.fingerprint:
        raise StaleKB(
            f"candidate DBs were built with different providers: "
            f"{s2t.fingerprint!r} vs {t2s.fingerprint!r}"
        )
    if (s2t.query_name, s2t.corpus_name) != (t2s.corpus_name, t2s.query_name):
        raise InvalidParameter(
            f"candidate DBs do not describe the same ontology pair: "
            f"{s2t.query_name}->{s2t.corpus_name} vs "
            f"{t2s.query_name}->{t2s.corpus_name}"
        )


def is_bidirectional(
    s2t: CandidateDB, t2s: CandidateDB, source_id: str, target_id: str
) -> bool:
    """True iff each entity appears in the other's candidate list."""
    forward = s2t.candidates_of(source_id).score_of(target_id)
    if forward is None:
        return False
    return t2s.candidates_of(target_id).score_of(source_id) is not None


def is_hcb(
    s2t: CandidateDB, t2s: CandidateDB, source_id: str, target_id: str
) -> bool:
    """True iff the pair is bidirectional and tops both candidate lists.

    The pair's stored score must equal the maximum of the source's list AND
    the maximum of the target's list; the two directional scores must agree
    (they always do when both DBs come from one provider, making the check
    symmetric: is_hcb(s2t, t2s, a, b) == is_hcb(t2s, s2t, b, a)).
    """
    source_list = s2t.candidates_of(source_id)
    target_list = t2s.candidates_of(target_id)
    forward = source_list.score_of(target_id)
    backward = target_list.score_of(source_id)
    if forward is None or backward is None:
        return False
    return (
        forward == backward
        and forward == source_list.top_score
        and backward == target_list.top_score
    )


def _resolve_sources(sources: Sequence[str] | None, s2t: CandidateDB) -> list[str]:
    if sources is None:
        return sorted(s2t.lists)
    resolved = list(sources)
    for source_id in resolved:
        s2t.candidates_of(source_id)  # raises UnknownEntity on a bad id
    return resolved


def _finish_report(
    pipeline: str,
    s2t: CandidateDB,
    per_source: list[tuple[list[TraceEvent], Correspondence | None]],
    elapsed: float,
    partial: bool,
    abort_reason: str | None,
) -> MatchRunReport:
    trace: list[TraceEvent] = []
    correspondences: list[Correspondence] = []
    for events, corr in per_source:
        trace.extend(events)
        if corr is not None:
            correspondences.append(corr)
    correspondences = [
        Correspondence(
            id=f"c{index:06d}",
            source_id=corr.source_id,
            target_id=corr.target_id,
            relation=corr.relation,
            confidence=corr.confidence,
            provenance=corr.provenance,
        )
        for index, corr in enumerate(correspondences, start=1)
    ]
    target_counts: dict[str, int] = {}
    for corr in correspondences:
        target_counts[corr.target_id] = target_counts.get(corr.target_id, 0) + 1
    alignment = Alignment(
        source_onto=s2t.query_name,
        target_onto=s2t.corpus_name,
        k=s2t.k,
        tau=s2t.tau,
        fingerprint=s2t.fingerprint,
        correspondences=tuple(correspondences),
    )
    llm_events = sum(
        1 for e in trace if e.outcome in (OUTCOME_LLM_YES, OUTCOME_LLM_NO)
    )
    hcb_events = sum(1 for e in trace if e.outcome == OUTCOME_HCB_ACCEPT)
    return MatchRunReport(
        pipeline=pipeline,
        alignment=alignment,
        trace=trace,
        llm_query_count=llm_events,
        hcb_count=hcb_events,
        wall_times={"match": elapsed},
        partial=partial,
        abort_reason=abort_reason,
        multi_matched_targets=sorted(
            target for target, count in target_counts.items() if count > 1
        ),
    )


def _run_per_source(
    pipeline: str,
    sources: list[str],
    s2t: CandidateDB,
    worker,
    max_workers: int,
) -> MatchRunReport:
    """Run one pipeline over the sources, sequentially or with a thread pool."""
    start = time.perf_counter()
    per_source: list[tuple[list[TraceEvent], Correspondence | None]] = []
    partial = False
    abort_reason = None
    if max_workers <= 1:
        for source_id in sources:
            try:
                per_source.append(worker(source_id))
            except EndpointUnavailable as exc:
                partial = True
                abort_reason = str(exc)
                logger.error("aborting %s run at %s: %s", pipeline, source_id, exc)
                break
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [(sid, pool.submit(worker, sid)) for sid in sources]
            for source_id, future in futures:
                if partial:
                    future.cancel()
                    continue
                try:
                    per_source.append(future.result())
                except EndpointUnavailable as exc:
                    partial = True
                    abort_reason = str(exc)
                    logger.error(
                        "aborting %s run at %s: %s", pipeline, source_id, exc
                    )
    elapsed = time.perf_counter() - start
    return _finish_report(pipeline, s2t, per_source, elapsed, partial, abort_reason)


def match_mila(
    sources: Sequence[str] | None,
    s2t: CandidateDB,
    t2s: CandidateDB,
    llm: LlmClient,
    template: PromptTemplate,
    *,
    source_onto: Ontology,
    target_onto: Ontology,
    hcb_enabled: bool = True,
    max_workers: int = 1,
) -> MatchRunReport:
    """Retrieve-identify-prompt over each source's candidate list.

    Per candidate, in rank order: skip if not bidirectional (no LLM call),
    accept outright if HCB (no LLM call), otherwise prompt the LLM with the
    two preferred labels and accept on Yes; stop at the first acceptance.
    hcb_enabled=False disables the HCB shortcut (every bidirectional
    candidate is prompted), used by the search-equivalence checks.

    If the LLM endpoint dies mid-run the report comes back with
    partial=True and the completed prefix of sources; nothing is raised.
    """
    _check_db_pair(s2t, t2s)
    resolved = _resolve_sources(sources, s2t)

    def worker(source_id: str) -> tuple[list[TraceEvent], Correspondence | None]:
        events: list[TraceEvent] = []
        source_label = source_onto.entity(source_id).preferred_label
        for rank, (candidate_id, score) in enumerate(
            s2t.candidates_of(source_id).candidates, start=1
        ):
            if not is_bidirectional(s2t, t2s, source_id, candidate_id):
                events.append(
                    TraceEvent(source_id, rank, candidate_id, OUTCOME_NOT_BIDIRECTIONAL)
                )
                continue
            if hcb_enabled and is_hcb(s2t, t2s, source_id, candidate_id):
                events.append(
                    TraceEvent(source_id, rank, candidate_id, OUTCOME_HCB_ACCEPT)
                )
                corr = Correspondence(
                    id="",
                    source_id=source_id,
                    target_id=candidate_id,
                    relation=RELATION_EQUIVALENCE,
                    confidence=score,
                    provenance=PROVENANCE_HCB,
                )
                return events, corr
            prompt = render_prompt(
                template,
                source_onto.name,
                target_onto.name,
                source_label,
                target_onto.entity(candidate_id).preferred_label,
            )
            verdict = classify_equivalence(llm, prompt, (source_id, candidate_id))
            if verdict.value is Verdict.YES:
                events.append(
                    TraceEvent(source_id, rank, candidate_id, OUTCOME_LLM_YES)
                )
                corr = Correspondence(
                    id="",
                    source_id=source_id,
                    target_id=candidate_id,
                    relation=RELATION_EQUIVALENCE,
                    confidence=score,
                    provenance=PROVENANCE_LLM,
                )
                return events, corr
            events.append(TraceEvent(source_id, rank, candidate_id, OUTCOME_LLM_NO))
        return events, None

    return _run_per_source(PIPELINE_MILA, resolved, s2t, worker, max_workers)


def match_baseline(
    sources: Sequence[str] | None,
    s2t: CandidateDB,
    llm: LlmClient,
    template: PromptTemplate,
    *,
    source_onto: Ontology,
    target_onto: Ontology,
    max_workers: int = 1,
) -> MatchRunReport:
    """Retrieve-then-prompt: query the LLM on every candidate of every source.

    The highest-scored Yes becomes the correspondence (the list is already in
    rank order, so the first Yes wins). Total LLM calls equal the summed
    candidate-list lengths.
    """
    resolved = _resolve_sources(sources, s2t)

    def worker(source_id: str) -> tuple[list[TraceEvent], Correspondence | None]:
        events: list[TraceEvent] = []
        best: Correspondence | None = None
        source_label = source_onto.entity(source_id).preferred_label
        for rank, (candidate_id, score) in enumerate(
            s2t.candidates_of(source_id).candidates, start=1
        ):
            prompt = render_prompt(
                template,
                source_onto.name,
                target_onto.name,
                source_label,
                target_onto.entity(candidate_id).preferred_label,
            )
            verdict = classify_equivalence(llm, prompt, (source_id, candidate_id))
            if verdict.value is Verdict.YES:
                events.append(
                    TraceEvent(source_id, rank, candidate_id, OUTCOME_LLM_YES)
                )
                if best is None:
                    best = Correspondence(
                        id="",
                        source_id=source_id,
                        target_id=candidate_id,
                        relation=RELATION_EQUIVALENCE,
                        confidence=score,
                        provenance=PROVENANCE_BASELINE,
                    )
            else:
                events.append(
                    TraceEvent(source_id, rank, candidate_id, OUTCOME_LLM_NO)
                )
        return events, best

    return _run_per_source(PIPELINE_BASELINE, resolved, s2t, worker, max_workers)


def _require_clean_name(name: str) -> str:
    if not name or any(ch.isspace() for ch in name):
        raise InvalidParameter(
            f"ontology name {name!r} must be nonempty and contain no whitespace "
            "to fit the alignment header format"
        )
    return name


def write_alignment(alignment: Alignment, path: str) -> None:
    """Persist an alignment sorted by source id; header carries the params."""
    header = (
        f"# {_require_clean_name(alignment.source_onto)} "
        f"{_require_clean_name(alignment.target_onto)} "
        f"{alignment.k} {alignment.tau!r} {alignment.fingerprint}"
    )
    lines = [header]
    for corr in sorted(alignment.correspondences, key=lambda c: c.source_id):
        lines.append(
            f"{corr.source_id}\t{corr.target_id}\t{corr.relation}\t"
            f"{corr.confidence:.5f}\t{corr.provenance}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_alignment(path: str) -> Alignment:
    """Parse an alignment file; re-serializing the result is byte-identical."""
    with open(path, "r", encoding="utf-8") as handle:
        raw_lines = [line.rstrip("\n").rstrip("\r") for line in handle]
    if not raw_lines or not raw_lines[0].startswith("#"):
        raise MalformedRecord(path, 1, "missing alignment header")
    tokens = raw_lines[0][1:].split()
    if len(tokens) != 5:
        raise MalformedRecord(
            path, 1, f"header needs 5 fields (source target k tau fingerprint), "
            f"got {len(tokens)}"
        )
    source_onto, target_onto, k_text, tau_text, fingerprint = tokens
    try:
        k = int(k_text)
        tau = float(tau_text)
    except ValueError as exc:
        raise MalformedRecord(path, 1, f"bad k/tau in header: {exc}") from None
    correspondences: list[Correspondence] = []
    for line_no, line in enumerate(raw_lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise MalformedRecord(
                path, line_no, f"expected 5 tab-separated fields, got {len(fields)}"
            )
        source_id, target_id, relation, confidence_text, provenance = fields
        try:
            confidence = float(confidence_text)
        except ValueError:
            raise MalformedRecord(
                path, line_no, f"bad confidence {confidence_text!r}"
            ) from None
        correspondences.append(
            Correspondence(
                id=f"c{len(correspondences) + 1:06d}",
                source_id=source_id,
                target_id=target_id,
                relation=relation,
                confidence=confidence,
                provenance=provenance,
            )
        )
    return Alignment(
        source_onto=source_onto,
        target_onto=target_onto,
        k=k,
        tau=tau,
        fingerprint=fingerprint,
        correspondences=tuple(correspondences),
    )


def write_trace(trace: Sequence[TraceEvent], path: str) -> None:
    """One line per candidate visit, in trace order."""
    lines = [
        f"{e.source_id}\t{e.rank}\t{e.candidate_id}\t{e.outcome}" for e in trace
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_trace(path: str) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise MalformedRecord(
                    path, line_no,
                    f"expected 4 tab-separated fields, got {len(fields)}",
                )
            source_id, rank_text, candidate_id, outcome = fields
            try:
                rank = int(rank_text)
            except ValueError:
                raise MalformedRecord(
                    path, line_no, f"bad rank {rank_text!r}"
                ) from None
            events.append(TraceEvent(source_id, rank, candidate_id, outcome))
    return events


def write_report(report: MatchRunReport, path: str) -> None:
    atomic_write_text(
        path, json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )


def read_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)

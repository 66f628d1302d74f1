"""Run execution: stage loop, checkpoint gating, regeneration, resume."""

from __future__ import annotations

import difflib
import json
import uuid
from dataclasses import replace
from typing import Any, Callable, Sequence

from .context import (
    assemble_context,
    cluster_references,
    default_cluster_count,
    distill_draft,
    pool_sizes,
    summarize_cluster,
)
from .domain import (
    HUMAN_EDIT_PROVENANCE,
    STAGES,
    CheckpointState,
    DraftStatus,
    ManuscriptDraft,
    RunConfig,
    SectionDraft,
    SectionKind,
    SectionProvenance,
    StageCheckpoint,
    ToolMode,
    validate_run_config,
)
from .errors import ContextOverflow, StageExhausted
from .gateway import ChatRequest, ChatResponse, Gateway
from .latex import assemble, assign_cite_keys, extract_cite_keys, lint, references_block, reprocess
from .literature import (
    CuratedBibliography,
    ReferenceRecord,
    ReferenceSource,
    add_seed_references,
    curate_loop,
)
from .pipeline import (
    DEFAULT_IDEA_COUNT,
    DIGEST_TARGET_TOKENS,
    SECTION_STAGE_KINDS,
    TOOL_REGISTRY,
    DecisionSource,
    IdeaCandidate,
    PipelineRuntime,
    RunState,
    RunStatus,
    chat_once,
    generate_section,
    generate_title,
    ideate,
    plan_outline,
    select_tools,
)
from .telemetry import UsageLedger, record, to_csv

_PROVIDER_TOOL_NAMES = {
    ReferenceSource.SCHOLAR_SEARCH: "ScholarSearch",
    ReferenceSource.ASK_SEARCH: "AskSearch",
}


class RecordingGateway:
    """Pass-through gateway that captures responses for the usage ledger."""

    def __init__(self, inner: Gateway):
        self.inner = inner
        self.captured: list[ChatResponse] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.complete(request)
        self.captured.append(response)
        return response

    def drain(self) -> list[ChatResponse]:
        out, self.captured = self.captured, []
        return out


def new_run_id() -> str:
    return "run-" + uuid.uuid4().hex[:10]


def create_run(
    config: RunConfig,
    runtime: PipelineRuntime,
    run_id: str | None = None,
    seed_records: Sequence[ReferenceRecord] | None = None,
) -> RunState:
    """Validate, persist seed records, and store the initial run state."""
    run_id = run_id or new_run_id()
    if runtime.state_store.exists(run_id):
        raise ValueError(f"run {run_id} already exists")
    if seed_records:
        stored_ids = []
        for seed in seed_records:
            if seed.source is not ReferenceSource.HUMAN_SEED:
                seed = replace(seed, source=ReferenceSource.HUMAN_SEED)
            runtime.asset_store.save_reference(seed)
            stored_ids.append(seed.id)
        config = replace(config, seed_references=tuple(stored_ids))
    config = validate_run_config(config)
    for seed_id in config.seed_references:
        runtime.asset_store.load_reference(seed_id)  # fail fast on unknown ids
    state = RunState(
        run_id=run_id,
        config=config,
        manuscript=ManuscriptDraft(
            id=run_id,
            paper_kind=config.paper_kind,
            sections=(),
            bibliography_id=f"{run_id}-bib",
        ),
        ledger=UsageLedger(run_id=run_id),
        created_at=runtime.clock(),
    )
    runtime.state_store.save(state)
    runtime.event("run_created", run_id)
    return state


def run(
    config: RunConfig,
    decision_source: DecisionSource,
    runtime: PipelineRuntime,
    run_id: str | None = None,
    seed_records: Sequence[ReferenceRecord] | None = None,
) -> ManuscriptDraft:
    """Create and drive a run to completion (or StageExhausted)."""
    state = create_run(config, runtime, run_id=run_id, seed_records=seed_records)
    return execute(state.run_id, decision_source, runtime)


def execute(
    run_id: str, decision_source: DecisionSource, runtime: PipelineRuntime
) -> ManuscriptDraft:
    """Drive a persisted run forward from wherever it stopped."""
    state = runtime.state_store.load(run_id)
    if state.status is RunStatus.COMPLETE:
        return state.manuscript
    if state.status is RunStatus.HALTED:
        raise StageExhausted(state.current_stage)
    # Checkpoints left pending by an interrupted process are stale: the
    # owning stage re-executes and issues fresh ones.
    state = replace(
        state,
        checkpoints=tuple(c for c in state.checkpoints if c.state is not CheckpointState.PENDING),
    )
    gateway = RecordingGateway(runtime.gateway_factory(state.config))

    handlers: dict[str, Callable] = {
        "ideation": _stage_ideation,
        "title": _stage_title,
        "tool_selection": _stage_tool_selection,
        "assembly": _stage_assembly,
    }
    for stage_name, kind in SECTION_STAGE_KINDS.items():
        handlers[stage_name] = _section_handler(kind)

    for stage in STAGES:
        if stage in state.completed_stages:
            continue
        state = replace(state, current_stage=stage, status=RunStatus.RUNNING)
        runtime.state_store.save(state)
        runtime.event("stage_started", run_id, stage=stage)
        state = handlers[stage](runtime, state, decision_source, gateway)
        state = _flush_usage(state, stage, gateway, runtime)
        state = replace(state, completed_stages=state.completed_stages + (stage,))
        runtime.state_store.save(state)
        runtime.event("stage_completed", run_id, stage=stage)

    state = replace(state, status=RunStatus.COMPLETE)
    runtime.state_store.save(state)
    runtime.event("run_completed", run_id)
    return state.manuscript


def _flush_usage(
    state: RunState, stage: str, gateway: RecordingGateway, rt: PipelineRuntime
) -> RunState:
    ledger = state.ledger
    for response in gateway.drain():
        ledger = record(ledger, stage, response, rt.pricing)
    return replace(state, ledger=ledger)


# ---------------------------------------------------------------------------
# Checkpoint gate with regeneration semantics
# ---------------------------------------------------------------------------


def _halt(rt: PipelineRuntime, state: RunState, stage: str) -> None:
    halted = replace(
        state,
        status=RunStatus.HALTED,
        manuscript=replace(state.manuscript, status=DraftStatus.HALTED),
        error=f"stage exhausted: {stage}",
    )
    rt.state_store.save(halted)
    rt.event("run_halted", state.run_id, stage=stage)


def _gate(
    rt: PipelineRuntime,
    state: RunState,
    stage: str,
    decision_source: DecisionSource,
    produce: Callable[[RunState, str | None], tuple[Any, RunState]],
    payload_of: Callable[[Any, Any], dict[str, Any]],
    on_accept: Callable[[RunState, Any, StageCheckpoint | None], RunState],
) -> RunState:
    """produce -> checkpoint -> accept/edit, or regenerate on rejection."""
    note: str | None = None
    previous: Any = None
    while True:
        artifact, state = produce(state, note)
        if state.config.auto_approve:
            return on_accept(state, artifact, None)
        checkpoint = StageCheckpoint(
            id=f"{state.run_id}-cp-{state.checkpoint_seq + 1:03d}",
            run_id=state.run_id,
            stage=stage,
            payload=payload_of(artifact, previous),
        )
        state = replace(
            state,
            checkpoints=state.checkpoints + (checkpoint,),
            checkpoint_seq=state.checkpoint_seq + 1,
            status=RunStatus.WAITING_FOR_HUMAN,
        )
        rt.state_store.save(state)
        rt.event("checkpoint_created", state.run_id, stage=stage, checkpoint_id=checkpoint.id)
        decision = decision_source(checkpoint)
        decided = checkpoint.decide(decision.state, decision.note, decision.edited_body, rt.clock())
        state = replace(
            state,
            checkpoints=tuple(decided if c.id == decided.id else c for c in state.checkpoints),
            status=RunStatus.RUNNING,
        )
        rt.state_store.save(state)
        rt.event(
            "checkpoint_decided",
            state.run_id,
            stage=stage,
            checkpoint_id=decided.id,
            decision=decided.state.value,
        )
        if decided.state in (CheckpointState.APPROVED, CheckpointState.EDITED):
            return on_accept(state, artifact, decided)
        regen_count = state.regen_counts.get(stage, 0)
        if regen_count >= state.config.max_regenerations:
            _halt(rt, state, stage)
            raise StageExhausted(stage)
        state = replace(state, regen_counts={**state.regen_counts, stage: regen_count + 1})
        rt.state_store.save(state)
        note = decided.decision_note
        previous = artifact


def _section_payload(draft: SectionDraft, previous: SectionDraft | None) -> dict[str, Any]:
    diff = ""
    if previous is not None:
        diff = "\n".join(
            difflib.unified_diff(
                previous.body.splitlines(),
                draft.body.splitlines(),
                fromfile=f"revision-{previous.revision}",
                tofile=f"revision-{draft.revision}",
                lineterm="",
            )
        )
    return {"kind": "section", "section": draft.to_dict(), "diff": diff}


def _edited_draft(artifact: SectionDraft, edited_body: str) -> SectionDraft:
    return SectionDraft(
        kind=artifact.kind,
        body=edited_body,
        cited_keys=tuple(extract_cite_keys(edited_body)),
        revision=artifact.revision + 1,
        provenance=replace(
            artifact.provenance,
            model=HUMAN_EDIT_PROVENANCE,
            input_tokens=0,
            output_tokens=0,
            wall_ms=0,
        ),
    )


def _parse_index_selection(edited_body: str, size: int) -> list[int]:
    data = json.loads(edited_body)
    if isinstance(data, dict):
        data = data.get("selected", [])
    if not isinstance(data, list) or not data:
        raise ValueError("edited checklist payload must be a non-empty JSON array of indices")
    indices = sorted({int(i) for i in data})
    if any(i < 0 or i >= size for i in indices):
        raise ValueError(f"checklist index out of range 0..{size - 1}")
    return indices


# ---------------------------------------------------------------------------
# Stage handlers
# ---------------------------------------------------------------------------


def _seed_bibliography(rt: PipelineRuntime, config: RunConfig) -> CuratedBibliography:
    seeds = [rt.asset_store.load_reference(seed_id) for seed_id in config.seed_references]
    empty = CuratedBibliography(records=(), cap=config.n_max)
    return add_seed_references(empty, seeds) if seeds else empty


def _stage_ideation(rt, state, decision_source, gateway) -> RunState:
    def produce(state: RunState, note):
        context = assemble_context(
            state.config.context_budget, _seed_bibliography(rt, state.config), "", (), "ideation"
        )
        ideas, _ = ideate(context, DEFAULT_IDEA_COUNT, gateway, state.config, note=note)
        return ideas, _flush_usage(state, "ideation", gateway, rt)

    def payload_of(ideas, _previous):
        return {
            "kind": "candidates",
            "candidate_type": "ideas",
            "items": [idea.to_dict() for idea in ideas],
        }

    def on_accept(state, ideas, decided):
        if decided is not None and decided.state is CheckpointState.EDITED:
            selected = set(_parse_index_selection(decided.edited_body, len(ideas)))
        else:
            selected = set(range(len(ideas)))
        chosen = tuple(replace(idea, selected=(i in selected)) for i, idea in enumerate(ideas))
        return replace(state, ideas=chosen)

    return _gate(rt, state, "ideation", decision_source, produce, payload_of, on_accept)


def _stage_title(rt, state, decision_source, gateway) -> RunState:
    selected = [idea for idea in state.ideas if idea.selected]

    def produce(state: RunState, note):
        context = assemble_context(
            state.config.context_budget, _seed_bibliography(rt, state.config), "", (), "title"
        )
        draft, _ = generate_title(
            selected, context, gateway, state.config,
            note=note, revision=state.regen_counts.get("title", 0),
        )
        return draft, _flush_usage(state, "title", gateway, rt)

    def on_accept(state, draft, decided):
        if decided is not None and decided.state is CheckpointState.EDITED:
            draft = _edited_draft(draft, decided.edited_body)
        return replace(state, manuscript=state.manuscript.with_section(draft))

    return _gate(rt, state, "title", decision_source, produce, _section_payload, on_accept)


def _stage_tool_selection(rt, state, decision_source, gateway) -> RunState:
    config = state.config

    # 1. Tool checklist.
    def produce_tools(state: RunState, note):
        tools, warnings, _ = select_tools(gateway, config, note=note)
        state = _flush_usage(state, "tool_selection", gateway, rt)
        if warnings:
            state = replace(state, warnings=state.warnings + tuple(warnings))
        return tools, state

    def tools_payload(tools, _previous):
        return {"kind": "candidates", "candidate_type": "tools", "items": list(tools)}

    def accept_tools(state, tools, decided):
        if decided is not None and decided.state is CheckpointState.EDITED:
            picked = json.loads(decided.edited_body)
            unknown = [t for t in picked if t not in TOOL_REGISTRY]
            if unknown:
                state = replace(
                    state,
                    warnings=state.warnings
                    + tuple(f"unknown tool {t!r} filtered" for t in unknown),
                )
            tools = [t for t in picked if t in TOOL_REGISTRY]
        return replace(state, tools=tuple(tools))

    state = _gate(
        rt, state, "tool_selection", decision_source, produce_tools, tools_payload, accept_tools
    )

    # 2. Literature curation behind the approved tools.
    selected_ideas = [idea for idea in state.ideas if idea.selected]
    query = config.topic
    if selected_ideas:
        query = f"{config.topic}. {selected_ideas[0].statement}"

    def curate_once(state: RunState, note) -> tuple[CuratedBibliography, RunState]:
        seeds = [rt.asset_store.load_reference(sid) for sid in config.seed_references]
        if config.tool_mode is ToolMode.WITHOUT_TOOL:
            return add_seed_references(CuratedBibliography(records=(), cap=config.n_max), seeds), state
        active = [p for p in rt.providers if _PROVIDER_TOOL_NAMES.get(p.kind) in state.tools]
        if not active:
            state = replace(state, warnings=state.warnings + ("no retrieval providers available",))
            return add_seed_references(CuratedBibliography(records=(), cap=config.n_max), seeds), state
        judge = _llm_judge(gateway, config, query, note)
        bib = curate_loop(
            query, judge, config.n_max, active,
            page_size=config.top_n,  # the per-query retrieval depth
            sleeper=lambda s: None,
        )
        state = _flush_usage(state, "tool_selection", gateway, rt)
        if seeds:
            bib = add_seed_references(bib, seeds)
        return bib, state

    if config.tool_mode is ToolMode.WITH_TOOL:

        def refs_payload(bib, _previous):
            return {
                "kind": "candidates",
                "candidate_type": "references",
                "items": [r.to_dict() for r in bib.records],
            }

        def accept_refs(state, bib, decided):
            if decided is not None and decided.state is CheckpointState.EDITED:
                indices = _parse_index_selection(decided.edited_body, len(bib.records))
                bib = replace(bib, records=tuple(bib.records[i] for i in indices))
            return _store_bibliography(rt, state, bib)

        state = _gate(
            rt, state, "tool_selection", decision_source, curate_once, refs_payload, accept_refs
        )
    else:
        bib, state = curate_once(state, None)
        state = _store_bibliography(rt, state, bib)

    # 3. Cluster summaries reused by every section prompt.
    bib = rt.asset_store.load_bibliography(state.manuscript.bibliography_id)
    if bib.records:
        k = default_cluster_count(len(bib.records))
        citations_pool = pool_sizes(config.context_budget)[0]
        target = max(32, citations_pool // max(k, 1))
        by_id = {r.id: r for r in bib.records}
        summaries = []
        for index, cluster in enumerate(cluster_references(bib, k)):
            members = [by_id[rid] for rid in cluster]
            text = summarize_cluster(members, target, gateway, config.generator_model)
            summaries.append((f"cluster-{index + 1}", text, max(m.relevance for m in members)))
        state = _flush_usage(state, "tool_selection", gateway, rt)
        state = replace(state, cluster_summaries=tuple(summaries))

    # 4. Outline for the writing stages.
    plan, _ = plan_outline(
        selected_ideas or [IdeaCandidate("untitled direction", "", 0.5, True)],
        bib,
        config.paper_kind,
        gateway,
        config.generator_model,
    )
    state = _flush_usage(state, "tool_selection", gateway, rt)
    return replace(state, plan=plan)


def _store_bibliography(rt: PipelineRuntime, state: RunState, bib: CuratedBibliography) -> RunState:
    problems = bib.violations()
    if problems:
        raise ValueError("curated bibliography invalid: " + "; ".join(problems))
    rt.asset_store.save_bibliography(state.manuscript.bibliography_id, bib)
    return state


def _llm_judge(gateway, config: RunConfig, query: str, note: str | None):
    def judge(record_: ReferenceRecord) -> bool:
        prompt = (
            "[stage:curation]\n"
            "Is this abstract relevant to the query? Answer yes or no.\n"
            f"Query: {query}\n"
            f"Title: {record_.title}\n"
            f"Abstract: {record_.abstract}\n"
            "FORMAT: relevance"
        )
        if note:
            prompt += f"\nReviewer note: {note}"
        response = chat_once(
            gateway, config.generator_model, "You judge scholarly relevance strictly.",
            prompt, temperature=0.0, max_output_tokens=8,
        )
        return response.text.strip().lower().startswith("yes")

    return judge


def _section_handler(kind: SectionKind):
    def handler(rt, state, decision_source, gateway) -> RunState:
        stage = kind.value
        config = state.config
        bib = rt.asset_store.load_bibliography(state.manuscript.bibliography_id)
        keys_by_id = assign_cite_keys(bib.records)
        bib_keys = [keys_by_id[r.id] for r in bib.records]

        def produce(state: RunState, note):
            digests = tuple((SectionKind(kv), d) for kv, d in state.digests)
            revision = state.regen_counts.get(stage, 0)
            try:
                bundle = assemble_context(
                    config.context_budget, bib, state.plan.outline_text(), digests, stage,
                    summaries=state.cluster_summaries or None,
                )
                draft, hallucinated, _ = generate_section(
                    kind, state.plan, bundle, config, gateway, rt.templates, bib_keys,
                    note=note, revision=revision,
                )
            except ContextOverflow:
                shrunk = replace(
                    config.context_budget,
                    total_tokens=int(config.context_budget.total_tokens * 0.8),
                )
                bundle = assemble_context(
                    shrunk, bib, state.plan.outline_text(), digests, stage,
                    summaries=state.cluster_summaries or None,
                )
                draft, hallucinated, _ = generate_section(
                    kind, state.plan, bundle, config, gateway, rt.templates, bib_keys,
                    note=note, revision=revision,
                )
            state = _flush_usage(state, stage, gateway, rt)
            if hallucinated:
                events = tuple({"stage": stage, "key": key} for key in hallucinated)
                state = replace(state, hallucination_events=state.hallucination_events + events)
            return draft, state

        def on_accept(state, draft, decided):
            if decided is not None and decided.state is CheckpointState.EDITED:
                draft = _edited_draft(draft, decided.edited_body)
            if kind is SectionKind.RESULTS:
                uncited = _uncited_result_paragraphs(draft.body)
                if uncited:
                    state = replace(
                        state,
                        warnings=state.warnings
                        + tuple(f"results paragraph {i} cites no references" for i in uncited),
                    )
            state = replace(state, manuscript=state.manuscript.with_section(draft))
            digest = distill_draft(draft, DIGEST_TARGET_TOKENS, gateway, config.generator_model)
            state = _flush_usage(state, stage, gateway, rt)
            return replace(state, digests=state.digests + ((kind.value, digest),))

        return _gate(rt, state, stage, decision_source, produce, _section_payload, on_accept)

    return handler


def _uncited_result_paragraphs(body: str) -> list[int]:
    """1-based indices of Results paragraphs carrying no citation.

    Evidence linking is reported, never enforced: humans decide whether an
    uncited claim paragraph is acceptable.
    """
    paragraphs = [p for p in body.split("\n\n") if p.strip()]
    return [i for i, p in enumerate(paragraphs, start=1) if "\\cite{" not in p]


def _stage_assembly(rt, state, decision_source, gateway) -> RunState:
    config = state.config
    bib = rt.asset_store.load_bibliography(state.manuscript.bibliography_id)
    references = SectionDraft(
        kind=SectionKind.REFERENCES,
        body=references_block(),
        cited_keys=(),
        revision=0,
        provenance=SectionProvenance(
            model="assembler",
            strategy=config.strategy,
            tool_mode=config.tool_mode,
            input_tokens=0,
            output_tokens=0,
            wall_ms=0,
            template_id="references",
        ),
    )
    manuscript = replace(state.manuscript.with_section(references), status=DraftStatus.COMPLETE)
    problems = manuscript.violations()
    if problems:
        raise ValueError("manuscript invalid at assembly: " + "; ".join(problems))
    document = assemble(manuscript, bib)

    result = reprocess(document, "", gateway, config.generator_model)
    state = _flush_usage(state, "assembly", gateway, rt)
    if result.warnings:
        state = replace(state, warnings=state.warnings + result.warnings)
    document = result.document

    report = lint(document)
    out_dir = rt.out_dir(state.run_id)
    (out_dir / "paper.tex").write_text(document.render(), encoding="utf-8")
    (out_dir / "references.bib").write_text(document.bib_text, encoding="utf-8")
    (out_dir / "lint.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")

    state = replace(state, manuscript=manuscript)
    (out_dir / "telemetry.csv").write_text(to_csv(state.ledger), encoding="utf-8")
    return state


def review_run_artifacts(
    runtime: PipelineRuntime, run_id: str, strategy, passes: int
) -> dict[str, Any]:
    """Blind-review a finished run's manuscript and persist the report.

    Review usage is appended to the run ledger under stage "review" and
    the exported telemetry is rewritten to include it.
    """
    from .latex import LatexDocument
    from .review import aggregate_report, llm_review, weighted_average

    state = runtime.state_store.load(run_id)
    out_dir = runtime.out_dir(run_id)
    tex_path = out_dir / "paper.tex"
    if state.status is not RunStatus.COMPLETE or not tex_path.exists():
        raise ValueError("run has no assembled manuscript yet")
    document = LatexDocument(
        preamble="",
        body=tex_path.read_text(encoding="utf-8"),
        bib_text=(out_dir / "references.bib").read_text(encoding="utf-8"),
    )
    gateway = RecordingGateway(runtime.gateway_factory(state.config))
    result = llm_review(
        document, strategy, passes, gateway, state.config.reviewer_model,
        paper_kind=state.config.paper_kind, tool_mode=state.config.tool_mode, paper_id=run_id,
    )
    ledger = state.ledger
    for response in gateway.drain():
        ledger = record(ledger, "review", response, runtime.pricing)
    runtime.state_store.save(replace(state, ledger=ledger))
    (out_dir / "telemetry.csv").write_text(to_csv(ledger), encoding="utf-8")
    review_dir = out_dir / "review"
    review_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "run_id": run_id,
        "strategy": strategy.kind.value,
        "passes": [card.to_dict() for card in result.passes],
        "aggregate": result.aggregate.to_dict(),
        "weighted_average": round(weighted_average(result.aggregate), 4),
        "warnings": list(result.warnings),
    }
    (review_dir / "report.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    (review_dir / "report.csv").write_text(
        aggregate_report(list(result.passes)).to_csv(), encoding="utf-8"
    )
    return payload


__all__ = [
    "RecordingGateway",
    "create_run",
    "execute",
    "new_run_id",
    "review_run_artifacts",
    "run",
]

"""Pipeline: stage ops, checkpoint semantics, resume, determinism, guards."""

import json
import random

import pytest

from draftsmith.context import assemble_context
from draftsmith.domain import (
    APPROVE,
    CheckpointDecision,
    CheckpointState,
    DraftStatus,
    PaperKind,
    PromptStrategy,
    SectionKind,
    StrategyKind,
    ToolMode,
)
from draftsmith.errors import ContextOverflow, InvalidConfig, StageExhausted
from draftsmith.gateway import Gateway, MockBackend
from draftsmith.latex import extract_cite_keys
from draftsmith.literature import CuratedBibliography, ReferenceSource
from draftsmith.pipeline import (
    IdeaCandidate,
    RunStatus,
    generate_title,
    ideate,
    make_runtime,
    plan_outline,
    select_tools,
)
from draftsmith.runner import create_run, execute, run

from conftest import base_config, seed_record


def mock_gateway(seed=42, **options):
    return Gateway(MockBackend(seed=seed, **options), sleeper=lambda s: None)


def empty_bundle(runtime, config):
    return assemble_context(
        config.context_budget, CuratedBibliography(records=(), cap=config.n_max), "", (), "ideation"
    )


# ---------------------------------------------------------------------------
# stage operations
# ---------------------------------------------------------------------------


def test_ideate_returns_n_candidates(runtime):
    config = base_config()
    ideas, _ = ideate(empty_bundle(runtime, config), 5, mock_gateway(), config)
    assert len(ideas) == 5
    for idea in ideas:
        assert idea.statement and idea.rationale
        assert 0.0 <= idea.novelty <= 1.0


def test_ideate_count_bounds(runtime):
    config = base_config()
    with pytest.raises(ValueError):
        ideate(empty_bundle(runtime, config), 0, mock_gateway(), config)
    with pytest.raises(ValueError):
        ideate(empty_bundle(runtime, config), 11, mock_gateway(), config)


def test_plan_requires_selected_ideas():
    with pytest.raises(ValueError):
        plan_outline([], CuratedBibliography(records=(), cap=1), PaperKind.REVIEW, mock_gateway(), "mock-model")


def test_plan_results_bullets_prefixed_by_kind():
    idea = IdeaCandidate("direction", "because", 0.5, True)
    bib = CuratedBibliography(records=(), cap=1)
    review_plan, _ = plan_outline([idea], bib, PaperKind.REVIEW, mock_gateway(), "mock-model")
    assert all(p.startswith("theme:") for p in review_plan.points_for(SectionKind.RESULTS))
    perspective_plan, _ = plan_outline([idea], bib, PaperKind.PERSPECTIVE, mock_gateway(), "mock-model")
    assert all(p.startswith("claim:") for p in perspective_plan.points_for(SectionKind.RESULTS))
    assert review_plan.violations() == []


def test_generate_title_single_line(runtime):
    config = base_config()
    idea = IdeaCandidate("direction", "because", 0.5, True)
    draft, _ = generate_title([idea], empty_bundle(runtime, config), mock_gateway(), config)
    assert draft.kind is SectionKind.TITLE
    assert draft.body.strip()
    assert "\n" not in draft.body


def test_select_tools_with_tool_mode_includes_retrieval():
    tools, warnings, _ = select_tools(mock_gateway(), base_config())
    assert set(tools) & {"ScholarSearch", "AskSearch"}
    assert warnings == []


def test_select_tools_without_tool_mode_empty_retrieval():
    config = base_config(tool_mode=ToolMode.WITHOUT_TOOL, seed_references=("seed-0",))
    tools, warnings, _ = select_tools(mock_gateway(), config)
    assert set(tools) & {"ScholarSearch", "AskSearch"} == set()


def test_select_tools_filters_unknown_names():
    tools, warnings, _ = select_tools(mock_gateway(emit_unknown_tool=True), base_config())
    assert "FluxCapacitor" not in tools
    assert any("FluxCapacitor" in w for w in warnings)


# ---------------------------------------------------------------------------
# end-to-end auto run
# ---------------------------------------------------------------------------


def test_auto_run_completes_with_canonical_sections(runtime, approve_all):
    decisions = []

    def spy(checkpoint):
        decisions.append(checkpoint)
        return APPROVE

    manuscript = run(base_config(), spy, runtime, run_id="auto-1")
    assert manuscript.status is DraftStatus.COMPLETE
    assert [s.kind.value for s in manuscript.sections] == [
        "title", "abstract", "introduction", "related_work",
        "methods", "results", "conclusion", "references",
    ]
    assert decisions == []  # auto_approve bypasses checkpoints entirely

    out_dir = runtime.out_dir("auto-1")
    lint_report = json.loads((out_dir / "lint.json").read_text())
    assert [i for i in lint_report["issues"] if i["severity"] == "error"] == []
    bib_text = (out_dir / "references.bib").read_text()
    tex = (out_dir / "paper.tex").read_text()
    bib_keys = set(__import__("re").findall(r"@\w+\{([^,]+),", bib_text))
    assert set(extract_cite_keys(tex)) <= bib_keys
    assert set(extract_cite_keys(tex))  # sections actually cite


def test_rerun_same_seed_byte_identical(data_dir, approve_all):
    runtime = make_runtime(data_dir)
    run(base_config(), approve_all, runtime, run_id="rep-1")
    run(base_config(), approve_all, runtime, run_id="rep-2")
    out = data_dir / "out"
    assert (out / "rep-1/paper.tex").read_bytes() == (out / "rep-2/paper.tex").read_bytes()
    assert (out / "rep-1/references.bib").read_bytes() == (out / "rep-2/references.bib").read_bytes()


def test_different_seed_changes_output(data_dir, approve_all):
    runtime = make_runtime(data_dir)
    run(base_config(random_seed=1), approve_all, runtime, run_id="s1")
    run(base_config(random_seed=2), approve_all, runtime, run_id="s2")
    out = data_dir / "out"
    assert (out / "s1/paper.tex").read_bytes() != (out / "s2/paper.tex").read_bytes()


def test_bibliography_respects_n_max_and_seed_priority(runtime, approve_all):
    config = base_config(n_max=4)
    run(config, approve_all, runtime, run_id="caps", seed_records=[seed_record(0)])
    bib = runtime.asset_store.load_bibliography("caps-bib")
    assert len(bib.records) <= 4
    assert bib.records[0].source is ReferenceSource.HUMAN_SEED
    assert bib.violations() == []


def test_without_tool_uses_only_seeds(runtime, approve_all):
    config = base_config(tool_mode=ToolMode.WITHOUT_TOOL)
    run(
        config, approve_all, runtime, run_id="seeded",
        seed_records=[seed_record(0), seed_record(1)],
    )
    bib = runtime.asset_store.load_bibliography("seeded-bib")
    assert len(bib.records) == 2
    assert all(r.source is ReferenceSource.HUMAN_SEED for r in bib.records)
    state = runtime.state_store.load("seeded")
    assert set(state.tools) & {"ScholarSearch", "AskSearch"} == set()


def test_invalid_config_rejected_before_any_state(runtime, approve_all):
    with pytest.raises(InvalidConfig):
        run(base_config(n_max=0), approve_all, runtime)
    assert runtime.state_store.list_runs() == []


def test_duplicate_run_id_rejected(runtime, approve_all):
    run(base_config(), approve_all, runtime, run_id="dup")
    with pytest.raises(ValueError):
        create_run(base_config(), runtime, run_id="dup")


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


def test_chain_of_thought_keeps_only_final_answer(runtime, approve_all):
    config = base_config(strategy=PromptStrategy(StrategyKind.CHAIN_OF_THOUGHT))
    manuscript = run(config, approve_all, runtime, run_id="cot-1")
    for section in manuscript.sections:
        if section.kind not in (SectionKind.TITLE, SectionKind.REFERENCES):
            assert "Reasoning trace" not in section.body
            assert "FINAL ANSWER" not in section.body


def test_few_shot_embeds_exemplars(runtime):
    captured = []

    class CapturingBackend(MockBackend):
        def complete(self, request):
            captured.append(request.prompt_text)
            return super().complete(request)

    runtime.gateway_factory = lambda config: Gateway(
        CapturingBackend(seed=config.random_seed), sleeper=lambda s: None
    )
    config = base_config(strategy=PromptStrategy(StrategyKind.FEW_SHOT, exemplar_count=2))
    run(config, lambda cp: APPROVE, runtime, run_id="fs-1")
    section_prompts = [p for p in captured if "[stage:abstract.review]" in p]
    assert section_prompts
    assert all(p.count("Exemplar") >= 2 for p in section_prompts)


def test_template_id_recorded_in_provenance(runtime, approve_all):
    manuscript = run(base_config(), approve_all, runtime, run_id="prov-1")
    related = manuscript.section(SectionKind.RELATED_WORK)
    assert related.provenance.template_id == "related_work.review"


def test_related_work_templates_differ_by_kind(runtime):
    from draftsmith.templates import TemplateLibrary

    library = TemplateLibrary(runtime.data_dir / "templates")
    _, review_text = library.section_template(
        "related_work", PaperKind.REVIEW, PromptStrategy(StrategyKind.ZERO_SHOT)
    )
    _, perspective_text = library.section_template(
        "related_work", PaperKind.PERSPECTIVE, PromptStrategy(StrategyKind.ZERO_SHOT)
    )
    assert "thematic analysis and synthesis" in review_text
    assert "supporting and opposing perspectives" in perspective_text


# ---------------------------------------------------------------------------
# checkpoint semantics
# ---------------------------------------------------------------------------


def scripted(decider):
    """decision source from a function of (stage, visit count for stage)."""
    seen: dict[str, int] = {}

    def source(checkpoint):
        count = seen.get(checkpoint.stage, 0)
        seen[checkpoint.stage] = count + 1
        return decider(checkpoint, count)

    return source


def test_reject_beyond_bound_halts(runtime):
    config = base_config(auto_approve=False, max_regenerations=2)

    def decider(checkpoint, count):
        if checkpoint.stage == "abstract":
            return CheckpointDecision(CheckpointState.REJECTED, note="again")
        return APPROVE

    with pytest.raises(StageExhausted) as excinfo:
        run(config, scripted(decider), runtime, run_id="halt-1")
    assert excinfo.value.stage == "abstract"
    state = runtime.state_store.load("halt-1")
    assert state.status is RunStatus.HALTED
    assert state.manuscript.status is DraftStatus.HALTED
    assert state.regen_counts["abstract"] == 2
    rejects = [
        c for c in state.checkpoints
        if c.stage == "abstract" and c.state is CheckpointState.REJECTED
    ]
    assert len(rejects) == 3  # R+1 rejections recorded


def test_rejection_then_approve_bumps_revision(runtime):
    def decider(checkpoint, count):
        if checkpoint.stage == "title" and count == 0:
            return CheckpointDecision(CheckpointState.REJECTED, note="too dull")
        return APPROVE

    config = base_config(auto_approve=False)
    manuscript = run(config, scripted(decider), runtime, run_id="regen-1")
    assert manuscript.section(SectionKind.TITLE).revision == 1
    state = runtime.state_store.load("regen-1")
    title_cps = [c for c in state.checkpoints if c.stage == "title"]
    assert len(title_cps) == 2
    assert title_cps[1].payload["diff"]  # regenerated draft carries a diff


def test_edited_body_stored_verbatim(runtime):
    exact = "My exact    body\nwith   spacing\tand \\cite{nothing-stripped} kept"

    def decider(checkpoint, count):
        if checkpoint.stage == "conclusion":
            return CheckpointDecision(CheckpointState.EDITED, edited_body=exact)
        return APPROVE

    config = base_config(auto_approve=False)
    with pytest.raises(Exception):
        # the edited body cites an unknown key, so assembly must refuse
        run(config, scripted(decider), runtime, run_id="edit-guard")


def test_edited_body_verbatim_and_revision(runtime):
    exact = "Exact   edited\n\nconclusion body."

    def decider(checkpoint, count):
        if checkpoint.stage == "conclusion":
            return CheckpointDecision(CheckpointState.EDITED, edited_body=exact)
        return APPROVE

    manuscript = run(base_config(auto_approve=False), scripted(decider), runtime, run_id="edit-1")
    conclusion = manuscript.section(SectionKind.CONCLUSION)
    assert conclusion.body == exact
    assert conclusion.revision == 1
    assert conclusion.provenance.model == "human"


def test_ideation_checklist_subset_selection(runtime):
    def decider(checkpoint, count):
        if checkpoint.stage == "ideation":
            return CheckpointDecision(CheckpointState.EDITED, edited_body="[0, 2]")
        return APPROVE

    run(base_config(auto_approve=False), scripted(decider), runtime, run_id="pick-1")
    state = runtime.state_store.load("pick-1")
    assert [i.selected for i in state.ideas] == [True, False, True, False, False]


def test_tool_checklist_edit_filters_unknown(runtime):
    def decider(checkpoint, count):
        if checkpoint.stage == "tool_selection" and checkpoint.payload.get("candidate_type") == "tools":
            return CheckpointDecision(
                CheckpointState.EDITED, edited_body='["ScholarSearch", "TimeMachine"]'
            )
        return APPROVE

    run(base_config(auto_approve=False), scripted(decider), runtime, run_id="tools-1")
    state = runtime.state_store.load("tools-1")
    assert state.tools == ("ScholarSearch",)
    assert any("TimeMachine" in w for w in state.warnings)


def test_reference_checklist_subset(runtime):
    def decider(checkpoint, count):
        if checkpoint.payload.get("candidate_type") == "references":
            return CheckpointDecision(CheckpointState.EDITED, edited_body="[0, 1, 2]")
        return APPROVE

    run(base_config(auto_approve=False), scripted(decider), runtime, run_id="refs-1")
    bib = runtime.asset_store.load_bibliography("refs-1-bib")
    assert len(bib.records) == 3


def test_checkpoint_fuzz_regen_bound_never_exceeded(data_dir):
    rng = random.Random(1234)
    for trial in range(12):
        runtime = make_runtime(data_dir)
        max_regen = rng.choice([0, 1, 2])
        config = base_config(auto_approve=False, max_regenerations=max_regen, random_seed=trial)

        def decider(checkpoint, count):
            roll = rng.random()
            if roll < 0.35:
                return CheckpointDecision(CheckpointState.REJECTED, note="no")
            if roll < 0.5 and checkpoint.payload.get("kind") == "section":
                return CheckpointDecision(
                    CheckpointState.EDITED, edited_body=f"Edited body {trial}."
                )
            return APPROVE

        run_id = f"fuzz-{trial}"
        try:
            run(config, scripted(decider), runtime, run_id=run_id)
            halted = False
        except StageExhausted:
            halted = True
        state = runtime.state_store.load(run_id)
        assert all(v <= max_regen for v in state.regen_counts.values())
        if halted:
            assert state.status is RunStatus.HALTED
            exhausted_stage = state.error.removeprefix("stage exhausted: ")
            rejected = [
                c for c in state.checkpoints
                if c.stage == exhausted_stage and c.state is CheckpointState.REJECTED
            ]
            assert len(rejected) == max_regen + 1
        else:
            assert state.status is RunStatus.COMPLETE


# ---------------------------------------------------------------------------
# resume after interruption
# ---------------------------------------------------------------------------


class Interrupted(Exception):
    pass


def test_resume_skips_completed_stages(data_dir):
    runtime = make_runtime(data_dir)
    config = base_config(auto_approve=False)

    def interrupting(checkpoint):
        if checkpoint.stage == "related_work":
            raise Interrupted()
        return APPROVE

    with pytest.raises(Interrupted):
        run(config, interrupting, runtime, run_id="int-1")
    state = runtime.state_store.load("int-1")
    assert "introduction" in state.completed_stages
    assert "related_work" not in state.completed_stages

    fresh_runtime = make_runtime(data_dir)  # new process, same disk
    manuscript = execute("int-1", lambda cp: APPROVE, fresh_runtime)
    assert manuscript.status is DraftStatus.COMPLETE

    # uninterrupted control run with identical config
    run(config, lambda cp: APPROVE, make_runtime(data_dir), run_id="int-2")
    out = data_dir / "out"
    assert (out / "int-1/paper.tex").read_bytes() == (out / "int-2/paper.tex").read_bytes()

    final = fresh_runtime.state_store.load("int-1")
    control = fresh_runtime.state_store.load("int-2")
    for stage in ("ideation", "title", "abstract", "introduction"):
        mine = [e for e in final.ledger.entries if e.stage == stage]
        theirs = [e for e in control.ledger.entries if e.stage == stage]
        assert len(mine) == len(theirs), f"{stage} re-executed on resume"


def test_finished_run_execute_is_idempotent(runtime, approve_all):
    run(base_config(), approve_all, runtime, run_id="done-1")
    manuscript = execute("done-1", approve_all, runtime)
    assert manuscript.status is DraftStatus.COMPLETE


# ---------------------------------------------------------------------------
# hallucination guard
# ---------------------------------------------------------------------------


def test_hallucinated_keys_stripped_and_counted(data_dir, approve_all):
    mock = MockBackend(seed=42, hallucination_rate=0.2)
    runtime = make_runtime(data_dir, backend=mock)
    manuscript = run(base_config(), approve_all, runtime, run_id="ghost-1")
    assert manuscript.status is DraftStatus.COMPLETE
    assert mock.ghosts_emitted > 0

    state = runtime.state_store.load("ghost-1")
    assert len(state.hallucination_events) == mock.ghosts_emitted

    tex = (data_dir / "out/ghost-1/paper.tex").read_text()
    bib_text = (data_dir / "out/ghost-1/references.bib").read_text()
    bib_keys = set(__import__("re").findall(r"@\w+\{([^,]+),", bib_text))
    assert set(extract_cite_keys(tex)) <= bib_keys
    lint_report = json.loads((data_dir / "out/ghost-1/lint.json").read_text())
    assert [i for i in lint_report["issues"] if i["severity"] == "error"] == []


# ---------------------------------------------------------------------------
# context overflow fallback
# ---------------------------------------------------------------------------


def test_section_overflow_retries_with_shrunk_budget(data_dir):
    inner = MockBackend(seed=42)
    overflowed = []

    class OverflowOnce:
        def complete(self, request):
            prompt = request.prompt_text
            if "[stage:abstract.review]" in prompt and not overflowed:
                overflowed.append(True)
                raise ContextOverflow("synthetic")
            return inner.complete(request)

    runtime = make_runtime(data_dir, backend=OverflowOnce())
    manuscript = run(base_config(), lambda cp: APPROVE, runtime, run_id="ovf-1")
    assert manuscript.status is DraftStatus.COMPLETE
    assert overflowed  # the overflow path actually ran


# ---------------------------------------------------------------------------
# results evidence reporting
# ---------------------------------------------------------------------------


def test_uncited_results_paragraphs_reported_not_blocked(runtime):
    uncited = "claim: strong but unsupported assertion.\n\nclaim: another bare claim."

    def decider(checkpoint, count):
        if checkpoint.stage == "results":
            return CheckpointDecision(CheckpointState.EDITED, edited_body=uncited)
        return APPROVE

    manuscript = run(base_config(auto_approve=False), scripted(decider), runtime, run_id="evid-1")
    assert manuscript.status is DraftStatus.COMPLETE
    state = runtime.state_store.load("evid-1")
    flagged = [w for w in state.warnings if "cites no references" in w]
    assert len(flagged) == 2


def test_ledger_stage_order_follows_canonical_order(runtime, approve_all):
    from draftsmith.domain import STAGES

    run(base_config(), approve_all, runtime, run_id="order-1")
    state = runtime.state_store.load("order-1")
    order = {name: i for i, name in enumerate(STAGES)}
    indices = [order[e.stage] for e in state.ledger.entries]
    assert indices == sorted(indices)
    assert set(indices)  # non-empty

"""Domain types: validation, canonical order, serialization round-trips."""

import pytest
from hypothesis import given, strategies as st

from draftsmith.domain import (
    CheckpointDecision,
    CheckpointState,
    ContextBudget,
    PaperKind,
    PromptStrategy,
    SectionKind,
    StageCheckpoint,
    StrategyKind,
    ToolMode,
    canonical_section_order,
    validate_run_config,
)
from draftsmith.errors import InvalidConfig

from conftest import base_config


def test_valid_config_returned_unchanged():
    config = base_config(n_max=5, top_n=10, auto_approve=True)
    assert validate_run_config(config) is config


def test_validation_is_idempotent():
    config = validate_run_config(base_config())
    assert validate_run_config(config) is config


def test_n_max_boundary():
    with pytest.raises(InvalidConfig) as excinfo:
        validate_run_config(base_config(n_max=0))
    assert any("n_max" in v for v in excinfo.value.violations)


def test_without_tool_requires_seeds():
    with pytest.raises(InvalidConfig) as excinfo:
        validate_run_config(base_config(tool_mode=ToolMode.WITHOUT_TOOL, seed_references=()))
    assert any("seed" in v.lower() for v in excinfo.value.violations)


def test_all_violations_reported_not_just_first():
    with pytest.raises(InvalidConfig) as excinfo:
        validate_run_config(
            base_config(
                n_max=0,
                top_n=0,
                max_regenerations=99,
                tool_mode=ToolMode.WITHOUT_TOOL,
                seed_references=(),
            )
        )
    assert len(excinfo.value.violations) >= 4


def test_exemplar_count_tied_to_few_shot():
    with pytest.raises(InvalidConfig):
        validate_run_config(base_config(strategy=PromptStrategy(StrategyKind.FEW_SHOT, 0)))
    with pytest.raises(InvalidConfig):
        validate_run_config(base_config(strategy=PromptStrategy(StrategyKind.ZERO_SHOT, 2)))
    validate_run_config(base_config(strategy=PromptStrategy(StrategyKind.FEW_SHOT, 2)))


def test_budget_fractions_must_sum_to_one():
    with pytest.raises(InvalidConfig):
        validate_run_config(
            base_config(
                context_budget=ContextBudget(
                    total_tokens=1000,
                    fraction_citations=0.5,
                    fraction_structure=0.3,
                    fraction_methods=0.3,
                )
            )
        )


def test_canonical_section_order():
    order = canonical_section_order()
    assert len(order) == 8
    assert order[0] is SectionKind.TITLE
    assert order[-1] is SectionKind.REFERENCES
    assert order == canonical_section_order()


def test_canonical_index_is_bijection():
    indices = [kind.canonical_index for kind in canonical_section_order()]
    assert indices == list(range(8))
    assert len({kind.canonical_index for kind in SectionKind}) == 8


def test_paper_kind_serializes_lowercase():
    assert PaperKind.REVIEW.value == "review"
    assert PaperKind("perspective") is PaperKind.PERSPECTIVE


def test_config_round_trip():
    config = base_config(seed_references=("seed-1", "seed-2"))
    from draftsmith.domain import RunConfig

    assert RunConfig.from_dict(config.to_dict()) == config


def test_strategy_parse_aliases():
    assert PromptStrategy.parse("cot").kind is StrategyKind.CHAIN_OF_THOUGHT
    assert PromptStrategy.parse("zs").kind is StrategyKind.ZERO_SHOT
    fs = PromptStrategy.parse("fs", exemplar_count=2)
    assert fs.kind is StrategyKind.FEW_SHOT and fs.exemplar_count == 2


def test_checkpoint_transitions():
    checkpoint = StageCheckpoint(id="cp-1", run_id="r", stage="abstract", payload={"kind": "section"})
    approved = checkpoint.decide(CheckpointState.APPROVED, decided_at="t")
    assert approved.state is CheckpointState.APPROVED
    with pytest.raises(ValueError):
        approved.decide(CheckpointState.REJECTED)
    with pytest.raises(ValueError):
        checkpoint.decide(CheckpointState.APPROVED, edited_body="oops")
    with pytest.raises(ValueError):
        checkpoint.decide(CheckpointState.EDITED)  # edited requires a body
    edited = checkpoint.decide(CheckpointState.EDITED, edited_body="new text")
    assert edited.edited_body == "new text"


def test_decision_shape_enforced():
    with pytest.raises(ValueError):
        CheckpointDecision(CheckpointState.PENDING)
    with pytest.raises(ValueError):
        CheckpointDecision(CheckpointState.EDITED)


@given(
    total=st.integers(min_value=1, max_value=100_000),
    split=st.tuples(st.floats(0.01, 0.98), st.floats(0.01, 0.98)),
)
def test_budget_fraction_property(total, split):
    a, b = split
    if a + b >= 0.999:
        a, b = a / 2, b / 2
    budget = ContextBudget(
        total_tokens=total,
        fraction_citations=a,
        fraction_structure=b,
        fraction_methods=1.0 - a - b,
    )
    assert budget.violations() == []


def test_checkpoint_round_trip():
    checkpoint = StageCheckpoint(
        id="cp-9", run_id="r", stage="ideation",
        payload={"kind": "candidates", "items": [1, 2]},
    ).decide(CheckpointState.REJECTED, note="too broad", decided_at="2026-01-01T00:00:00Z")
    assert StageCheckpoint.from_dict(checkpoint.to_dict()) == checkpoint


def test_manuscript_round_trip():
    from draftsmith.domain import (
        DraftStatus,
        ManuscriptDraft,
        SectionDraft,
        SectionProvenance,
    )

    draft = SectionDraft(
        kind=SectionKind.ABSTRACT,
        body="text \\cite{k1}",
        cited_keys=("k1",),
        revision=2,
        provenance=SectionProvenance(
            model="m",
            strategy=PromptStrategy(StrategyKind.FEW_SHOT, 2),
            tool_mode=ToolMode.WITHOUT_TOOL,
            input_tokens=10,
            output_tokens=20,
            wall_ms=30,
            template_id="abstract.review",
        ),
    )
    assert SectionDraft.from_dict(draft.to_dict()) == draft
    manuscript = ManuscriptDraft(
        id="m1",
        paper_kind=PaperKind.PERSPECTIVE,
        sections=(draft,),
        bibliography_id="b1",
        status=DraftStatus.IN_PROGRESS,
    )
    assert ManuscriptDraft.from_dict(manuscript.to_dict()) == manuscript
    assert manuscript.violations() == []

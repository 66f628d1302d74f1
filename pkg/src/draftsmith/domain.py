"""Shared vocabulary types and run-configuration validation.

Every other module builds on the types here. All of them are immutable
values: safe to share between threads, mutated only by constructing a
replacement and persisting it through the run state store.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

from .errors import InvalidConfig

SCHEMA_VERSION = "v1"

# Fixed machine identifiers for the pipeline stages, in execution order.
STAGES = (
    "ideation",
    "title",
    "tool_selection",
    "abstract",
    "introduction",
    "related_work",
    "methods",
    "results",
    "conclusion",
    "assembly",
)

MAX_REGENERATIONS_CEILING = 10


class PaperKind(Enum):
    REVIEW = "review"
    PERSPECTIVE = "perspective"


class StrategyKind(Enum):
    ZERO_SHOT = "zero_shot"
    FEW_SHOT = "few_shot"
    CHAIN_OF_THOUGHT = "chain_of_thought"


# CLI / experiment-grid shorthand.
STRATEGY_ALIASES = {
    "zs": StrategyKind.ZERO_SHOT,
    "fs": StrategyKind.FEW_SHOT,
    "cot": StrategyKind.CHAIN_OF_THOUGHT,
}


@dataclass(frozen=True)
class PromptStrategy:
    """Prompting strategy plus the exemplar count used by few-shot templates."""

    kind: StrategyKind
    exemplar_count: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.exemplar_count < 0:
            out.append("exemplar_count must be >= 0")
        if (self.kind is StrategyKind.FEW_SHOT) != (self.exemplar_count > 0):
            out.append("exemplar_count > 0 required exactly when strategy is few_shot")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "exemplar_count": self.exemplar_count}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PromptStrategy":
        return cls(kind=StrategyKind(d["kind"]), exemplar_count=int(d.get("exemplar_count", 0)))

    @classmethod
    def parse(cls, name: str, exemplar_count: int = 2) -> "PromptStrategy":
        """Build a strategy from a config string such as "cot" or "few_shot"."""
        key = name.strip().lower()
        kind = STRATEGY_ALIASES.get(key)
        if kind is None:
            kind = StrategyKind(key)
        return cls(kind=kind, exemplar_count=exemplar_count if kind is StrategyKind.FEW_SHOT else 0)


class ToolMode(Enum):
    WITH_TOOL = "with_tool"
    WITHOUT_TOOL = "without_tool"


class SectionKind(Enum):
    TITLE = "title"
    ABSTRACT = "abstract"
    INTRODUCTION = "introduction"
    RELATED_WORK = "related_work"
    METHODS = "methods"
    RESULTS = "results"
    CONCLUSION = "conclusion"
    REFERENCES = "references"

    @property
    def canonical_index(self) -> int:
        return _SECTION_ORDER.index(self)

    @property
    def heading(self) -> str:
        return _SECTION_HEADINGS[self]


_SECTION_ORDER = (
    SectionKind.TITLE,
    SectionKind.ABSTRACT,
    SectionKind.INTRODUCTION,
    SectionKind.RELATED_WORK,
    SectionKind.METHODS,
    SectionKind.RESULTS,
    SectionKind.CONCLUSION,
    SectionKind.REFERENCES,
)

_SECTION_HEADINGS = {
    SectionKind.TITLE: "Title",
    SectionKind.ABSTRACT: "Abstract",
    SectionKind.INTRODUCTION: "Introduction",
    SectionKind.RELATED_WORK: "Related Work",
    SectionKind.METHODS: "Methods",
    SectionKind.RESULTS: "Results",
    SectionKind.CONCLUSION: "Conclusion",
    SectionKind.REFERENCES: "References",
}


def canonical_section_order() -> list[SectionKind]:
    """The eight manuscript sections in their fixed order."""
    return list(_SECTION_ORDER)


@dataclass(frozen=True)
class ContextBudget:
    """Token budget for one prompt, split across three tunable pools."""

    total_tokens: int
    fraction_citations: float = 0.4
    fraction_structure: float = 0.3
    fraction_methods: float = 0.3

    def violations(self) -> list[str]:
        out = []
        if self.total_tokens <= 0:
            out.append("context_budget.total_tokens must be positive")
        for name in ("fraction_citations", "fraction_structure", "fraction_methods"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                out.append(f"context_budget.{name} must be in [0, 1]")
        total = self.fraction_citations + self.fraction_structure + self.fraction_methods
        if abs(total - 1.0) > 1e-9:
            out.append("context_budget fractions must sum to 1.0")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_tokens": self.total_tokens,
            "fraction_citations": self.fraction_citations,
            "fraction_structure": self.fraction_structure,
            "fraction_methods": self.fraction_methods,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ContextBudget":
        return cls(
            total_tokens=int(d["total_tokens"]),
            fraction_citations=float(d["fraction_citations"]),
            fraction_structure=float(d["fraction_structure"]),
            fraction_methods=float(d["fraction_methods"]),
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs to be reproducible."""

    topic: str
    paper_kind: PaperKind
    tool_mode: ToolMode
    strategy: PromptStrategy
    generator_model: str
    reviewer_model: str
    n_max: int
    top_n: int
    context_budget: ContextBudget
    random_seed: int
    max_regenerations: int = 2
    auto_approve: bool = False
    seed_references: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "topic": self.topic,
            "paper_kind": self.paper_kind.value,
            "tool_mode": self.tool_mode.value,
            "strategy": self.strategy.to_dict(),
            "generator_model": self.generator_model,
            "reviewer_model": self.reviewer_model,
            "n_max": self.n_max,
            "top_n": self.top_n,
            "context_budget": self.context_budget.to_dict(),
            "random_seed": self.random_seed,
            "max_regenerations": self.max_regenerations,
            "auto_approve": self.auto_approve,
            "seed_references": list(self.seed_references),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        return cls(
            topic=d["topic"],
            paper_kind=PaperKind(d["paper_kind"]),
            tool_mode=ToolMode(d["tool_mode"]),
            strategy=PromptStrategy.from_dict(d["strategy"]),
            generator_model=d["generator_model"],
            reviewer_model=d["reviewer_model"],
            n_max=int(d["n_max"]),
            top_n=int(d["top_n"]),
            context_budget=ContextBudget.from_dict(d["context_budget"]),
            random_seed=int(d["random_seed"]),
            max_regenerations=int(d.get("max_regenerations", 2)),
            auto_approve=bool(d.get("auto_approve", False)),
            seed_references=tuple(d.get("seed_references", ())),
        )


def validate_run_config(config: RunConfig) -> RunConfig:
    """Return the config unchanged if valid, else raise with every violation.

    Raises:
        InvalidConfig: carries the full list of violated invariants, not
            just the first one found.
    """
    violations: list[str] = []
    if not config.topic.strip():
        violations.append("topic must be non-empty")
    if config.n_max < 1:
        violations.append("n_max must be >= 1")
    if config.top_n < 1:
        violations.append("top_n must be >= 1")
    if not config.generator_model.strip():
        violations.append("generator_model must be non-empty")
    if not config.reviewer_model.strip():
        violations.append("reviewer_model must be non-empty")
    if config.tool_mode is ToolMode.WITHOUT_TOOL and not config.seed_references:
        violations.append("WithoutTool requires seed references")
    if config.max_regenerations < 0:
        violations.append("max_regenerations must be >= 0")
    if config.max_regenerations > MAX_REGENERATIONS_CEILING:
        violations.append(f"max_regenerations must be <= {MAX_REGENERATIONS_CEILING}")
    violations.extend(config.strategy.violations())
    violations.extend(config.context_budget.violations())
    if violations:
        raise InvalidConfig(violations)
    return config


@dataclass(frozen=True)
class SectionProvenance:
    """How a section body came to be: model, strategy and accounting."""

    model: str
    strategy: PromptStrategy
    tool_mode: ToolMode
    input_tokens: int
    output_tokens: int
    wall_ms: int
    template_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "strategy": self.strategy.to_dict(),
            "tool_mode": self.tool_mode.value,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_ms": self.wall_ms,
            "template_id": self.template_id,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SectionProvenance":
        return cls(
            model=d["model"],
            strategy=PromptStrategy.from_dict(d["strategy"]),
            tool_mode=ToolMode(d["tool_mode"]),
            input_tokens=int(d["input_tokens"]),
            output_tokens=int(d["output_tokens"]),
            wall_ms=int(d["wall_ms"]),
            template_id=d.get("template_id", ""),
        )


HUMAN_EDIT_PROVENANCE = "human"


@dataclass(frozen=True)
class SectionDraft:
    """One manuscript section at a specific revision."""

    kind: SectionKind
    body: str
    cited_keys: tuple[str, ...]
    revision: int
    provenance: SectionProvenance

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "body": self.body,
            "cited_keys": list(self.cited_keys),
            "revision": self.revision,
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SectionDraft":
        return cls(
            kind=SectionKind(d["kind"]),
            body=d["body"],
            cited_keys=tuple(d["cited_keys"]),
            revision=int(d["revision"]),
            provenance=SectionProvenance.from_dict(d["provenance"]),
        )


class DraftStatus(Enum):
    IN_PROGRESS = "in_progress"
    COMPLETE = "complete"
    HALTED = "halted"


@dataclass(frozen=True)
class ManuscriptDraft:
    """Ordered section drafts plus the bibliography they cite."""

    id: str
    paper_kind: PaperKind
    sections: tuple[SectionDraft, ...]
    bibliography_id: str
    status: DraftStatus = DraftStatus.IN_PROGRESS

    def section(self, kind: SectionKind) -> SectionDraft | None:
        for draft in self.sections:
            if draft.kind is kind:
                return draft
        return None

    def with_section(self, draft: SectionDraft) -> "ManuscriptDraft":
        """Replace or append a section, keeping sections in canonical order."""
        kept = [s for s in self.sections if s.kind is not draft.kind]
        kept.append(draft)
        kept.sort(key=lambda s: s.kind.canonical_index)
        return replace(self, sections=tuple(kept))

    def violations(self) -> list[str]:
        out = []
        kinds = [s.kind for s in self.sections]
        if len(set(kinds)) != len(kinds):
            out.append("duplicate section kinds")
        if kinds != sorted(kinds, key=lambda k: k.canonical_index):
            out.append("sections out of canonical order")
        if self.status is DraftStatus.COMPLETE and len(kinds) != len(_SECTION_ORDER):
            out.append("complete manuscript must carry all 8 sections")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "paper_kind": self.paper_kind.value,
            "sections": [s.to_dict() for s in self.sections],
            "bibliography_id": self.bibliography_id,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ManuscriptDraft":
        return cls(
            id=d["id"],
            paper_kind=PaperKind(d["paper_kind"]),
            sections=tuple(SectionDraft.from_dict(s) for s in d["sections"]),
            bibliography_id=d["bibliography_id"],
            status=DraftStatus(d["status"]),
        )


class CheckpointState(Enum):
    PENDING = "pending"
    APPROVED = "approved"
    EDITED = "edited"
    REJECTED = "rejected"


@dataclass(frozen=True)
class StageCheckpoint:
    """A pending human decision attached to one pipeline stage.

    The payload is a JSON-shaped dict: either {"kind": "candidates", ...}
    for checklist stages or {"kind": "section", ...} carrying a draft and
    the rendered diff against its previous revision.
    """

    id: str
    run_id: str
    stage: str
    payload: dict[str, Any]
    state: CheckpointState = CheckpointState.PENDING
    decision_note: str | None = None
    edited_body: str | None = None
    decided_at: str | None = None

    def decide(
        self,
        state: CheckpointState,
        note: str | None = None,
        edited_body: str | None = None,
        decided_at: str | None = None,
    ) -> "StageCheckpoint":
        """Apply a decision; only Pending -> Approved/Edited/Rejected is legal."""
        if self.state is not CheckpointState.PENDING:
            raise ValueError(f"checkpoint {self.id} already {self.state.value}")
        if state is CheckpointState.PENDING:
            raise ValueError("cannot decide back to pending")
        if (state is CheckpointState.EDITED) != (edited_body is not None):
            raise ValueError("edited_body present iff state is Edited")
        return replace(
            self, state=state, decision_note=note, edited_body=edited_body, decided_at=decided_at
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "run_id": self.run_id,
            "stage": self.stage,
            "payload": self.payload,
            "state": self.state.value,
            "decision_note": self.decision_note,
            "edited_body": self.edited_body,
            "decided_at": self.decided_at,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StageCheckpoint":
        return cls(
            id=d["id"],
            run_id=d["run_id"],
            stage=d["stage"],
            payload=d["payload"],
            state=CheckpointState(d["state"]),
            decision_note=d.get("decision_note"),
            edited_body=d.get("edited_body"),
            decided_at=d.get("decided_at"),
        )


@dataclass(frozen=True)
class CheckpointDecision:
    """What a human (or scripted stand-in) decided at a checkpoint."""

    state: CheckpointState
    note: str | None = None
    edited_body: str | None = None

    def __post_init__(self):
        if self.state is CheckpointState.PENDING:
            raise ValueError("a decision cannot be pending")
        if (self.state is CheckpointState.EDITED) != (self.edited_body is not None):
            raise ValueError("edited_body present iff state is Edited")


APPROVE = CheckpointDecision(CheckpointState.APPROVED)


__all__ = [
    "APPROVE",
    "CheckpointDecision",
    "CheckpointState",
    "ContextBudget",
    "DraftStatus",
    "HUMAN_EDIT_PROVENANCE",
    "ManuscriptDraft",
    "MAX_REGENERATIONS_CEILING",
    "PaperKind",
    "PromptStrategy",
    "RunConfig",
    "SCHEMA_VERSION",
    "SectionDraft",
    "SectionKind",
    "SectionProvenance",
    "StageCheckpoint",
    "STAGES",
    "StrategyKind",
    "ToolMode",
    "canonical_section_order",
    "validate_run_config",
]

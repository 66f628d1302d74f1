"""The staged state machine: ideation through assembly.

One run is a single sequential machine persisted after every transition,
so a killed process resumes exactly where it stopped. Stage outputs pass
through human checkpoints unless auto_approve; rejections regenerate up
to max_regenerations and then halt the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

from .context import ContextBundle
from .domain import (
    STAGES,
    CheckpointDecision,
    CheckpointState,
    ManuscriptDraft,
    PaperKind,
    RunConfig,
    SectionDraft,
    SectionKind,
    SectionProvenance,
    StageCheckpoint,
    StrategyKind,
    ToolMode,
)
from .errors import MalformedModelOutput
from .gateway import (
    Backend,
    ChatRequest,
    ChatResponse,
    Gateway,
    MockBackend,
    PricingTable,
    load_pricing,
)
from .latex import extract_cite_keys
from .literature import (
    AssetStore,
    CuratedBibliography,
    FixtureProvider,
    HttpProvider,
    ReferenceSource,
    SearchProvider,
)
from .store import StateStore
from .telemetry import UsageLedger
from .templates import SECTION_STAGES, TemplateLibrary, render_template

DecisionSource = Callable[[StageCheckpoint], CheckpointDecision]

TOOL_REGISTRY = ("ScholarSearch", "AskSearch", "BibExport")
RETRIEVAL_TOOLS = ("ScholarSearch", "AskSearch")
DEFAULT_IDEA_COUNT = 5
SECTION_TARGET_TOKENS = 200
DIGEST_TARGET_TOKENS = 64
TITLE_TARGET_TOKENS = 24

SECTION_STAGE_KINDS = {
    "abstract": SectionKind.ABSTRACT,
    "introduction": SectionKind.INTRODUCTION,
    "related_work": SectionKind.RELATED_WORK,
    "methods": SectionKind.METHODS,
    "results": SectionKind.RESULTS,
    "conclusion": SectionKind.CONCLUSION,
}

DEFAULT_PRICING_TOML = """# USD per 1M tokens; edit freely, prices are configuration.
[gpt-4o-mini]
input_per_1m = 0.15
output_per_1m = 0.60

[openai-o1]
input_per_1m = 15.00
output_per_1m = 60.00

[gpt-5]
input_per_1m = 1.25
output_per_1m = 10.00

[mock-model]
input_per_1m = 1.00
output_per_1m = 1.00
"""


class RunStatus(Enum):
    CREATED = "created"
    RUNNING = "running"
    WAITING_FOR_HUMAN = "waiting_for_human"
    COMPLETE = "complete"
    HALTED = "halted"


@dataclass(frozen=True)
class IdeaCandidate:
    statement: str
    rationale: str
    novelty: float
    selected: bool = False

    def __post_init__(self):
        if not self.statement.strip():
            raise ValueError("idea statement must be non-empty")
        if not 0.0 <= self.novelty <= 1.0:
            raise ValueError("novelty must be in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "statement": self.statement,
            "rationale": self.rationale,
            "novelty": self.novelty,
            "selected": self.selected,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "IdeaCandidate":
        return cls(
            statement=d["statement"],
            rationale=d.get("rationale", ""),
            novelty=float(d["novelty"]),
            selected=bool(d.get("selected", False)),
        )


@dataclass(frozen=True)
class PipelinePlan:
    paper_kind: PaperKind
    outline: tuple[tuple[SectionKind, tuple[str, ...]], ...]

    def violations(self) -> list[str]:
        from .domain import canonical_section_order

        kinds = [kind for kind, _ in self.outline]
        if kinds != canonical_section_order():
            return ["outline must cover all 8 section kinds exactly once, canonical order"]
        return []

    def points_for(self, kind: SectionKind) -> tuple[str, ...]:
        for outline_kind, points in self.outline:
            if outline_kind is kind:
                return points
        return ()

    def outline_text(self) -> str:
        lines = []
        for kind, points in self.outline:
            lines.append(f"{kind.heading}:")
            lines.extend(f"  - {point}" for point in points)
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "paper_kind": self.paper_kind.value,
            "outline": [[kind.value, list(points)] for kind, points in self.outline],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelinePlan":
        return cls(
            paper_kind=PaperKind(d["paper_kind"]),
            outline=tuple(
                (SectionKind(kind), tuple(points)) for kind, points in d["outline"]
            ),
        )


@dataclass(frozen=True)
class RunState:
    run_id: str
    config: RunConfig
    manuscript: ManuscriptDraft
    current_stage: str = STAGES[0]
    completed_stages: tuple[str, ...] = ()
    checkpoints: tuple[StageCheckpoint, ...] = ()
    regen_counts: dict[str, int] = field(default_factory=dict)
    status: RunStatus = RunStatus.CREATED
    ideas: tuple[IdeaCandidate, ...] = ()
    plan: PipelinePlan | None = None
    tools: tuple[str, ...] = ()
    cluster_summaries: tuple[tuple[str, str, float], ...] = ()
    digests: tuple[tuple[str, str], ...] = ()  # (section kind value, digest)
    hallucination_events: tuple[dict[str, str], ...] = ()
    ledger: UsageLedger = field(default_factory=lambda: UsageLedger(run_id=""))
    checkpoint_seq: int = 0
    warnings: tuple[str, ...] = ()
    error: str | None = None
    created_at: str = ""

    def violations(self) -> list[str]:
        out = []
        for stage, count in self.regen_counts.items():
            if count > self.config.max_regenerations:
                out.append(f"regen count for {stage} exceeds max_regenerations")
        order = {name: i for i, name in enumerate(STAGES)}
        current = order.get(self.current_stage, -1)
        for done in self.completed_stages:
            if order.get(done, -1) >= current and self.status not in (
                RunStatus.COMPLETE,
                RunStatus.HALTED,
            ):
                out.append("current_stage must follow all completed stages")
        return out

    def pending_checkpoints(self) -> list[StageCheckpoint]:
        return [c for c in self.checkpoints if c.state is CheckpointState.PENDING]

    def to_dict(self) -> dict[str, Any]:
        manuscript = self.manuscript.to_dict()
        sections = manuscript.pop("sections")
        return {
            "run_id": self.run_id,
            "config": self.config.to_dict(),
            "manuscript": manuscript,
            "sections": sections,
            "current_stage": self.current_stage,
            "completed_stages": list(self.completed_stages),
            "checkpoints": [c.to_dict() for c in self.checkpoints],
            "regen_counts": dict(self.regen_counts),
            "status": self.status.value,
            "ideas": [i.to_dict() for i in self.ideas],
            "plan": self.plan.to_dict() if self.plan else None,
            "tools": list(self.tools),
            "cluster_summaries": [list(s) for s in self.cluster_summaries],
            "digests": [list(d) for d in self.digests],
            "hallucination_events": [dict(e) for e in self.hallucination_events],
            "ledger": self.ledger.to_dict(),
            "checkpoint_seq": self.checkpoint_seq,
            "warnings": list(self.warnings),
            "error": self.error,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunState":
        manuscript = dict(d["manuscript"])
        manuscript["sections"] = d.get("sections", [])
        return cls(
            run_id=d["run_id"],
            config=RunConfig.from_dict(d["config"]),
            manuscript=ManuscriptDraft.from_dict(manuscript),
            current_stage=d["current_stage"],
            completed_stages=tuple(d.get("completed_stages", ())),
            checkpoints=tuple(StageCheckpoint.from_dict(c) for c in d.get("checkpoints", ())),
            regen_counts=dict(d.get("regen_counts", {})),
            status=RunStatus(d["status"]),
            ideas=tuple(IdeaCandidate.from_dict(i) for i in d.get("ideas", ())),
            plan=PipelinePlan.from_dict(d["plan"]) if d.get("plan") else None,
            tools=tuple(d.get("tools", ())),
            cluster_summaries=tuple((s[0], s[1], float(s[2])) for s in d.get("cluster_summaries", ())),
            digests=tuple((p[0], p[1]) for p in d.get("digests", ())),
            hallucination_events=tuple(dict(e) for e in d.get("hallucination_events", ())),
            ledger=UsageLedger.from_dict(d["ledger"]) if d.get("ledger") else UsageLedger(d["run_id"]),
            checkpoint_seq=int(d.get("checkpoint_seq", 0)),
            warnings=tuple(d.get("warnings", ())),
            error=d.get("error"),
            created_at=d.get("created_at", ""),
        )


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class PipelineRuntime:
    """Everything a run needs from its environment, injectable for tests."""

    data_dir: Path
    pricing: PricingTable
    state_store: StateStore
    asset_store: AssetStore
    templates: TemplateLibrary
    providers: list[SearchProvider]
    gateway_factory: Callable[[RunConfig], Gateway]
    clock: Callable[[], str] = _utc_now
    emit: Callable[[dict[str, Any]], None] = lambda event: None
    _event_seq: int = 0

    def out_dir(self, run_id: str) -> Path:
        path = self.data_dir / "out" / run_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def event(self, type_: str, run_id: str, **extra: Any) -> None:
        self._event_seq += 1
        self.emit({"type": type_, "run_id": run_id, "seq": self._event_seq, "at": self.clock(), **extra})


def make_runtime(
    data_dir: str | Path,
    backend: Backend | None = None,
    pricing: PricingTable | None = None,
    providers: Sequence[SearchProvider] | None = None,
    emit: Callable[[dict[str, Any]], None] | None = None,
    mock_options: dict[str, Any] | None = None,
) -> PipelineRuntime:
    """Default runtime: mock gateway seeded per run, fixture providers.

    Real backends/providers activate via GATEWAY_URL, SCHOLAR_API_URL and
    ASK_API_URL; everything else stays identical.
    """
    import os

    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    pricing_path = data_dir / "pricing.toml"
    if pricing is None:
        if not pricing_path.exists():
            pricing_path.write_text(DEFAULT_PRICING_TOML, encoding="utf-8")
        pricing = load_pricing(str(pricing_path))

    if backend is not None:
        fixed_gateway = Gateway(backend)
        gateway_factory = lambda config: fixed_gateway
    elif os.getenv("GATEWAY_URL", "").strip():
        from .gateway import HttpBackend

        http_gateway = Gateway(HttpBackend(os.environ["GATEWAY_URL"], os.getenv("GATEWAY_KEY", "")))
        gateway_factory = lambda config: http_gateway
    else:
        options = mock_options or {}
        gateway_factory = lambda config: Gateway(
            MockBackend(seed=config.random_seed, **options)
        )

    if providers is None:
        providers = []
        scholar_url = os.getenv("SCHOLAR_API_URL", "").strip()
        ask_url = os.getenv("ASK_API_URL", "").strip()
        fixtures = data_dir / "testdata" / "providers"
        if scholar_url:
            providers.append(HttpProvider(scholar_url, ReferenceSource.SCHOLAR_SEARCH))
        elif (fixtures / "scholar_search.json").exists():
            providers.append(
                FixtureProvider(fixtures / "scholar_search.json", ReferenceSource.SCHOLAR_SEARCH)
            )
        if ask_url:
            providers.append(HttpProvider(ask_url, ReferenceSource.ASK_SEARCH))
        elif (fixtures / "ask_search.json").exists():
            providers.append(
                FixtureProvider(fixtures / "ask_search.json", ReferenceSource.ASK_SEARCH)
            )

    return PipelineRuntime(
        data_dir=data_dir,
        pricing=pricing,
        state_store=StateStore(data_dir),
        asset_store=AssetStore(data_dir / "assets"),
        templates=TemplateLibrary(data_dir / "templates"),
        providers=list(providers),
        gateway_factory=gateway_factory,
        emit=emit or (lambda event: None),
    )


# ---------------------------------------------------------------------------
# Prompt building helpers
# ---------------------------------------------------------------------------


def bundle_to_text(bundle: ContextBundle) -> str:
    parts = []
    if bundle.reference_cluster_summaries:
        parts.append("Reference clusters:")
        parts.extend(f"{label}: {text}" for label, text in bundle.reference_cluster_summaries)
    if bundle.outline:
        parts.append("Outline:\n" + bundle.outline)
    if bundle.prior_section_digests:
        parts.append("Prior sections:")
        parts.extend(f"[{kind.value}] {digest}" for kind, digest in bundle.prior_section_digests)
    if bundle.methods_notes:
        parts.append("Dataset notes:\n" + bundle.methods_notes)
    return "\n".join(parts)


def chat_once(
    gateway: Gateway,
    model: str,
    system: str,
    user: str,
    temperature: float = 0.7,
    max_output_tokens: int = 1024,
) -> ChatResponse:
    return gateway.complete(
        ChatRequest(
            model=model,
            messages=(("system", system), ("user", user)),
            temperature=temperature,
            max_output_tokens=max_output_tokens,
        )
    )


def _parse_json_payload(text: str) -> Any:
    if "FINAL ANSWER:" in text:
        text = text.split("FINAL ANSWER:", 1)[1]
    start_candidates = [i for i in (text.find("["), text.find("{")) if i >= 0]
    if not start_candidates:
        raise MalformedModelOutput("no JSON payload in model output")
    start = min(start_candidates)
    end = max(text.rfind("]"), text.rfind("}"))
    if end <= start:
        raise MalformedModelOutput("unterminated JSON payload in model output")
    try:
        return json.loads(text[start : end + 1])
    except ValueError as exc:
        raise MalformedModelOutput(f"unparseable model JSON: {exc}") from exc


def _call_structured(gateway, model, system, user, parse, temperature=0.7, max_output_tokens=1024):
    """One call plus a single stricter re-prompt before giving up."""
    response = chat_once(gateway, model, system, user, temperature, max_output_tokens)
    try:
        return parse(response.text), (response,)
    except MalformedModelOutput:
        retry_user = user + "\n\nYour previous output was malformed. Emit exactly the requested format."
        retry = chat_once(gateway, model, system, retry_user, temperature, max_output_tokens)
        return parse(retry.text), (response, retry)


# ---------------------------------------------------------------------------
# Stage operations
# ---------------------------------------------------------------------------


def ideate(
    context: ContextBundle,
    n: int,
    gateway: Gateway,
    config: RunConfig,
    note: str | None = None,
) -> tuple[list[IdeaCandidate], tuple[ChatResponse, ...]]:
    """Generate n candidate research directions with self-rated novelty."""
    if not 1 <= n <= 10:
        raise ValueError("idea count must be in [1, 10]")
    prompt = (
        "[stage:ideation]\n"
        f"Propose research directions for a {config.paper_kind.value} paper.\n"
        f"Topic: {config.topic}\n"
        "Each idea needs a statement, a rationale, and a novelty self-rating in [0, 1].\n"
        "Return a JSON array of {statement, rationale, novelty} objects.\n"
        "FORMAT: ideas\n"
        f"COUNT: {n}\n"
        f"{bundle_to_text(context)}"
    )
    if note:
        prompt += f"\nReviewer note on the previous batch: {note}"

    def parse(text: str) -> list[IdeaCandidate]:
        data = _parse_json_payload(text)
        if not isinstance(data, list) or len(data) != n:
            raise MalformedModelOutput(f"expected a JSON array of {n} ideas")
        ideas = []
        for item in data:
            try:
                novelty = min(max(float(item.get("novelty", 0.0)), 0.0), 1.0)
                ideas.append(
                    IdeaCandidate(
                        statement=str(item["statement"]),
                        rationale=str(item.get("rationale", "")),
                        novelty=novelty,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedModelOutput(f"bad idea object: {exc}") from exc
        return ideas

    ideas, responses = _call_structured(
        gateway, config.generator_model, "You generate grounded research directions.", prompt, parse
    )
    return ideas, responses


def plan_outline(
    selected_ideas: Sequence[IdeaCandidate],
    bib: CuratedBibliography,
    paper_kind: PaperKind,
    gateway: Gateway,
    model: str,
) -> tuple[PipelinePlan, tuple[ChatResponse, ...]]:
    """Structured outline covering all eight sections in canonical order."""
    from .domain import canonical_section_order

    if not selected_ideas:
        raise ValueError("at least one selected idea required")
    bullet_prefix = "theme" if paper_kind is PaperKind.REVIEW else "claim"
    titles = "\n".join(f"- {r.title}" for r in bib.records[:20])
    prompt = (
        "[stage:plan]\n"
        f"Build a section outline for a {paper_kind.value} paper.\n"
        "Ideas:\n"
        + "\n".join(f"- {idea.statement}" for idea in selected_ideas)
        + "\nLiterature:\n"
        + titles
        + "\nReturn a JSON object mapping each of the 8 section names "
        "(title, abstract, introduction, related_work, methods, results, conclusion, references) "
        f"to a bullet list. Prefix every results bullet with '{bullet_prefix}:'.\n"
        "FORMAT: outline\n"
        f"KIND: {paper_kind.value}"
    )

    def parse(text: str) -> PipelinePlan:
        data = _parse_json_payload(text)
        if not isinstance(data, dict):
            raise MalformedModelOutput("outline must be a JSON object")
        outline = []
        for kind in canonical_section_order():
            if kind.value not in data:
                raise MalformedModelOutput(f"outline missing section {kind.value}")
            points = [str(p) for p in data[kind.value]]
            if kind is SectionKind.RESULTS:
                points = [
                    p if p.startswith(f"{bullet_prefix}:") else f"{bullet_prefix}: {p}"
                    for p in points
                ]
            outline.append((kind, tuple(points)))
        return PipelinePlan(paper_kind=paper_kind, outline=tuple(outline))

    plan, responses = _call_structured(
        gateway, model, "You plan scholarly manuscripts.", prompt, parse, temperature=0.7
    )
    return plan, responses


def generate_title(
    selected_ideas: Sequence[IdeaCandidate],
    context: ContextBundle,
    gateway: Gateway,
    config: RunConfig,
    note: str | None = None,
    revision: int = 0,
) -> tuple[SectionDraft, tuple[ChatResponse, ...]]:
    """Single-line title draft reflecting the selected research direction."""
    prompt = (
        "[stage:title]\n"
        f"Produce one single-line title for a {config.paper_kind.value} paper.\n"
        f"TOPIC: {config.topic}\n"
        "Ideas:\n"
        + "\n".join(f"- {idea.statement}" for idea in selected_ideas)
        + "\nFORMAT: title\n"
        f"{bundle_to_text(context)}"
    )
    if note:
        prompt += f"\nReviewer note on the previous title: {note}"

    def parse(text: str) -> str:
        if "FINAL ANSWER:" in text:
            text = text.split("FINAL ANSWER:", 1)[1]
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines:
            raise MalformedModelOutput("empty title")
        return lines[0]

    title, responses = _call_structured(
        gateway,
        config.generator_model,
        "You write precise scholarly titles.",
        prompt,
        parse,
        max_output_tokens=TITLE_TARGET_TOKENS * 4,
    )
    usage = _sum_usage(responses)
    draft = SectionDraft(
        kind=SectionKind.TITLE,
        body=title,
        cited_keys=(),
        revision=revision,
        provenance=SectionProvenance(
            model=config.generator_model,
            strategy=config.strategy,
            tool_mode=config.tool_mode,
            input_tokens=usage[0],
            output_tokens=usage[1],
            wall_ms=usage[2],
            template_id="title",
        ),
    )
    return draft, responses


def select_tools(
    gateway: Gateway, config: RunConfig, note: str | None = None
) -> tuple[list[str], list[str], tuple[ChatResponse, ...]]:
    """(selected tools, warnings, responses); WithoutTool skips retrieval."""
    if config.tool_mode is ToolMode.WITHOUT_TOOL:
        return ["BibExport"], [], ()
    prompt = (
        "[stage:tool_selection]\n"
        f"Pick the tools needed to research: {config.topic}\n"
        "Return a JSON array of tool names.\n"
        "FORMAT: tools\n"
        f"AVAILABLE_TOOLS: {', '.join(TOOL_REGISTRY)}"
    )
    if note:
        prompt += f"\nReviewer note: {note}"

    def parse(text: str) -> list[str]:
        data = _parse_json_payload(text)
        if not isinstance(data, list):
            raise MalformedModelOutput("tool selection must be a JSON array")
        return [str(t) for t in data]

    raw, responses = _call_structured(
        gateway, config.generator_model, "You select research tooling.", prompt, parse
    )
    warnings = [f"unknown tool {name!r} filtered" for name in raw if name not in TOOL_REGISTRY]
    tools = [name for name in raw if name in TOOL_REGISTRY]
    if not any(t in RETRIEVAL_TOOLS for t in tools):
        tools = list(RETRIEVAL_TOOLS) + [t for t in tools if t not in RETRIEVAL_TOOLS]
    return tools, warnings, responses


def _sum_usage(responses: Sequence[ChatResponse]) -> tuple[int, int, int]:
    return (
        sum(r.input_tokens for r in responses),
        sum(r.output_tokens for r in responses),
        sum(r.latency_ms for r in responses),
    )


def generate_section(
    kind: SectionKind,
    plan: PipelinePlan,
    context: ContextBundle,
    config: RunConfig,
    gateway: Gateway,
    templates: TemplateLibrary,
    bib_keys: Sequence[str],
    note: str | None = None,
    revision: int = 0,
) -> tuple[SectionDraft, list[str], tuple[ChatResponse, ...]]:
    """(draft, hallucinated keys stripped, responses) for one content section."""
    stage = kind.value
    if stage not in SECTION_STAGES:
        raise ValueError(f"{kind} is not generated from a section template")
    template_id, template_text = templates.section_template(stage, config.paper_kind, config.strategy)
    exemplars = ""
    if config.strategy.kind is StrategyKind.FEW_SHOT:
        shots = templates.exemplars(stage, config.strategy.exemplar_count)
        exemplars = "\n\n".join(f"Exemplar {i + 1}:\n{shot}" for i, shot in enumerate(shots))
    prompt = render_template(
        template_text,
        {
            "topic": config.topic,
            "plan_points": "\n".join(f"- {p}" for p in plan.points_for(kind)),
            "exemplars": exemplars,
            "context": bundle_to_text(context),
            "cite_keys": ", ".join(bib_keys),
            "target_tokens": str(SECTION_TARGET_TOKENS),
            "note": f"Reviewer note on the previous draft: {note}" if note else "",
        },
    )

    def parse(text: str) -> str:
        if config.strategy.kind is StrategyKind.CHAIN_OF_THOUGHT:
            if "FINAL ANSWER:" not in text:
                raise MalformedModelOutput("chain-of-thought output missing final-answer delimiter")
            text = text.split("FINAL ANSWER:", 1)[1]
        body = text.strip()
        if not body:
            raise MalformedModelOutput("empty section body")
        return body

    body, responses = _call_structured(
        gateway,
        config.generator_model,
        "You draft manuscript sections grounded in the provided material.",
        prompt,
        parse,
        max_output_tokens=SECTION_TARGET_TOKENS * 4,
    )

    known = set(bib_keys)
    hallucinated = [key for key in extract_cite_keys(body) if key not in known]
    for key in hallucinated:
        body = body.replace(f"\\cite{{{key}}}", "")
    usage = _sum_usage(responses)
    draft = SectionDraft(
        kind=kind,
        body=body,
        cited_keys=tuple(extract_cite_keys(body)),
        revision=revision,
        provenance=SectionProvenance(
            model=config.generator_model,
            strategy=config.strategy,
            tool_mode=config.tool_mode,
            input_tokens=usage[0],
            output_tokens=usage[1],
            wall_ms=usage[2],
            template_id=template_id,
        ),
    )
    return draft, hallucinated, responses


__all__ = [
    "DEFAULT_IDEA_COUNT",
    "DecisionSource",
    "IdeaCandidate",
    "PipelinePlan",
    "PipelineRuntime",
    "RunState",
    "RunStatus",
    "SECTION_STAGE_KINDS",
    "TOOL_REGISTRY",
    "bundle_to_text",
    "generate_section",
    "generate_title",
    "ideate",
    "make_runtime",
    "plan_outline",
    "select_tools",
]

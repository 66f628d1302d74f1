"""Rubric-based reviewing: LLM passes, human score ingestion, statistics.

Scores follow the conference-style rubric: six criteria capped at 4,
Overall capped at 6, Confidence capped at 5 and excluded from the
weighted average. The weighted average is sum(score x cap) / sum(cap)
over the seven scored criteria (denominator 30).
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import TYPE_CHECKING, Any, Iterable, Sequence

from .domain import PaperKind, PromptStrategy, StrategyKind, ToolMode
from .errors import MalformedModelOutput, RowSumMismatch, SchemaError
from .gateway import ChatRequest

if TYPE_CHECKING:
    from .gateway import Gateway
    from .latex import LatexDocument


@dataclass(frozen=True)
class RubricCriterion:
    name: str
    max: int
    in_weighted_average: bool = True


CRITERIA = (
    RubricCriterion("Soundness", 4),
    RubricCriterion("Presentation", 4),
    RubricCriterion("Quality", 4),
    RubricCriterion("Clarity", 4),
    RubricCriterion("Significance", 4),
    RubricCriterion("Originality", 4),
    RubricCriterion("Overall", 6),
    RubricCriterion("Confidence", 5, in_weighted_average=False),
)

CRITERION_BY_NAME = {c.name: c for c in CRITERIA}
WEIGHTED_CRITERIA = tuple(c for c in CRITERIA if c.in_weighted_average)
WEIGHT_DENOMINATOR = sum(c.max for c in WEIGHTED_CRITERIA)  # 30

# Qualitative headers mirrored from the human review form; requested as
# free text only, never as numeric fields.
QUALITATIVE_HEADERS = (
    "clarity", "originality", "technical soundness", "significance",
    "reproducibility", "limitations", "ethical considerations",
)


@dataclass(frozen=True)
class RubricScorecard:
    reviewer: str
    scores: dict[str, float]
    justifications: dict[str, str]
    strategy: PromptStrategy
    tool_mode: ToolMode
    paper_kind: PaperKind
    paper_id: str = ""
    interpolated: frozenset[str] = frozenset()

    def violations(self) -> list[str]:
        out = []
        for criterion in CRITERIA:
            if criterion.name not in self.scores:
                out.append(f"missing criterion {criterion.name}")
                continue
            value = self.scores[criterion.name]
            if not 1.0 <= value <= criterion.max:
                out.append(f"{criterion.name}={value} outside [1, {criterion.max}]")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "reviewer": self.reviewer,
            "scores": dict(self.scores),
            "justifications": dict(self.justifications),
            "strategy": self.strategy.to_dict(),
            "tool_mode": self.tool_mode.value,
            "paper_kind": self.paper_kind.value,
            "paper_id": self.paper_id,
            "interpolated": sorted(self.interpolated),
        }


@dataclass(frozen=True)
class FormatAudit:
    paper_format: float
    citations_relevancy: float
    hallucination_flag: bool
    ethical_flag: bool
    paper_kind: PaperKind
    tool_mode: ToolMode
    strategy: PromptStrategy
    paper_id: str = ""

    def violations(self) -> list[str]:
        out = []
        if not 1.0 <= self.paper_format <= 4.0:
            out.append("paper_format outside [1, 4]")
        if not 1.0 <= self.citations_relevancy <= 4.0:
            out.append("citations_relevancy outside [1, 4]")
        return out


def weighted_average(scorecard: RubricScorecard) -> float:
    """sum(score x cap) / 30 over the seven scored criteria, full precision."""
    problems = scorecard.violations()
    if problems:
        raise ValueError("; ".join(problems))
    total = sum(scorecard.scores[c.name] * c.max for c in WEIGHTED_CRITERIA)
    return total / WEIGHT_DENOMINATOR


def display_weighted_average(scorecard: RubricScorecard) -> Decimal:
    """The 2-decimal half-even rendering used in printed tables."""
    total = sum(Decimal(str(scorecard.scores[c.name])) * c.max for c in WEIGHTED_CRITERIA)
    return (total / WEIGHT_DENOMINATOR).quantize(Decimal("0.01"), ROUND_HALF_EVEN)


# ---------------------------------------------------------------------------
# Fleiss' kappa
# ---------------------------------------------------------------------------


def fleiss_kappa(ratings: Sequence[Sequence[int]], raters_per_subject: int) -> float | None:
    """Chance-corrected agreement for a subjects x categories count matrix.

    Returns None (undefined) when expected agreement is 1, i.e. every
    rating landed in a single category.
    """
    n = raters_per_subject
    if n < 2:
        raise ValueError("raters_per_subject must be >= 2")
    if not ratings:
        raise ValueError("ratings matrix must have at least one subject")
    width = len(ratings[0])
    for i, row in enumerate(ratings):
        if len(row) != width:
            raise RowSumMismatch(f"row {i} has {len(row)} categories, expected {width}")
        if any(int(v) != v or v < 0 for v in row):
            raise RowSumMismatch(f"row {i} contains non-count entries")
        if sum(row) != n:
            raise RowSumMismatch(f"row {i} sums to {sum(row)}, expected {n}")

    subjects = len(ratings)
    category_totals = [sum(row[j] for row in ratings) for j in range(width)]
    p = [t / (subjects * n) for t in category_totals]
    p_bar_e = sum(pj * pj for pj in p)
    per_subject = [(sum(v * v for v in row) - n) / (n * (n - 1)) for row in ratings]
    p_bar = sum(per_subject) / subjects
    if p_bar_e == 1.0:
        return None
    return (p_bar - p_bar_e) / (1.0 - p_bar_e)


@dataclass(frozen=True)
class AgreementReport:
    per_metric_kappa: dict[str, float | None]
    skipped_subjects: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_metric_kappa": dict(self.per_metric_kappa),
            "skipped_subjects": dict(self.skipped_subjects),
        }


def agreement_from_scorecards(scorecards: Sequence[RubricScorecard]) -> AgreementReport:
    """Per-criterion kappa treating each distinct score value as a category.

    Fleiss' statistic needs a constant rater count, so papers rated by a
    non-modal number of reviewers are skipped and counted per criterion.
    """
    kappas: dict[str, float | None] = {}
    skipped: dict[str, int] = {}
    for criterion in CRITERIA:
        by_paper: dict[str, list[float]] = {}
        for card in scorecards:
            if criterion.name in card.scores:
                by_paper.setdefault(card.paper_id, []).append(card.scores[criterion.name])
        counts = [len(v) for v in by_paper.values() if len(v) >= 2]
        if not counts:
            kappas[criterion.name] = None
            continue
        n = statistics.mode(counts)
        subjects = {pid: vals for pid, vals in by_paper.items() if len(vals) == n}
        skipped[criterion.name] = len(by_paper) - len(subjects)
        categories = sorted({v for vals in subjects.values() for v in vals})
        matrix = []
        for pid in sorted(subjects):
            row = [0] * len(categories)
            for value in subjects[pid]:
                row[categories.index(value)] += 1
            matrix.append(row)
        kappas[criterion.name] = fleiss_kappa(matrix, n)
    return AgreementReport(per_metric_kappa=kappas, skipped_subjects=skipped)


# ---------------------------------------------------------------------------
# LLM review passes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LlmReviewResult:
    aggregate: RubricScorecard
    passes: tuple[RubricScorecard, ...]
    warnings: tuple[str, ...]
    input_tokens: int = 0
    output_tokens: int = 0


def _review_prompt(body: str, strategy: PromptStrategy, pass_index: int) -> str:
    criteria_lines = "\n".join(f"- {c.name}: score in [1, {c.max}]" for c in CRITERIA)
    headers = ", ".join(QUALITATIVE_HEADERS)
    strategy_line = {
        StrategyKind.ZERO_SHOT: "Score directly.",
        StrategyKind.FEW_SHOT: "Calibrate against typical borderline conference reviews before scoring.",
        StrategyKind.CHAIN_OF_THOUGHT: "Reason through each criterion before giving final scores.",
    }[strategy.kind]
    return (
        "[stage:review]\n"
        "Review the manuscript below against the rubric. The review is blind: "
        "no author identities are available and none may be guessed.\n"
        f"{strategy_line}\n"
        f"Address {headers} inside your justifications as free text.\n"
        f"{criteria_lines}\n"
        "Return JSON: {\"scores\": {criterion: number}, \"justifications\": {criterion: text}}\n"
        "FORMAT: review\n"
        f"PASS: {pass_index}\n\n"
        "--- MANUSCRIPT ---\n"
        f"{body}"
    )


def _parse_review_json(text: str) -> tuple[dict[str, float], dict[str, str]]:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise MalformedModelOutput("no JSON object in review output")
    try:
        data = json.loads(text[start : end + 1])
    except ValueError as exc:
        raise MalformedModelOutput(f"unparseable review JSON: {exc}") from exc
    raw_scores = data.get("scores", data)
    if not isinstance(raw_scores, dict):
        raise MalformedModelOutput("review JSON lacks a scores object")
    lowered = {str(k).strip().lower(): v for k, v in raw_scores.items()}
    scores: dict[str, float] = {}
    for criterion in CRITERIA:
        value = lowered.get(criterion.name.lower())
        if value is None:
            raise MalformedModelOutput(f"review JSON missing {criterion.name}")
        try:
            scores[criterion.name] = float(value)
        except (TypeError, ValueError) as exc:
            raise MalformedModelOutput(f"non-numeric score for {criterion.name}") from exc
    raw_just = data.get("justifications", {})
    justifications = {str(k): str(v) for k, v in raw_just.items()} if isinstance(raw_just, dict) else {}
    return scores, justifications


def llm_review(
    doc: "LatexDocument",
    strategy: PromptStrategy,
    passes: int,
    gateway: "Gateway",
    model: str,
    paper_kind: PaperKind = PaperKind.REVIEW,
    tool_mode: ToolMode = ToolMode.WITH_TOOL,
    paper_id: str = "",
) -> LlmReviewResult:
    """k blind review passes aggregated by per-criterion arithmetic mean."""
    if not 1 <= passes <= 10:
        raise ValueError("passes must be in [1, 10]")
    warnings: list[str] = []
    pass_cards: list[RubricScorecard] = []
    input_tokens = output_tokens = 0
    for pass_index in range(1, passes + 1):
        prompt = _review_prompt(doc.body, strategy, pass_index)
        scores, justifications, usage = _review_pass(gateway, model, prompt)
        input_tokens += usage[0]
        output_tokens += usage[1]
        for name, value in list(scores.items()):
            cap = CRITERION_BY_NAME[name].max
            clamped = min(max(value, 1.0), float(cap))
            if clamped != value:
                warnings.append(f"pass {pass_index}: {name}={value} clamped to {clamped}")
                scores[name] = clamped
        pass_cards.append(
            RubricScorecard(
                reviewer=f"llm-pass-{pass_index}",
                scores=scores,
                justifications=justifications,
                strategy=strategy,
                tool_mode=tool_mode,
                paper_kind=paper_kind,
                paper_id=paper_id,
            )
        )
    aggregate_scores = {
        c.name: sum(card.scores[c.name] for card in pass_cards) / len(pass_cards)
        for c in CRITERIA
    }
    aggregate_just = {
        c.name: "\n---\n".join(
            card.justifications.get(c.name, "") for card in pass_cards
        ).strip("\n-")
        for c in CRITERIA
    }
    aggregate = RubricScorecard(
        reviewer="llm-aggregate",
        scores=aggregate_scores,
        justifications=aggregate_just,
        strategy=strategy,
        tool_mode=tool_mode,
        paper_kind=paper_kind,
        paper_id=paper_id,
    )
    return LlmReviewResult(
        aggregate=aggregate,
        passes=tuple(pass_cards),
        warnings=tuple(warnings),
        input_tokens=input_tokens,
        output_tokens=output_tokens,
    )


def _review_pass(gateway, model, prompt):
    request = ChatRequest(
        model=model,
        messages=(("system", "You are a rigorous, blind conference reviewer."), ("user", prompt)),
        temperature=0.0,
        max_output_tokens=2048,
    )
    response = gateway.complete(request)
    try:
        scores, justifications = _parse_review_json(response.text)
    except MalformedModelOutput:
        retry = ChatRequest(
            model=model,
            messages=request.messages
            + (("user", "Your previous output was not valid JSON. Return ONLY the JSON object."),),
            temperature=0.0,
            max_output_tokens=2048,
        )
        retry_response = gateway.complete(retry)
        scores, justifications = _parse_review_json(retry_response.text)
        return scores, justifications, (
            response.input_tokens + retry_response.input_tokens,
            response.output_tokens + retry_response.output_tokens,
        )
    return scores, justifications, (response.input_tokens, response.output_tokens)


# ---------------------------------------------------------------------------
# Human score ingestion
# ---------------------------------------------------------------------------

CSV_BASE_COLUMNS = ("paper_id", "reviewer", "paper_kind", "tool_mode", "strategy")
CSV_AUDIT_COLUMNS = ("paper_format", "citations_relevancy", "hallucination_flag", "ethical_flag")

_TOOL_MODE_ALIASES = {
    "with_tool": ToolMode.WITH_TOOL, "with": ToolMode.WITH_TOOL,
    "without_tool": ToolMode.WITHOUT_TOOL, "without": ToolMode.WITHOUT_TOOL,
}
_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def ingest_human_scores(csv_path: str) -> tuple[list[RubricScorecard], list[FormatAudit]]:
    """Parse reviewer rows; interpolate missing cells; drop absent reviewers.

    A cell of "-" across all criteria marks a reviewer who did not review
    that paper: the row leaves the rater pool entirely. A single missing
    cell is filled with the mean of the other reviewers' values for the
    same (paper, criterion) and flagged as interpolated.
    """
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty CSV", row=0, column="")
        for column in CSV_BASE_COLUMNS:
            if column not in reader.fieldnames:
                raise SchemaError(f"missing column {column}", row=0, column=column)
        for criterion in CRITERIA:
            if criterion.name not in reader.fieldnames:
                raise SchemaError(f"missing column {criterion.name}", row=0, column=criterion.name)
        rows = list(reader)

    parsed: list[dict[str, Any]] = []
    for index, row in enumerate(rows, start=2):  # header is line 1
        criterion_cells = {c.name: (row.get(c.name) or "").strip() for c in CRITERIA}
        if all(v in ("-", "") for v in criterion_cells.values()) and any(
            v == "-" for v in criterion_cells.values()
        ):
            continue  # reviewer did not participate for this paper
        try:
            paper_kind = PaperKind(row["paper_kind"].strip().lower())
        except ValueError:
            raise SchemaError(f"bad paper_kind {row['paper_kind']!r}", row=index, column="paper_kind")
        tool_mode = _TOOL_MODE_ALIASES.get(row["tool_mode"].strip().lower())
        if tool_mode is None:
            raise SchemaError(f"bad tool_mode {row['tool_mode']!r}", row=index, column="tool_mode")
        try:
            strategy = PromptStrategy.parse(row["strategy"])
        except ValueError:
            raise SchemaError(f"bad strategy {row['strategy']!r}", row=index, column="strategy")
        scores: dict[str, float] = {}
        missing: list[str] = []
        for criterion in CRITERIA:
            cell = criterion_cells[criterion.name]
            if cell in ("", "-"):
                missing.append(criterion.name)
                continue
            try:
                value = float(cell)
            except ValueError:
                raise SchemaError(f"non-numeric score {cell!r}", row=index, column=criterion.name)
            if not 1.0 <= value <= criterion.max:
                raise SchemaError(
                    f"score {value} outside [1, {criterion.max}]", row=index, column=criterion.name
                )
            scores[criterion.name] = value
        parsed.append(
            {
                "row": index,
                "paper_id": row["paper_id"].strip(),
                "reviewer": row["reviewer"].strip(),
                "paper_kind": paper_kind,
                "tool_mode": tool_mode,
                "strategy": strategy,
                "scores": scores,
                "missing": missing,
                "raw": row,
            }
        )

    # Cross-reviewer interpolation needs all rows parsed first.
    scorecards: list[RubricScorecard] = []
    audits: list[FormatAudit] = []
    for entry in parsed:
        interpolated: set[str] = set()
        for name in entry["missing"]:
            peers = [
                other["scores"][name]
                for other in parsed
                if other is not entry
                and other["paper_id"] == entry["paper_id"]
                and name in other["scores"]
            ]
            if not peers:
                raise SchemaError(
                    f"cannot interpolate {name}: no peer values", row=entry["row"], column=name
                )
            entry["scores"][name] = sum(peers) / len(peers)
            interpolated.add(name)
        scorecards.append(
            RubricScorecard(
                reviewer=entry["reviewer"],
                scores=entry["scores"],
                justifications={},
                strategy=entry["strategy"],
                tool_mode=entry["tool_mode"],
                paper_kind=entry["paper_kind"],
                paper_id=entry["paper_id"],
                interpolated=frozenset(interpolated),
            )
        )
        audit = _parse_audit(entry)
        if audit is not None:
            audits.append(audit)
    return scorecards, audits


def _parse_audit(entry: dict[str, Any]) -> FormatAudit | None:
    row = entry["raw"]
    cells = {c: (row.get(c) or "").strip() for c in CSV_AUDIT_COLUMNS}
    if not any(cells.values()):
        return None
    try:
        paper_format = float(cells["paper_format"])
        citations = float(cells["citations_relevancy"])
    except ValueError:
        raise SchemaError(
            "audit columns must be complete and numeric", row=entry["row"], column="paper_format"
        )
    flags = {}
    for name in ("hallucination_flag", "ethical_flag"):
        value = _BOOL_VALUES.get(cells[name].lower())
        if value is None:
            raise SchemaError(f"bad boolean {cells[name]!r}", row=entry["row"], column=name)
        flags[name] = value
    audit = FormatAudit(
        paper_format=paper_format,
        citations_relevancy=citations,
        hallucination_flag=flags["hallucination_flag"],
        ethical_flag=flags["ethical_flag"],
        paper_kind=entry["paper_kind"],
        tool_mode=entry["tool_mode"],
        strategy=entry["strategy"],
        paper_id=entry["paper_id"],
    )
    problems = audit.violations()
    if problems:
        raise SchemaError("; ".join(problems), row=entry["row"], column="paper_format")
    return audit


# ---------------------------------------------------------------------------
# Comparison report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportCell:
    paper_kind: PaperKind
    tool_mode: ToolMode
    strategy_kind: StrategyKind
    scorecard_count: int
    criterion_means: dict[str, float]
    mean_weighted_average: float
    audit_count: int = 0
    mean_paper_format: float | None = None
    mean_citations_relevancy: float | None = None
    hallucination_rate: float | None = None
    ethical_rate: float | None = None


@dataclass(frozen=True)
class ComparisonReport:
    cells: tuple[ReportCell, ...]

    def to_json(self) -> str:
        payload = []
        for cell in self.cells:
            payload.append(
                {
                    "paper_kind": cell.paper_kind.value,
                    "tool_mode": cell.tool_mode.value,
                    "strategy": cell.strategy_kind.value,
                    "scorecard_count": cell.scorecard_count,
                    "criterion_means": {k: round(v, 4) for k, v in cell.criterion_means.items()},
                    "mean_weighted_average": round(cell.mean_weighted_average, 4),
                    "audit_count": cell.audit_count,
                    "mean_paper_format": cell.mean_paper_format,
                    "mean_citations_relevancy": cell.mean_citations_relevancy,
                    "hallucination_rate": cell.hallucination_rate,
                    "ethical_rate": cell.ethical_rate,
                }
            )
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        header = (
            ["paper_kind", "tool_mode", "strategy", "scorecard_count"]
            + [f"mean_{c.name.lower()}" for c in CRITERIA]
            + [
                "mean_weighted_average", "audit_count", "mean_paper_format",
                "mean_citations_relevancy", "hallucination_rate", "ethical_rate",
            ]
        )
        lines = [",".join(header)]
        for cell in self.cells:
            row = [
                cell.paper_kind.value, cell.tool_mode.value, cell.strategy_kind.value,
                str(cell.scorecard_count),
            ]
            row += [f"{cell.criterion_means[c.name]:.4f}" for c in CRITERIA]
            row.append(f"{cell.mean_weighted_average:.4f}")
            row.append(str(cell.audit_count))
            for value in (
                cell.mean_paper_format, cell.mean_citations_relevancy,
                cell.hallucination_rate, cell.ethical_rate,
            ):
                row.append("" if value is None else f"{value:.4f}")
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def aggregate_report(
    scorecards: Sequence[RubricScorecard], audits: Sequence[FormatAudit] = ()
) -> ComparisonReport:
    """Grid means over (paper_kind, tool_mode, strategy); flag rates as means."""
    if not scorecards:
        raise ValueError("at least one scorecard required")
    groups: dict[tuple, list[RubricScorecard]] = {}
    for card in scorecards:
        key = (card.paper_kind, card.tool_mode, card.strategy.kind)
        groups.setdefault(key, []).append(card)
    audit_groups: dict[tuple, list[FormatAudit]] = {}
    for audit in audits:
        key = (audit.paper_kind, audit.tool_mode, audit.strategy.kind)
        audit_groups.setdefault(key, []).append(audit)

    cells = []
    for key in sorted(groups, key=lambda k: (k[0].value, k[1].value, k[2].value)):
        cards = groups[key]
        criterion_means = {
            c.name: sum(card.scores[c.name] for card in cards) / len(cards) for c in CRITERIA
        }
        mean_wa = sum(weighted_average(card) for card in cards) / len(cards)
        cell_audits = audit_groups.get(key, [])
        cells.append(
            ReportCell(
                paper_kind=key[0],
                tool_mode=key[1],
                strategy_kind=key[2],
                scorecard_count=len(cards),
                criterion_means=criterion_means,
                mean_weighted_average=mean_wa,
                audit_count=len(cell_audits),
                mean_paper_format=_mean(a.paper_format for a in cell_audits),
                mean_citations_relevancy=_mean(a.citations_relevancy for a in cell_audits),
                hallucination_rate=_mean(float(a.hallucination_flag) for a in cell_audits),
                ethical_rate=_mean(float(a.ethical_flag) for a in cell_audits),
            )
        )
    return ComparisonReport(cells=tuple(cells))


def _mean(values: Iterable[float]) -> float | None:
    collected = list(values)
    return sum(collected) / len(collected) if collected else None


__all__ = [
    "AgreementReport",
    "ComparisonReport",
    "CRITERIA",
    "CRITERION_BY_NAME",
    "CSV_AUDIT_COLUMNS",
    "CSV_BASE_COLUMNS",
    "FormatAudit",
    "LlmReviewResult",
    "QUALITATIVE_HEADERS",
    "ReportCell",
    "RubricCriterion",
    "RubricScorecard",
    "WEIGHTED_CRITERIA",
    "WEIGHT_DENOMINATOR",
    "agreement_from_scorecards",
    "aggregate_report",
    "display_weighted_average",
    "fleiss_kappa",
    "ingest_human_scores",
    "llm_review",
    "weighted_average",
]

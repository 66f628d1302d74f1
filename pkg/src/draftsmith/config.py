"""User-facing run configuration parsing (TOML files, JSON request bodies)."""

from __future__ import annotations

from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .domain import ContextBudget, PaperKind, PromptStrategy, RunConfig, ToolMode
from .errors import InvalidConfig
from .literature import ReferenceRecord, ReferenceSource, normalize_doi, record_id_for

_TOOL_MODE_ALIASES = {
    "with_tool": ToolMode.WITH_TOOL,
    "with": ToolMode.WITH_TOOL,
    "without_tool": ToolMode.WITHOUT_TOOL,
    "without": ToolMode.WITHOUT_TOOL,
}

DEFAULT_BUDGET_TOKENS = 4000


def parse_user_config(data: dict[str, Any]) -> tuple[RunConfig, list[ReferenceRecord]]:
    """Coerce a loosely-typed config mapping into a RunConfig plus seed records.

    Raises InvalidConfig listing every problem found, mirroring
    validate_run_config so callers surface one combined violation list.
    """
    problems: list[str] = []

    def enum_field(name: str, parser, default=None):
        raw = data.get(name, default)
        if raw is None:
            problems.append(f"{name} is required")
            return None
        try:
            return parser(str(raw).strip().lower())
        except (KeyError, ValueError):
            problems.append(f"{name} has unknown value {raw!r}")
            return None

    paper_kind = enum_field("paper_kind", PaperKind)
    tool_mode = enum_field("tool_mode", lambda v: _TOOL_MODE_ALIASES[v])
    strategy = None
    try:
        strategy = PromptStrategy.parse(
            str(data.get("strategy", "zs")), exemplar_count=int(data.get("exemplar_count", 2))
        )
    except (KeyError, ValueError):
        problems.append(f"strategy has unknown value {data.get('strategy')!r}")

    budget_raw = data.get("context_budget", {})
    if isinstance(budget_raw, int):
        budget_raw = {"total_tokens": budget_raw}
    budget = ContextBudget(
        total_tokens=int(budget_raw.get("total_tokens", DEFAULT_BUDGET_TOKENS)),
        fraction_citations=float(budget_raw.get("fraction_citations", 0.4)),
        fraction_structure=float(budget_raw.get("fraction_structure", 0.3)),
        fraction_methods=float(budget_raw.get("fraction_methods", 0.3)),
    )

    if "random_seed" not in data:
        problems.append("random_seed is required")

    seeds = []
    for i, raw in enumerate(data.get("seed_references", [])):
        if isinstance(raw, str):
            problems.append(
                f"seed_references[{i}] must be an object with a title (got a bare string)"
            )
            continue
        title = str(raw.get("title", "")).strip()
        if not title:
            problems.append(f"seed_references[{i}] missing title")
            continue
        doi = normalize_doi(raw.get("doi"))
        seeds.append(
            ReferenceRecord(
                id=raw.get("id") or record_id_for(title, doi),
                title=title,
                abstract=str(raw.get("abstract", "")),
                authors=tuple(raw.get("authors", ())),
                year=int(raw["year"]) if raw.get("year") is not None else None,
                venue=raw.get("venue"),
                doi=doi,
                source=ReferenceSource.HUMAN_SEED,
                relevance=1.0,
            )
        )

    if problems:
        raise InvalidConfig(problems)

    config = RunConfig(
        topic=str(data.get("topic", "")),
        paper_kind=paper_kind,
        tool_mode=tool_mode,
        strategy=strategy,
        generator_model=str(data.get("generator_model", "")),
        reviewer_model=str(data.get("reviewer_model") or data.get("generator_model", "")),
        n_max=int(data.get("n_max", 10)),
        top_n=int(data.get("top_n", 10)),
        context_budget=budget,
        random_seed=int(data["random_seed"]),
        max_regenerations=int(data.get("max_regenerations", 2)),
        auto_approve=bool(data.get("auto_approve", False)),
        seed_references=tuple(s.id for s in seeds),
    )
    return config, seeds


def load_config_file(path: str | Path) -> tuple[RunConfig, list[ReferenceRecord]]:
    with open(path, "rb") as fh:
        return parse_user_config(tomllib.load(fh))


__all__ = ["DEFAULT_BUDGET_TOKENS", "load_config_file", "parse_user_config"]

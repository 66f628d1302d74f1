"""Section prompt templates, external and editable per experiment grid.

Each section stage has a file per (paper kind, strategy) under
templates/<stage>.<kind>.<strategy>.txt, so the 2x3 grid can be varied
without code changes. Missing files are materialized from the defaults
below on first use; user edits always win afterwards.
"""

from __future__ import annotations

from pathlib import Path

from .domain import PaperKind, PromptStrategy, StrategyKind

SECTION_STAGES = ("abstract", "introduction", "related_work", "methods", "results", "conclusion")

STRATEGY_SUFFIX = {
    StrategyKind.ZERO_SHOT: "zs",
    StrategyKind.FEW_SHOT: "fs",
    StrategyKind.CHAIN_OF_THOUGHT: "cot",
}

_STAGE_GOALS = {
    "abstract": {
        PaperKind.REVIEW: "Write a concise abstract capturing the scope of the surveyed literature, the key claims, and the significance of the synthesis.",
        PaperKind.PERSPECTIVE: "Write a concise abstract stating the position taken, the key claims advanced, and why the argument matters.",
    },
    "introduction": {
        PaperKind.REVIEW: "Write an introduction that contextualizes the topic, defines the problem space, motivates the survey, and integrates citations from the curated literature.",
        PaperKind.PERSPECTIVE: "Write an introduction that frames the debate, defines the problem space, and motivates the position, citing the curated literature.",
    },
    "related_work": {
        PaperKind.REVIEW: "Write a related-work section built on thematic analysis and synthesis of the curated literature, grouping prior efforts by theme.",
        PaperKind.PERSPECTIVE: "Write a related-work section that critically weighs supporting and opposing perspectives from the curated literature.",
    },
    "methods": {
        PaperKind.REVIEW: "Document the literature selection and synthesis procedures: sources, inclusion criteria, and how findings were organized.",
        PaperKind.PERSPECTIVE: "Describe the conceptual and analytical methodology behind the argument, including how evidence was weighed.",
    },
    "results": {
        PaperKind.REVIEW: "Present findings organized by themes or research questions. Start each theme paragraph with 'theme:' and cite at least one reference per paragraph.",
        PaperKind.PERSPECTIVE: "Articulate the key claims and support each with evidence. Start each claim paragraph with 'claim:' and cite at least one reference per paragraph.",
    },
    "conclusion": {
        PaperKind.REVIEW: "Consolidate the insights of the survey, emphasize its contributions, and identify future research directions.",
        PaperKind.PERSPECTIVE: "Consolidate the argument, restate the contribution of the position, and identify future research directions.",
    },
}

_STRATEGY_BLOCKS = {
    StrategyKind.ZERO_SHOT: "Respond with the section text directly.",
    StrategyKind.FEW_SHOT: (
        "Match the register of the following exemplars before writing.\n{exemplars}"
    ),
    StrategyKind.CHAIN_OF_THOUGHT: (
        "First reason step by step about coverage and ordering, visibly. "
        "Then output the delimiter line 'FINAL ANSWER:' followed by the section text. "
        "Only text after the delimiter is kept."
    ),
}

# Placeholders substituted by the prompt builder via literal replacement,
# so user-edited templates may contain arbitrary braces.
PLACEHOLDERS = ("topic", "plan_points", "exemplars", "context", "cite_keys", "target_tokens", "note")


def render_template(text: str, values: dict[str, str]) -> str:
    for name in PLACEHOLDERS:
        text = text.replace("{" + name + "}", values.get(name, ""))
    return text


_EXEMPLARS = {
    stage: (
        f"Exemplar A ({stage}): a tightly scoped passage that states its aim, "
        "cites two prior efforts, and closes with the open question it leaves.",
        f"Exemplar B ({stage}): a contrasting passage that foregrounds disagreement "
        "between sources before committing to an interpretation.",
    )
    for stage in SECTION_STAGES
}


def template_id(stage: str, kind: PaperKind) -> str:
    return f"{stage}.{kind.value}"


def template_filename(stage: str, kind: PaperKind, strategy: PromptStrategy) -> str:
    return f"{stage}.{kind.value}.{STRATEGY_SUFFIX[strategy.kind]}.txt"


def default_template_text(stage: str, kind: PaperKind, strategy: PromptStrategy) -> str:
    return (
        f"[stage:{template_id(stage, kind)}]\n"
        f"{_STAGE_GOALS[stage][kind]}\n"
        "Topic: {topic}\n"
        "Planned points:\n"
        "{plan_points}\n"
        "\n"
        f"{_STRATEGY_BLOCKS[strategy.kind]}\n"
        "\n"
        "Cite only keys listed under KEYS, via \\cite commands.\n"
        "\n"
        "{context}\n"
        "\n"
        "FORMAT: section\n"
        "KEYS: {cite_keys}\n"
        "TARGET_TOKENS: {target_tokens}\n"
        "{note}"
    )


def default_templates() -> dict[str, str]:
    """filename -> text for the full 6x2x3 grid plus exemplars."""
    out: dict[str, str] = {}
    for stage in SECTION_STAGES:
        for kind in PaperKind:
            for strategy_kind in StrategyKind:
                strategy = PromptStrategy(strategy_kind, 2 if strategy_kind is StrategyKind.FEW_SHOT else 0)
                out[template_filename(stage, kind, strategy)] = default_template_text(stage, kind, strategy)
        for i, exemplar in enumerate(_EXEMPLARS[stage], start=1):
            out[f"exemplars/{stage}.{i}.txt"] = exemplar + "\n"
    return out


class TemplateLibrary:
    """Filesystem-backed templates with packaged defaults as fallback."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.materialize()

    def materialize(self) -> None:
        (self.root / "exemplars").mkdir(parents=True, exist_ok=True)
        for name, text in default_templates().items():
            path = self.root / name
            if not path.exists():
                path.write_text(text, encoding="utf-8")

    def section_template(
        self, stage: str, kind: PaperKind, strategy: PromptStrategy
    ) -> tuple[str, str]:
        """(template id for provenance, template text)."""
        if stage not in SECTION_STAGES:
            raise KeyError(f"no section template for stage {stage}")
        path = self.root / template_filename(stage, kind, strategy)
        return template_id(stage, kind), path.read_text(encoding="utf-8")

    def exemplars(self, stage: str, count: int) -> list[str]:
        """Up to count shipped exemplars for the stage, in file order."""
        out = []
        i = 1
        while len(out) < count:
            path = self.root / "exemplars" / f"{stage}.{i}.txt"
            if not path.exists():
                break
            out.append(path.read_text(encoding="utf-8").strip())
            i += 1
        return out


__all__ = [
    "PLACEHOLDERS",
    "SECTION_STAGES",
    "STRATEGY_SUFFIX",
    "TemplateLibrary",
    "default_template_text",
    "default_templates",
    "render_template",
    "template_filename",
    "template_id",
]

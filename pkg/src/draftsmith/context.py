"""Keeps agent prompts inside the model's context budget.

The budget is split into three pools (citations / structure / methods);
each pool is filled greedily and overflow is trimmed lowest-relevance
first, so an assembled bundle can never exceed its budget.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Sequence

from .domain import ContextBudget, SectionDraft, SectionKind
from .errors import BudgetTooSmall, KTooLarge
from .gateway import ChatRequest, estimate_tokens
from .literature import CuratedBibliography, extract_dataset_mentions

if TYPE_CHECKING:
    from .gateway import Gateway

MIN_BUDGET_TOKENS = 128
MIN_SUMMARY_TOKENS = 32

_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class ContextBundle:
    """Prompt material for one stage, assembled under a specific budget."""

    reference_cluster_summaries: tuple[tuple[str, str], ...]
    outline: str
    prior_section_digests: tuple[tuple[SectionKind, str], ...]
    methods_notes: str = ""
    budget_tokens: int = 0

    def token_estimate(self) -> int:
        total = 0
        for label, text in self.reference_cluster_summaries:
            total += estimate_tokens(f"{label}: {text}")
        total += estimate_tokens(self.outline)
        for _, digest in self.prior_section_digests:
            total += estimate_tokens(digest)
        total += estimate_tokens(self.methods_notes)
        return total

    def to_dict(self) -> dict[str, Any]:
        return {
            "reference_cluster_summaries": [list(p) for p in self.reference_cluster_summaries],
            "outline": self.outline,
            "prior_section_digests": [[k.value, d] for k, d in self.prior_section_digests],
            "methods_notes": self.methods_notes,
            "budget_tokens": self.budget_tokens,
        }


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------


def _bag(text: str) -> Counter:
    return Counter(_TOKEN.findall(text.lower()))


def bag_jaccard(a: Counter, b: Counter) -> float:
    """Multiset Jaccard: sum of min counts over sum of max counts."""
    union = 0
    inter = 0
    for token in set(a) | set(b):
        ca, cb = a[token], b[token]
        inter += min(ca, cb)
        union += max(ca, cb)
    return 1.0 if union == 0 else inter / union


def cluster_references(bib: CuratedBibliography, k: int) -> list[list[str]]:
    """Partition record ids into exactly k non-empty clusters.

    Farthest-first seeding then greedy assignment by mean bag-of-words
    Jaccard over title+abstract. Deterministic given input order; ties
    resolve to the earliest record / lowest cluster index.
    """
    n = len(bib.records)
    if k < 1 or k > n:
        raise KTooLarge(f"k={k} outside [1, {n}]")
    bags = [_bag(f"{r.title} {r.abstract}") for r in bib.records]

    seed_indices = [0]
    while len(seed_indices) < k:
        best_idx, best_score = None, None
        for i in range(n):
            if i in seed_indices:
                continue
            closest = max(bag_jaccard(bags[i], bags[s]) for s in seed_indices)
            if best_score is None or closest < best_score:
                best_idx, best_score = i, closest
        seed_indices.append(best_idx)

    clusters: list[list[int]] = [[s] for s in seed_indices]
    for i in range(n):
        if i in seed_indices:
            continue
        best_cluster, best_sim = 0, -1.0
        for c, members in enumerate(clusters):
            sim = sum(bag_jaccard(bags[i], bags[m]) for m in members) / len(members)
            if sim > best_sim:
                best_cluster, best_sim = c, sim
        clusters[best_cluster].append(i)
    return [[bib.records[i].id for i in sorted(members)] for members in clusters]


def default_cluster_count(record_count: int) -> int:
    """ceil(n/4) clamped to [1, 8]; keeps summaries few enough for small budgets."""
    if record_count <= 0:
        return 1
    return max(1, min(8, math.ceil(record_count / 4)))


# ---------------------------------------------------------------------------
# Summarization
# ---------------------------------------------------------------------------


def _hard_truncate(text: str, target_tokens: int) -> str:
    if estimate_tokens(text) <= target_tokens:
        return text
    return text[: target_tokens * 4]


def summarize_cluster(
    records: Sequence, target_tokens: int, gateway: "Gateway", model: str
) -> str:
    """Compress one reference cluster into at most target_tokens.

    One gateway call; a single re-summarize on overflow, then a hard
    truncation so the contract holds regardless of model behavior.
    """
    if target_tokens < MIN_SUMMARY_TOKENS:
        raise ValueError(f"target_tokens must be >= {MIN_SUMMARY_TOKENS}")
    if not records:
        return ""
    material = "\n".join(f"- {r.title}: {r.abstract}" for r in records)
    text = _summary_call(gateway, model, material, target_tokens)
    if estimate_tokens(text) > target_tokens:
        text = _summary_call(gateway, model, material, target_tokens, firmer=True)
    return _hard_truncate(text, target_tokens)


def _summary_call(gateway, model, material, target_tokens, firmer=False) -> str:
    instruction = "Condense the following references into a compact summary."
    if firmer:
        instruction += " The previous summary was too long; be substantially shorter."
    prompt = (
        "[stage:summarize]\n"
        f"{instruction}\n"
        "FORMAT: summary\n"
        f"TARGET_TOKENS: {target_tokens}\n\n"
        f"{material}"
    )
    response = gateway.complete(
        ChatRequest(
            model=model,
            messages=(("system", "You compress scholarly material faithfully."), ("user", prompt)),
            temperature=0.0,
            max_output_tokens=max(target_tokens * 2, MIN_SUMMARY_TOKENS),
        )
    )
    return response.text


def distill_draft(
    section: SectionDraft, target_tokens: int, gateway: "Gateway", model: str
) -> str:
    """Digest a section for downstream prompts, keeping its cited keys."""
    if target_tokens < MIN_SUMMARY_TOKENS:
        raise ValueError(f"target_tokens must be >= {MIN_SUMMARY_TOKENS}")
    if not section.body.strip():
        return ""
    prompt = (
        "[stage:distill]\n"
        f"Condense this {section.kind.value} section, keeping every citation key.\n"
        "FORMAT: summary\n"
        f"TARGET_TOKENS: {target_tokens}\n\n"
        f"{section.body}"
    )
    response = gateway.complete(
        ChatRequest(
            model=model,
            messages=(("system", "You compress scholarly material faithfully."), ("user", prompt)),
            temperature=0.0,
            max_output_tokens=max(target_tokens * 2, MIN_SUMMARY_TOKENS),
        )
    )
    digest = response.text
    missing = [key for key in section.cited_keys if key not in digest]
    if missing:
        keys_line = "\nCited: " + ", ".join(missing)
        room = target_tokens - estimate_tokens(keys_line)
        digest = _hard_truncate(digest, max(room, 0)) + keys_line
    return _hard_truncate(digest, target_tokens) if not missing else digest


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def pool_sizes(budget: ContextBudget) -> tuple[int, int, int]:
    """floor(total x fraction) per pool; the sum never exceeds the total."""
    return (
        int(budget.total_tokens * budget.fraction_citations),
        int(budget.total_tokens * budget.fraction_structure),
        int(budget.total_tokens * budget.fraction_methods),
    )


def extractive_cluster_summaries(
    bib: CuratedBibliography, k: int | None = None
) -> list[tuple[str, str, float]]:
    """(label, summary, relevance) per cluster without any gateway call."""
    if not bib.records:
        return []
    k = k or default_cluster_count(len(bib.records))
    by_id = {r.id: r for r in bib.records}
    out = []
    for index, cluster in enumerate(cluster_references(bib, k)):
        members = [by_id[rid] for rid in cluster]
        summary = "; ".join(
            f"{r.title} ({r.abstract[:120]})" if r.abstract else r.title for r in members
        )
        relevance = max(r.relevance for r in members)
        out.append((f"cluster-{index + 1}", summary, relevance))
    return out


def assemble_context(
    budget: ContextBudget,
    bib: CuratedBibliography,
    outline: str,
    prior_digests: Sequence[tuple[SectionKind, str]],
    stage: str,
    summaries: Sequence[tuple[str, str, float]] | None = None,
) -> ContextBundle:
    """Fit citations, structure and methods material into the budget pools.

    Trimming order on overflow: lowest-relevance cluster summaries first,
    then oldest prior-section digests. The outline is never dropped, only
    hard-truncated when it alone exceeds the structure pool.
    """
    problems = budget.violations()
    if problems:
        raise ValueError("; ".join(problems))
    if budget.total_tokens < MIN_BUDGET_TOKENS:
        raise BudgetTooSmall(f"budget must be >= {MIN_BUDGET_TOKENS} tokens")
    citations_pool, structure_pool, methods_pool = pool_sizes(budget)

    candidate_summaries = list(
        summaries if summaries is not None else extractive_cluster_summaries(bib)
    )
    candidate_summaries.sort(key=lambda item: -item[2])
    kept_summaries: list[tuple[str, str]] = []
    used = 0
    for label, text, _ in candidate_summaries:
        cost = estimate_tokens(f"{label}: {text}")
        if used + cost <= citations_pool:
            kept_summaries.append((label, text))
            used += cost
        elif not kept_summaries and citations_pool >= 8:
            room = citations_pool - estimate_tokens(f"{label}: ")
            kept_summaries.append((label, _hard_truncate(text, max(room, 0))))
            break
        else:
            break  # everything below this relevance is trimmed

    outline_kept = _hard_truncate(outline, structure_pool)
    used = estimate_tokens(outline_kept)
    kept_digests: list[tuple[SectionKind, str]] = []
    for kind, digest in reversed(list(prior_digests)):  # newest first, oldest trimmed
        cost = estimate_tokens(digest)
        if used + cost <= structure_pool:
            kept_digests.append((kind, digest))
            used += cost
        else:
            break
    kept_digests.reverse()

    methods_notes = ""
    if stage == "methods" and methods_pool > 0:
        lines = []
        used = 0
        for mention in extract_dataset_mentions(bib):
            line = f"{mention.name}: {mention.context_sentence}"
            cost = estimate_tokens(line + "\n")
            if used + cost > methods_pool:
                break
            lines.append(line)
            used += cost
        methods_notes = "\n".join(lines)

    return ContextBundle(
        reference_cluster_summaries=tuple(kept_summaries),
        outline=outline_kept,
        prior_section_digests=tuple(kept_digests),
        methods_notes=methods_notes,
        budget_tokens=budget.total_tokens,
    )


__all__ = [
    "ContextBudget",
    "ContextBundle",
    "MIN_BUDGET_TOKENS",
    "MIN_SUMMARY_TOKENS",
    "assemble_context",
    "bag_jaccard",
    "cluster_references",
    "default_cluster_count",
    "distill_draft",
    "extractive_cluster_summaries",
    "pool_sizes",
    "summarize_cluster",
]

"""Shared fixtures: offline runtime, fixture providers, base run config."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from draftsmith.domain import (
    APPROVE,
    ContextBudget,
    PaperKind,
    PromptStrategy,
    RunConfig,
    StrategyKind,
    ToolMode,
)
from draftsmith.literature import ReferenceRecord, ReferenceSource
from draftsmith.pipeline import make_runtime

SCHOLAR_RECORDS = [
    {
        "title": f"Study {i} on staged agent pipelines",
        "abstract": (
            f"We investigate facet {i} of multi-agent drafting and evaluate on the "
            f"AGENT-{i} benchmark with ablations across prompt budgets."
        ),
        "authors": [f"Riley Smith{i}", "Jordan Doe"],
        "year": 2018 + i % 6,
        "venue": "Journal of Agents" if i % 2 else None,
        "doi": f"10.1234/agent.{i}",
    }
    for i in range(12)
]

ASK_RECORDS = [
    {
        "title": f"Ask result {i} about retrieval grounding",
        "abstract": f"Retrieval augmentation angle {i}, trained on the CIFAR-10 dataset.",
        "authors": [f"Ada Byron{i}"],
        "year": 2020,
        "venue": "ASK Proceedings",
        "doi": f"10.5555/ask.{i}",
    }
    for i in range(4)
]


def write_provider_fixtures(data_dir: Path) -> None:
    fixtures = data_dir / "testdata" / "providers"
    fixtures.mkdir(parents=True, exist_ok=True)
    (fixtures / "scholar_search.json").write_text(json.dumps(SCHOLAR_RECORDS))
    (fixtures / "ask_search.json").write_text(json.dumps(ASK_RECORDS))


@pytest.fixture
def data_dir(tmp_path: Path) -> Path:
    write_provider_fixtures(tmp_path)
    return tmp_path


@pytest.fixture
def runtime(data_dir: Path):
    return make_runtime(data_dir)


def base_config(**overrides) -> RunConfig:
    defaults = dict(
        topic="multi-agent drafting of survey manuscripts",
        paper_kind=PaperKind.REVIEW,
        tool_mode=ToolMode.WITH_TOOL,
        strategy=PromptStrategy(StrategyKind.ZERO_SHOT),
        generator_model="mock-model",
        reviewer_model="mock-model",
        n_max=6,
        top_n=10,
        context_budget=ContextBudget(total_tokens=2000),
        random_seed=42,
        max_regenerations=2,
        auto_approve=True,
        seed_references=(),
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def seed_record(i: int = 0) -> ReferenceRecord:
    return ReferenceRecord(
        id=f"seed-{i}",
        title=f"Seed reference {i} on collaborative writing workflows",
        abstract=f"Human-curated anchor {i} describing oversight practices.",
        authors=[f"Casey Seed{i}"],
        year=2021,
        venue="Seed Letters",
        doi=f"10.9999/seed.{i}",
        source=ReferenceSource.HUMAN_SEED,
        relevance=1.0,
    )


@pytest.fixture
def approve_all():
    return lambda checkpoint: APPROVE

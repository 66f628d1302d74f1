"""Per-stage token, cost and wall-time accounting.

Currency lives in integer micro-USD so totals are exact; the headline
cost counts output tokens only, with input tokens kept for diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from decimal import Decimal
from typing import Any

from .gateway import ChatResponse, PricingTable, cost_usd

MICRO_PER_USD = 1_000_000


@dataclass(frozen=True)
class UsageEntry:
    stage: str
    model: str
    input_tokens: int
    output_tokens: int
    wall_ms: int
    cost_microusd: int

    @property
    def cost_usd(self) -> Decimal:
        return Decimal(self.cost_microusd) / MICRO_PER_USD

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "model": self.model,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_ms": self.wall_ms,
            "cost_microusd": self.cost_microusd,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UsageEntry":
        return cls(
            stage=d["stage"],
            model=d["model"],
            input_tokens=int(d["input_tokens"]),
            output_tokens=int(d["output_tokens"]),
            wall_ms=int(d["wall_ms"]),
            cost_microusd=int(d["cost_microusd"]),
        )


@dataclass(frozen=True)
class UsageLedger:
    run_id: str
    entries: tuple[UsageEntry, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"run_id": self.run_id, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UsageLedger":
        return cls(
            run_id=d["run_id"],
            entries=tuple(UsageEntry.from_dict(e) for e in d.get("entries", ())),
        )


def record(
    ledger: UsageLedger, stage: str, response: ChatResponse, pricing: PricingTable
) -> UsageLedger:
    """Append one completed call; cost is recomputed from the pricing table."""
    cost = cost_usd(response.output_tokens, response.model, pricing)
    entry = UsageEntry(
        stage=stage,
        model=response.model,
        input_tokens=response.input_tokens,
        output_tokens=response.output_tokens,
        wall_ms=response.latency_ms,
        cost_microusd=int(cost * MICRO_PER_USD),
    )
    return replace(ledger, entries=ledger.entries + (entry,))


@dataclass(frozen=True)
class StageUsage:
    stage: str
    calls: int
    input_tokens: int
    output_tokens: int
    wall_ms: int
    cost_microusd: int


@dataclass(frozen=True)
class UsageReport:
    run_id: str
    total_cost_microusd: int
    total_wall_ms: int
    total_input_tokens: int
    total_output_tokens: int
    stages: tuple[StageUsage, ...]
    cumulative_tokens: tuple[int, ...]  # input+output running total per entry

    @property
    def total_cost_usd(self) -> Decimal:
        return Decimal(self.total_cost_microusd) / MICRO_PER_USD

    def to_json(self) -> str:
        return json.dumps(
            {
                "run_id": self.run_id,
                "total_cost_usd": f"{self.total_cost_usd:.6f}",
                "total_wall_ms": self.total_wall_ms,
                "total_input_tokens": self.total_input_tokens,
                "total_output_tokens": self.total_output_tokens,
                "stages": [
                    {
                        "stage": s.stage,
                        "calls": s.calls,
                        "input_tokens": s.input_tokens,
                        "output_tokens": s.output_tokens,
                        "wall_ms": s.wall_ms,
                        "cost_usd": f"{Decimal(s.cost_microusd) / MICRO_PER_USD:.6f}",
                    }
                    for s in self.stages
                ],
                "cumulative_tokens": list(self.cumulative_tokens),
            },
            indent=2,
        )


def report(ledger: UsageLedger) -> UsageReport:
    """Pure summary: exact totals, stage breakdown in completion order."""
    stage_order: list[str] = []
    per_stage: dict[str, list[UsageEntry]] = {}
    cumulative: list[int] = []
    running = 0
    for entry in ledger.entries:
        if entry.stage not in per_stage:
            stage_order.append(entry.stage)
            per_stage[entry.stage] = []
        per_stage[entry.stage].append(entry)
        running += entry.input_tokens + entry.output_tokens
        cumulative.append(running)
    stages = tuple(
        StageUsage(
            stage=stage,
            calls=len(entries),
            input_tokens=sum(e.input_tokens for e in entries),
            output_tokens=sum(e.output_tokens for e in entries),
            wall_ms=sum(e.wall_ms for e in entries),
            cost_microusd=sum(e.cost_microusd for e in entries),
        )
        for stage, entries in ((s, per_stage[s]) for s in stage_order)
    )
    return UsageReport(
        run_id=ledger.run_id,
        total_cost_microusd=sum(e.cost_microusd for e in ledger.entries),
        total_wall_ms=sum(e.wall_ms for e in ledger.entries),
        total_input_tokens=sum(e.input_tokens for e in ledger.entries),
        total_output_tokens=sum(e.output_tokens for e in ledger.entries),
        stages=stages,
        cumulative_tokens=tuple(cumulative),
    )


def to_csv(ledger: UsageLedger) -> str:
    lines = ["stage,model,input_tokens,output_tokens,wall_ms,cost_usd"]
    for e in ledger.entries:
        lines.append(
            f"{e.stage},{e.model},{e.input_tokens},{e.output_tokens},{e.wall_ms},{e.cost_usd:.6f}"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "MICRO_PER_USD",
    "StageUsage",
    "UsageEntry",
    "UsageLedger",
    "UsageReport",
    "record",
    "report",
    "to_csv",
]

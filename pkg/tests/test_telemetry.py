"""Telemetry: exact micro-USD accounting and report shape."""

from decimal import Decimal

import pytest

from draftsmith.errors import UnknownModel
from draftsmith.gateway import ChatResponse, PricingTable
from draftsmith.telemetry import UsageLedger, record, report, to_csv


@pytest.fixture
def pricing():
    return PricingTable.from_prices({"m1": ("1.00", "1.00"), "tiny": ("0.10", "0.38")})


def response(output_tokens, model="m1", input_tokens=50, latency_ms=10):
    return ChatResponse(
        text="x", input_tokens=input_tokens, output_tokens=output_tokens,
        latency_ms=latency_ms, model=model,
    )


def test_entry_cost_output_tokens_only(pricing):
    ledger = record(UsageLedger("r"), "ideation", response(1_000, input_tokens=99_999), pricing)
    assert ledger.entries[0].cost_usd == Decimal("0.001000")
    assert ledger.entries[0].input_tokens == 99_999  # stored, not billed


def test_totals_are_exact_sums(pricing):
    ledger = UsageLedger("r")
    ledger = record(ledger, "a", response(1_000), pricing)
    ledger = record(ledger, "b", response(2_000), pricing)
    summary = report(ledger)
    assert summary.total_cost_usd == Decimal("0.003000")
    assert summary.total_output_tokens == 3_000


def test_unknown_model(pricing):
    with pytest.raises(UnknownModel):
        record(UsageLedger("r"), "a", response(10, model="ghost"), pricing)


def test_empty_ledger_report():
    summary = report(UsageLedger("r"))
    assert summary.total_cost_microusd == 0
    assert summary.stages == ()
    assert summary.cumulative_tokens == ()


def test_cumulative_curve_non_decreasing(pricing):
    ledger = UsageLedger("r")
    for i, tokens in enumerate([10, 500, 3, 800]):
        ledger = record(ledger, f"s{i % 2}", response(tokens), pricing)
    curve = report(ledger).cumulative_tokens
    assert list(curve) == sorted(curve)


def test_stage_breakdown_preserves_order(pricing):
    ledger = UsageLedger("r")
    for stage in ("ideation", "title", "ideation", "abstract"):
        ledger = record(ledger, stage, response(100), pricing)
    summary = report(ledger)
    assert [s.stage for s in summary.stages] == ["ideation", "title", "abstract"]
    assert summary.stages[0].calls == 2


def test_hand_summed_fixture(pricing):
    # tiny model: 0.38 USD / 1M tokens
    token_counts = [1_000, 2_500, 400, 100_000]
    ledger = UsageLedger("r")
    for i, tokens in enumerate(token_counts):
        ledger = record(ledger, f"stage{i}", response(tokens, model="tiny"), pricing)
    # hand-summed: 380 + 950 + 152 + 38000 micro-USD
    assert report(ledger).total_cost_microusd == 380 + 950 + 152 + 38_000
    assert report(ledger).total_cost_usd == Decimal("0.039482")


def test_cited_cost_range_exact_at_6_decimals(pricing):
    # the reported extreme per-paper costs must be representable exactly
    low = record(UsageLedger("r"), "s", response(5_000, model="tiny"), pricing)
    assert low.entries[0].cost_usd == Decimal("0.001900")
    high = record(UsageLedger("r"), "s", response(900_000), pricing)
    assert high.entries[0].cost_usd == Decimal("0.900000")
    assert f"{high.entries[0].cost_usd:.6f}" == "0.900000"


def test_csv_shape(pricing):
    ledger = record(UsageLedger("r"), "ideation", response(1_000), pricing)
    text = to_csv(ledger)
    lines = text.strip().splitlines()
    assert lines[0] == "stage,model,input_tokens,output_tokens,wall_ms,cost_usd"
    assert lines[1] == "ideation,m1,50,1000,10,0.001000"


def test_round_trip(pricing):
    ledger = record(UsageLedger("r"), "ideation", response(1_000), pricing)
    assert UsageLedger.from_dict(ledger.to_dict()) == ledger


def test_report_is_pure(pricing):
    ledger = record(UsageLedger("r"), "a", response(123), pricing)
    assert report(ledger).to_json() == report(ledger).to_json()

"""Provider-agnostic chat-completion client.

The gateway owns transport, retries, token estimation and pricing. It
never builds prompts: callers hand it fully-formed messages. Two
backends ship here: an HTTP chat-completions client and a deterministic
mock whose output is a pure function of (request, seed), which is what
every offline test and the acceptance suite run against.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import time
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Callable, Protocol

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import httpx

from .errors import ContextOverflow, MalformedResponse, ProviderUnavailable, UnknownModel

Message = tuple[str, str]  # (role, content)

_ROLES = {"system", "user", "assistant"}

MICRO_USD = Decimal("0.000001")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.7
    max_output_tokens: int = 1024

    def violations(self) -> list[str]:
        out = []
        if not self.messages:
            out.append("messages must be non-empty")
        elif self.messages[0][0] != "system":
            out.append("first message must have role system")
        for role, _ in self.messages:
            if role not in _ROLES:
                out.append(f"unknown role: {role}")
        if not 0.0 <= self.temperature <= 2.0:
            out.append("temperature must be in [0, 2]")
        if self.max_output_tokens < 1:
            out.append("max_output_tokens must be positive")
        return out

    @property
    def prompt_text(self) -> str:
        return "\n".join(content for _, content in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    model: str
    attempts: int = 1


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def estimate_tokens(text: str) -> int:
    """Cheap local token estimate: ceil(characters / 4)."""
    return (len(text) + 3) // 4


def _truncate_to_tokens(text: str, max_tokens: int) -> str:
    if estimate_tokens(text) <= max_tokens:
        return text
    return text[: max_tokens * 4]


# ---------------------------------------------------------------------------
# Pricing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelPrice:
    input_per_1m: Decimal
    output_per_1m: Decimal


@dataclass(frozen=True)
class PricingTable:
    """USD prices per 1M tokens, keyed by model id. Lookup never defaults."""

    entries: dict[str, ModelPrice]

    def lookup(self, model: str) -> ModelPrice:
        try:
            return self.entries[model]
        except KeyError:
            raise UnknownModel(model) from None

    def __contains__(self, model: str) -> bool:
        return model in self.entries

    @classmethod
    def from_prices(cls, prices: dict[str, tuple[float | str, float | str]]) -> "PricingTable":
        entries = {}
        for model, (inp, out) in prices.items():
            price = ModelPrice(Decimal(str(inp)), Decimal(str(out)))
            if price.input_per_1m < 0 or price.output_per_1m < 0:
                raise ValueError(f"negative price for {model}")
            entries[model] = price
        return cls(entries)


def load_pricing(path: str) -> PricingTable:
    """Load a pricing table from a TOML file of the form:

        [gpt-4o-mini]
        input_per_1m = 0.15
        output_per_1m = 0.60
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    prices = {}
    for model, entry in raw.items():
        prices[model] = (entry["input_per_1m"], entry["output_per_1m"])
    return PricingTable.from_prices(prices)


def cost_usd_exact(output_tokens: int, model: str, pricing: PricingTable) -> Decimal:
    """Unrounded output-token cost; input tokens are reported separately."""
    if output_tokens < 0:
        raise ValueError("output_tokens must be non-negative")
    price = pricing.lookup(model)
    return Decimal(output_tokens) * price.output_per_1m / Decimal(1_000_000)


def cost_usd(output_tokens: int, model: str, pricing: PricingTable) -> Decimal:
    """Output-token cost in USD, rounded half-even to 6 decimals."""
    return cost_usd_exact(output_tokens, model, pricing).quantize(MICRO_USD, ROUND_HALF_EVEN)


# ---------------------------------------------------------------------------
# Retrying client
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0)

    def delay(self, attempt: int) -> float:
        if not self.backoff_s:
            return 0.0
        return self.backoff_s[min(attempt, len(self.backoff_s) - 1)]


class Gateway:
    """Retrying wrapper around a backend; the unit every agent talks to."""

    def __init__(
        self,
        backend: Backend,
        retry_policy: RetryPolicy | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.retry_policy = retry_policy or RetryPolicy()
        self._sleep = sleeper

    def complete(self, request: ChatRequest) -> ChatResponse:
        problems = request.violations()
        if problems:
            raise ValueError("invalid request: " + "; ".join(problems))
        last_error: Exception | None = None
        for attempt in range(self.retry_policy.max_attempts):
            try:
                response = self.backend.complete(request)
                return replace(response, attempts=attempt + 1)
            except ContextOverflow:
                raise  # deterministic failure, retrying cannot help
            except ProviderUnavailable as exc:
                last_error = exc
                if attempt + 1 < self.retry_policy.max_attempts:
                    self._sleep(self.retry_policy.delay(attempt))
        raise ProviderUnavailable(
            f"provider failed after {self.retry_policy.max_attempts} attempts: {last_error}",
            attempts=self.retry_policy.max_attempts,
        )


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------


class HttpBackend:
    """Chat-completions endpoint speaking the usual JSON wire shape."""

    def __init__(self, url: str, api_key: str = "", client: httpx.Client | None = None):
        self.url = url
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=60.0)

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            http_response = self._client.post(self.url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"transport error: {exc}") from exc
        elapsed_ms = int((time.monotonic() - started) * 1000)
        if http_response.status_code == 413:
            raise ContextOverflow("provider rejected prompt length")
        if http_response.status_code >= 500 or http_response.status_code == 429:
            raise ProviderUnavailable(f"provider status {http_response.status_code}")
        if http_response.status_code >= 400:
            body = http_response.text[:200]
            if "context" in body.lower() and "length" in body.lower():
                raise ContextOverflow(body)
            raise MalformedResponse(f"provider status {http_response.status_code}: {body}")
        try:
            data = http_response.json()
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
        except (KeyError, IndexError, ValueError) as exc:
            raise MalformedResponse(f"unparseable provider response: {exc}") from exc
        return ChatResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", estimate_tokens(request.prompt_text))),
            output_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
            latency_ms=elapsed_ms,
            model=request.model,
        )


def backend_from_env() -> Backend:
    """HTTP backend from GATEWAY_URL / GATEWAY_KEY, else the offline mock."""
    url = os.getenv("GATEWAY_URL", "").strip()
    if url:
        return HttpBackend(url, os.getenv("GATEWAY_KEY", "").strip())
    return MockBackend(seed=int(os.getenv("MOCK_SEED", "0")))


# ---------------------------------------------------------------------------
# Deterministic mock backend
# ---------------------------------------------------------------------------

_STAGE_TAG = re.compile(r"\[stage:([a-z0-9_.\- ]+)\]")
_DIRECTIVE = re.compile(r"^([A-Z_]+):\s*(.*)$", re.MULTILINE)
_REWRITE_BLOCK = re.compile(r"<<<BEGIN TEXT>>>\n(.*)\n<<<END TEXT>>>", re.DOTALL)

_FILLER = (
    "the study surveys prior findings and situates them against open questions in the field "
    "while weighing methodological trade offs and summarizing reported evidence "
)

REVIEW_CRITERIA_MAX = {
    "Soundness": 4,
    "Presentation": 4,
    "Quality": 4,
    "Clarity": 4,
    "Significance": 4,
    "Originality": 4,
    "Overall": 6,
    "Confidence": 5,
}


@dataclass
class MockBackend:
    """Offline stand-in whose text is fully determined by (request, seed).

    Prompts carry light-weight directives (FORMAT, COUNT, KEYS, KIND,
    TARGET_TOKENS) that real models are asked to follow and that the mock
    obeys mechanically, so the same templates drive both.
    """

    seed: int = 0
    default_tokens: int = 64
    context_limit: int | None = None
    hallucination_rate: float = 0.0
    relevance_accept_rate: float = 1.0
    review_constant: float | None = None
    review_overall_override: float | None = None
    emit_unknown_tool: bool = False
    ghosts_emitted: int = field(default=0, init=False)

    def complete(self, request: ChatRequest) -> ChatResponse:
        prompt = request.prompt_text
        input_tokens = estimate_tokens(prompt)
        if self.context_limit is not None and input_tokens > self.context_limit:
            raise ContextOverflow(f"mock context limit {self.context_limit} exceeded")

        digest = hashlib.sha256(f"{self.seed}|{request.model}|{prompt}".encode()).hexdigest()
        rng = random.Random(int(digest[:16], 16))
        directives = dict(_DIRECTIVE.findall(prompt))
        stage_match = _STAGE_TAG.search(prompt)
        stage = stage_match.group(1) if stage_match else "generic"
        fmt = directives.get("FORMAT", "").strip().lower()

        text = self._render(fmt, stage, digest, rng, directives, prompt)
        if "FINAL ANSWER" in prompt and fmt not in ("rewrite", "relevance"):
            text = f"Reasoning trace {digest[:8]}: weighing the directives step by step.\nFINAL ANSWER:\n{text}"
        text = _truncate_to_tokens(text, request.max_output_tokens)
        output_tokens = estimate_tokens(text)
        return ChatResponse(
            text=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            latency_ms=10 + output_tokens // 10,
            model=request.model,
        )

    # -- per-format rendering ------------------------------------------------

    def _render(
        self,
        fmt: str,
        stage: str,
        digest: str,
        rng: random.Random,
        directives: dict[str, str],
        prompt: str,
    ) -> str:
        if fmt == "ideas":
            return self._render_ideas(int(directives.get("COUNT", "3")), digest, rng)
        if fmt == "title":
            return f"Charting {directives.get('TOPIC', 'the Field').strip().title()}: Directions and Open Problems ({digest[:6]})"
        if fmt == "outline":
            return self._render_outline(directives.get("KIND", "review").strip(), digest)
        if fmt == "section":
            return self._render_section(stage, digest, rng, directives)
        if fmt == "tools":
            return self._render_tools(directives)
        if fmt == "review":
            return self._render_review(rng)
        if fmt == "summary":
            target = int(directives.get("TARGET_TOKENS", str(self.default_tokens)))
            return self._padded(f"Summary {digest[:8]}:", max(8, target - 4))
        if fmt == "relevance":
            return "yes" if rng.random() < self.relevance_accept_rate else "no"
        if fmt == "rewrite":
            block = _REWRITE_BLOCK.search(prompt)
            return block.group(1) if block else prompt
        return self._padded(f"{stage} | seed={self.seed} | {digest[:12]}", self.default_tokens)

    def _padded(self, prefix: str, target_tokens: int) -> str:
        text = prefix
        while estimate_tokens(text) < target_tokens:
            text += " " + _FILLER
        return _truncate_to_tokens(text, target_tokens)

    def _render_ideas(self, count: int, digest: str, rng: random.Random) -> str:
        ideas = []
        for i in range(count):
            ideas.append(
                {
                    "statement": f"Direction {i + 1} ({digest[:6]}): examine an underexplored axis of the topic",
                    "rationale": f"Gap {i + 1} noted across retrieved abstracts; evidence remains fragmented.",
                    "novelty": round(rng.uniform(0.0, 1.0), 2),
                }
            )
        return json.dumps(ideas)

    def _render_outline(self, kind: str, digest: str) -> str:
        bullet_prefix = "theme" if kind == "review" else "claim"
        outline = {
            "title": ["frame the scope and contribution type"],
            "abstract": ["scope", "key claims", "significance"],
            "introduction": ["context", "problem space", "motivation"],
            "related_work": ["landscape survey", "closest prior efforts"],
            "methods": ["selection procedure", "synthesis procedure"],
            "results": [f"{bullet_prefix}: primary finding {digest[:4]}", f"{bullet_prefix}: secondary finding"],
            "conclusion": ["consolidated insights", "future directions"],
            "references": ["curated bibliography"],
        }
        return json.dumps(outline)

    def _render_section(
        self, stage: str, digest: str, rng: random.Random, directives: dict[str, str]
    ) -> str:
        keys = [k.strip() for k in directives.get("KEYS", "").split(",") if k.strip()]
        target = int(directives.get("TARGET_TOKENS", "180"))
        chosen: list[str] = []
        if keys:
            count = min(5, len(keys))
            chosen = sorted(rng.sample(keys, count))
            n_ghost = int(count * self.hallucination_rate)
            for i in range(n_ghost):
                ghost = f"ghost{digest[i * 4 : i * 4 + 6]}"
                while ghost in keys:
                    ghost += "x"
                chosen[-(i + 1)] = ghost
                self.ghosts_emitted += 1
        sentences = [f"This {stage.split('.')[0].replace('_', ' ')} section synthesizes the curated material ({digest[:8]})."]
        for key in chosen:
            sentences.append(f"Evidence along this line is documented in prior work \\cite{{{key}}}.")
        body = " ".join(sentences)
        return self._padded(body, target)

    def _render_tools(self, directives: dict[str, str]) -> str:
        available = [t.strip() for t in directives.get("AVAILABLE_TOOLS", "").split(",") if t.strip()]
        picked = list(available)
        if self.emit_unknown_tool:
            picked.append("FluxCapacitor")
        return json.dumps(picked)

    def _render_review(self, rng: random.Random) -> str:
        scores: dict[str, float] = {}
        justifications: dict[str, str] = {}
        for name, cap in REVIEW_CRITERIA_MAX.items():
            if self.review_constant is not None:
                value = float(self.review_constant)
            else:
                # half-point grid, same spread reviewers use
                value = 1.0 + 0.5 * rng.randrange(0, int((cap - 1) * 2) + 1)
            scores[name] = value
            justifications[name] = f"{name} judged from the manuscript text alone."
        if self.review_overall_override is not None:
            scores["Overall"] = float(self.review_overall_override)
        return json.dumps({"scores": scores, "justifications": justifications})


__all__ = [
    "Backend",
    "ChatRequest",
    "ChatResponse",
    "Gateway",
    "HttpBackend",
    "MockBackend",
    "ModelPrice",
    "PricingTable",
    "REVIEW_CRITERIA_MAX",
    "RetryPolicy",
    "backend_from_env",
    "cost_usd",
    "cost_usd_exact",
    "estimate_tokens",
    "load_pricing",
]

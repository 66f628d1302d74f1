"""Scholarly retrieval, the curation loop, and bibliography handling.

Providers speak a tiny GET contract (q, limit, offset -> JSON records).
Offline runs use fixture providers backed by canned JSON files; live
runs point the same code at real endpoints via environment variables.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .errors import MalformedResponse, ProviderUnavailable, RateLimited, SeedOverflow
from .latex import assign_cite_keys, latin_transliterate

PAGE_SIZE = 20
MAX_PAGES_PER_PROVIDER = 5
SEARCH_LIMIT_CAP = 100


class ReferenceSource(Enum):
    SCHOLAR_SEARCH = "scholar_search"
    ASK_SEARCH = "ask_search"
    HUMAN_SEED = "human_seed"


_DOI_SYNTAX = re.compile(r"^10\.[0-9]+(?:\.[0-9]+)*/\S+$")
_PUNCT = re.compile(r"[^\w\s]")


def normalize_doi(raw: str | None) -> str | None:
    """Lowercase a DOI and strip resolver prefixes; None if not DOI-shaped."""
    if not raw:
        return None
    doi = raw.strip().lower()
    for prefix in ("https://doi.org/", "http://doi.org/", "doi:"):
        if doi.startswith(prefix):
            doi = doi[len(prefix):]
    return doi if _DOI_SYNTAX.match(doi) else None


def normalize_title(title: str) -> str:
    """Duplicate-detection form: lowercase, punctuation stripped, spaces collapsed."""
    return " ".join(_PUNCT.sub(" ", title.lower()).split())


@dataclass(frozen=True)
class ReferenceRecord:
    id: str
    title: str
    abstract: str = ""
    authors: tuple[str, ...] = ()
    year: int | None = None
    venue: str | None = None
    doi: str | None = None
    source: ReferenceSource = ReferenceSource.SCHOLAR_SEARCH
    relevance: float = 0.0

    def __post_init__(self):
        if not self.title.strip():
            raise ValueError("reference title must be non-empty")
        if self.doi is not None and not _DOI_SYNTAX.match(self.doi):
            raise ValueError(f"malformed DOI: {self.doi}")
        if not 0.0 <= self.relevance <= 1.0:
            raise ValueError("relevance must be in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "authors": list(self.authors),
            "year": self.year,
            "venue": self.venue,
            "doi": self.doi,
            "source": self.source.value,
            "relevance": self.relevance,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReferenceRecord":
        return cls(
            id=d["id"],
            title=d["title"],
            abstract=d.get("abstract", ""),
            authors=tuple(d.get("authors", ())),
            year=d.get("year"),
            venue=d.get("venue"),
            doi=d.get("doi"),
            source=ReferenceSource(d.get("source", "scholar_search")),
            relevance=float(d.get("relevance", 0.0)),
        )


def record_id_for(title: str, doi: str | None) -> str:
    """Stable id so replayed runs produce identical state files."""
    basis = doi or normalize_title(title)
    return "ref-" + hashlib.sha256(basis.encode()).hexdigest()[:12]


def _raw_to_record(raw: dict[str, Any], source: ReferenceSource, relevance: float) -> ReferenceRecord:
    title = str(raw.get("title", "")).strip()
    if not title:
        raise MalformedResponse("provider record without title")
    authors_raw = raw.get("authors", [])
    authors = tuple(
        a["name"] if isinstance(a, dict) else str(a) for a in authors_raw
    )
    year = raw.get("year")
    doi = raw.get("doi") or (raw.get("externalIds", {}) or {}).get("DOI")
    return ReferenceRecord(
        id=raw.get("id") or record_id_for(title, normalize_doi(doi)),
        title=title,
        abstract=str(raw.get("abstract") or ""),
        authors=authors,
        year=int(year) if year is not None else None,
        venue=(str(raw["venue"]) if raw.get("venue") else None),
        doi=normalize_doi(doi),
        source=source,
        relevance=relevance,
    )


@dataclass(frozen=True)
class CuratedBibliography:
    """Deduplicated reference set capped at the run's n_max."""

    records: tuple[ReferenceRecord, ...] = ()
    cap: int = 1
    exhausted: bool = False

    def violations(self) -> list[str]:
        out = []
        if len(self.records) > self.cap:
            out.append("record count exceeds cap")
        dois = [r.doi for r in self.records if r.doi]
        if len(dois) != len(set(dois)):
            out.append("duplicate DOI")
        titles = [normalize_title(r.title) for r in self.records]
        if len(titles) != len(set(titles)):
            out.append("duplicate normalized title")
        seen_retrieved = False
        for record in self.records:
            if record.source is ReferenceSource.HUMAN_SEED and seen_retrieved:
                out.append("seed records must precede retrieved records")
                break
            if record.source is not ReferenceSource.HUMAN_SEED:
                seen_retrieved = True
        return out

    def contains_duplicate(self, record: ReferenceRecord) -> bool:
        for existing in self.records:
            if record.doi and existing.doi == record.doi:
                return True
            if normalize_title(existing.title) == normalize_title(record.title):
                return True
        return False

    def to_dict(self) -> dict[str, Any]:
        return {
            "records": [r.to_dict() for r in self.records],
            "cap": self.cap,
            "exhausted": self.exhausted,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CuratedBibliography":
        return cls(
            records=tuple(ReferenceRecord.from_dict(r) for r in d["records"]),
            cap=int(d["cap"]),
            exhausted=bool(d.get("exhausted", False)),
        )


@dataclass(frozen=True)
class DatasetMention:
    name: str
    context_sentence: str
    source_reference: str

    def __post_init__(self):
        if self.name not in self.context_sentence:
            raise ValueError("mention name must appear inside its context sentence")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "context_sentence": self.context_sentence,
            "source_reference": self.source_reference,
        }


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


class SearchProvider(Protocol):
    kind: ReferenceSource

    def fetch(self, query: str, limit: int, offset: int) -> list[dict[str, Any]]: ...


class FixtureProvider:
    """Reads canned JSON (a list of raw records) for offline runs."""

    def __init__(self, path: str | Path, kind: ReferenceSource):
        self.path = Path(path)
        self.kind = kind

    def fetch(self, query: str, limit: int, offset: int) -> list[dict[str, Any]]:
        try:
            raw = json.loads(self.path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ProviderUnavailable(f"fixture file missing: {self.path}") from exc
        except ValueError as exc:
            raise MalformedResponse(f"fixture file unparseable: {self.path}") from exc
        if not isinstance(raw, list):
            raise MalformedResponse(f"fixture file must hold a JSON array: {self.path}")
        return raw[offset : offset + limit]


class HttpProvider:
    """GET <base_url>?q=...&limit=...&offset=... returning JSON records."""

    def __init__(self, base_url: str, kind: ReferenceSource, client: httpx.Client | None = None):
        self.base_url = base_url
        self.kind = kind
        self._client = client or httpx.Client(timeout=30.0)

    def fetch(self, query: str, limit: int, offset: int) -> list[dict[str, Any]]:
        try:
            response = self._client.get(
                self.base_url, params={"q": query, "limit": limit, "offset": offset}
            )
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"transport error: {exc}") from exc
        if response.status_code == 429:
            retry_after = float(response.headers.get("Retry-After", "1"))
            raise RateLimited(retry_after)
        if response.status_code >= 500:
            raise ProviderUnavailable(f"provider status {response.status_code}")
        if response.status_code >= 400:
            raise MalformedResponse(f"provider status {response.status_code}")
        try:
            data = response.json()
        except ValueError as exc:
            raise MalformedResponse(f"non-JSON provider response: {exc}") from exc
        if isinstance(data, dict):
            data = data.get("results", data.get("data", []))
        if not isinstance(data, list):
            raise MalformedResponse("provider response missing record list")
        return data


def search(
    provider: SearchProvider, query: str, limit: int, offset: int = 0
) -> list[ReferenceRecord]:
    """One provider page, tagged with source and 1/rank relevance.

    Network failures surface as errors, never as silently empty lists.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    if not 1 <= limit <= SEARCH_LIMIT_CAP:
        raise ValueError(f"limit must be in [1, {SEARCH_LIMIT_CAP}]")
    raw_records = provider.fetch(query, limit, offset)
    records = []
    for i, raw in enumerate(raw_records[:limit]):
        rank = offset + i + 1
        records.append(_raw_to_record(raw, provider.kind, relevance=1.0 / rank))
    return records


# ---------------------------------------------------------------------------
# Curation loop
# ---------------------------------------------------------------------------

Judge = Callable[[ReferenceRecord], bool]


def curate_loop(
    query: str,
    judge: Judge,
    n_max: int,
    providers: list[SearchProvider],
    page_size: int = PAGE_SIZE,
    max_pages: int = MAX_PAGES_PER_PROVIDER,
    sleeper: Callable[[float], None] = time.sleep,
) -> CuratedBibliography:
    """Page through providers, judge each candidate, stop at n_max.

    The judge is either a human decision callback or an LLM relevance
    prompt; the loop does not care which. Provider failures are retried
    once, then propagated.
    """
    if not providers:
        raise ValueError("providers must be non-empty")
    bib = CuratedBibliography(records=(), cap=n_max, exhausted=False)
    for provider in providers:
        for page in range(max_pages):
            if len(bib.records) >= n_max:
                return bib
            offset = page * page_size
            candidates = _fetch_with_retry(provider, query, page_size, offset, sleeper)
            for candidate in candidates:
                if len(bib.records) >= n_max:
                    return bib
                if bib.contains_duplicate(candidate):
                    continue
                if judge(candidate):
                    bib = replace(bib, records=bib.records + (candidate,))
            if len(candidates) < page_size:
                break  # provider ran out of pages
    return replace(bib, exhausted=len(bib.records) < n_max)


def _fetch_with_retry(provider, query, limit, offset, sleeper) -> list[ReferenceRecord]:
    try:
        return search(provider, query, limit, offset)
    except RateLimited as exc:
        sleeper(exc.retry_after_s)
        return search(provider, query, limit, offset)
    except ProviderUnavailable:
        sleeper(1.0)
        return search(provider, query, limit, offset)


def add_seed_references(
    bib: CuratedBibliography, seeds: list[ReferenceRecord]
) -> CuratedBibliography:
    """Prepend human seeds; dedupe favors seeds; cap truncates retrieved only."""
    for seed in seeds:
        if seed.source is not ReferenceSource.HUMAN_SEED:
            raise ValueError(f"seed {seed.id} must carry source human_seed")
    if len(seeds) > bib.cap:
        raise SeedOverflow(f"{len(seeds)} seeds exceed cap {bib.cap}")
    existing_seeds = [r for r in bib.records if r.source is ReferenceSource.HUMAN_SEED]
    retrieved_input = [r for r in bib.records if r.source is not ReferenceSource.HUMAN_SEED]
    kept_seeds: list[ReferenceRecord] = []
    probe = CuratedBibliography(records=(), cap=bib.cap)
    for seed in list(seeds) + existing_seeds:
        if probe.contains_duplicate(seed):
            continue
        kept_seeds.append(seed)
        probe = replace(probe, records=probe.records + (seed,))
    if len(kept_seeds) > bib.cap:
        raise SeedOverflow(f"{len(kept_seeds)} seeds exceed cap {bib.cap}")
    retrieved: list[ReferenceRecord] = []
    for record in retrieved_input:
        if probe.contains_duplicate(record):
            continue
        retrieved.append(record)
        probe = replace(probe, records=probe.records + (record,))
    room = bib.cap - len(kept_seeds)
    return replace(bib, records=tuple(kept_seeds) + tuple(retrieved[:room]))


# ---------------------------------------------------------------------------
# Dataset mentions
# ---------------------------------------------------------------------------

_NAME = r"(?:[A-Z0-9][\w-]*)(?:[ ](?:[A-Z0-9][\w-]*))*"
_NAME_BEFORE_CUE = re.compile(rf"({_NAME})[ ](?:dataset|corpus|benchmark)s?\b")
_NAME_AFTER_CUE = re.compile(rf"(?:trained|evaluated)[ ]on[ ](?:the[ ])?({_NAME})")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")

# Sentence-case function words that precede a proper name but are not part
# of it ("The ImageNet benchmark" names ImageNet, not "The ImageNet").
_NAME_STOPWORDS = {
    "The", "A", "An", "This", "That", "These", "Those", "Our", "Their",
    "We", "It", "Its", "In", "On", "For", "With",
}


def _trim_name(name: str) -> str:
    tokens = name.split(" ")
    while tokens and tokens[0] in _NAME_STOPWORDS:
        tokens = tokens[1:]
    return " ".join(tokens)


def extract_dataset_mentions(bib: CuratedBibliography) -> list[DatasetMention]:
    """Rule-based scan of abstracts for named datasets next to cue words."""
    mentions: list[DatasetMention] = []
    for record in bib.records:
        seen: set[str] = set()
        for sentence in _SENTENCE_SPLIT.split(record.abstract):
            for pattern in (_NAME_BEFORE_CUE, _NAME_AFTER_CUE):
                for match in pattern.finditer(sentence):
                    name = _trim_name(match.group(1).strip())
                    if not name or name in seen:
                        continue
                    seen.add(name)
                    mentions.append(
                        DatasetMention(
                            name=name,
                            context_sentence=sentence.strip(),
                            source_reference=record.id,
                        )
                    )
    return mentions


# ---------------------------------------------------------------------------
# BibTeX export
# ---------------------------------------------------------------------------


def bibliography_cite_keys(bib: CuratedBibliography) -> dict[str, str]:
    """record id -> collision-suffixed citation key, in record order."""
    return assign_cite_keys(bib.records)


def to_bibtex(bib: CuratedBibliography) -> str:
    """One entry per record, @article when a venue is present, else @misc."""
    keys = bibliography_cite_keys(bib)
    entries = []
    for record in bib.records:
        entry_type = "article" if record.venue else "misc"
        fields = [("title", f"{{{latin_transliterate(record.title)}}}")]
        if record.authors:
            fields.append(("author", latin_transliterate(" and ".join(record.authors))))
        if record.year is not None:
            fields.append(("year", str(record.year)))
        if record.venue:
            fields.append(("journal", latin_transliterate(record.venue)))
        if record.doi:
            fields.append(("doi", record.doi))
        body = ",\n".join(f"  {name} = {{{value}}}" for name, value in fields)
        entries.append((keys[record.id], f"@{entry_type}{{{keys[record.id]},\n{body}\n}}"))
    entries.sort(key=lambda pair: pair[0])
    return "\n\n".join(text for _, text in entries) + ("\n" if entries else "")


# ---------------------------------------------------------------------------
# Asset store
# ---------------------------------------------------------------------------


class AssetStore:
    """Persists curated bibliographies and seed reference records."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "refs").mkdir(parents=True, exist_ok=True)

    def save_bibliography(self, bib_id: str, bib: CuratedBibliography) -> None:
        path = self.root / f"{bib_id}.json"
        path.write_text(json.dumps(bib.to_dict(), indent=2), encoding="utf-8")
        (self.root / f"{bib_id}.bib").write_text(to_bibtex(bib), encoding="utf-8")

    def load_bibliography(self, bib_id: str) -> CuratedBibliography:
        path = self.root / f"{bib_id}.json"
        return CuratedBibliography.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def save_reference(self, record: ReferenceRecord) -> str:
        path = self.root / "refs" / f"{record.id}.json"
        path.write_text(json.dumps(record.to_dict(), indent=2), encoding="utf-8")
        return record.id

    def load_reference(self, record_id: str) -> ReferenceRecord:
        path = self.root / "refs" / f"{record_id}.json"
        return ReferenceRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))


__all__ = [
    "AssetStore",
    "CuratedBibliography",
    "DatasetMention",
    "FixtureProvider",
    "HttpProvider",
    "MAX_PAGES_PER_PROVIDER",
    "PAGE_SIZE",
    "ReferenceRecord",
    "ReferenceSource",
    "SearchProvider",
    "add_seed_references",
    "bibliography_cite_keys",
    "curate_loop",
    "extract_dataset_mentions",
    "normalize_doi",
    "normalize_title",
    "record_id_for",
    "search",
    "to_bibtex",
]

"""LaTeX scaffolding, assembly, linting and citation-key generation.

Everything here is a pure function over document values. The reprocess
pass is guarded: any rewrite that changes citation keys, section
structure or lint status is discarded in favor of the original.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Sequence

from .domain import DraftStatus, ManuscriptDraft, PaperKind, SectionKind, canonical_section_order
from .errors import DanglingCitation, MissingSection

if TYPE_CHECKING:
    from .gateway import Gateway
    from .literature import CuratedBibliography

PREAMBLE = """\\documentclass[11pt]{article}
\\usepackage[utf8]{inputenc}
\\usepackage[T1]{fontenc}
\\usepackage{cite}
\\usepackage{url}
"""

_CITE = re.compile(r"\\cite\{([^}]*)\}")
_BEGIN = re.compile(r"\\begin\{([^}]*)\}")
_END = re.compile(r"\\end\{([^}]*)\}")
_REF = re.compile(r"\\ref\{([^}]*)\}")
_LABEL = re.compile(r"\\label\{([^}]*)\}")
_BIB_ENTRY = re.compile(r"@\w+\{([^,]+),")

# Fixed transliteration for characters NFKD cannot reduce to ASCII.
_TRANSLITERATION = {
    "ß": "ss", "æ": "ae", "Æ": "Ae", "ø": "o", "Ø": "O", "ð": "d", "Ð": "D",
    "þ": "th", "Þ": "Th", "ł": "l", "Ł": "L", "đ": "d", "Đ": "D", "œ": "oe",
    "Œ": "Oe", "ı": "i", "–": "-", "—": "-", "’": "'", "‘": "'", "“": '"',
    "”": '"', "…": "...",
}

_BIBTEX_SPECIALS = {"&": r"\&", "%": r"\%", "#": r"\#", "_": r"\_"}


def latin_transliterate(text: str) -> str:
    """Reduce text to ASCII via NFKD plus a fixed fallback map."""
    out = []
    for char in text:
        if ord(char) < 128:
            out.append(_BIBTEX_SPECIALS.get(char, char))
            continue
        if char in _TRANSLITERATION:
            out.append(_TRANSLITERATION[char])
            continue
        decomposed = unicodedata.normalize("NFKD", char)
        stripped = "".join(c for c in decomposed if ord(c) < 128 and not unicodedata.combining(c))
        out.append(stripped)
    return "".join(out)


# ---------------------------------------------------------------------------
# Citation keys
# ---------------------------------------------------------------------------


def _alnum_lower(text: str) -> str:
    return "".join(c for c in latin_transliterate(text).lower() if c.isalnum())


def cite_key(record: Any) -> str:
    """Base citation key: family name + year (or "nd") + first long title word."""
    authors: Sequence[str] = getattr(record, "authors", ()) or ()
    title: str = getattr(record, "title", "") or ""
    year = getattr(record, "year", None)
    if authors:
        name_part = _alnum_lower(authors[0].split()[-1])
    else:
        words = title.split()
        name_part = _alnum_lower(words[0]) if words else "anon"
    year_part = str(year) if year is not None else "nd"
    title_part = ""
    for word in title.split():
        cleaned = _alnum_lower(word)
        if len(cleaned) > 3:
            title_part = cleaned
            break
    return f"{name_part}{year_part}{title_part}"


def assign_cite_keys(records: Iterable[Any]) -> dict[str, str]:
    """record id -> key; colliding keys get "a", "b", ... in record order."""
    assigned: dict[str, str] = {}
    taken: dict[str, int] = {}
    for record in records:
        base = cite_key(record)
        count = taken.get(base, 0)
        taken[base] = count + 1
        if count == 0:
            key = base
        else:
            # 1st collision -> "a", 27th -> "aa"
            suffix = ""
            n = count - 1
            while True:
                suffix = chr(ord("a") + n % 26) + suffix
                n = n // 26 - 1
                if n < 0:
                    break
            key = base + suffix
        assigned[record.id] = key
    return assigned


def extract_cite_keys(text: str) -> list[str]:
    """All keys cited in a LaTeX body, in first-appearance order."""
    seen: list[str] = []
    for match in _CITE.finditer(text):
        for key in match.group(1).split(","):
            key = key.strip()
            if key and key not in seen:
                seen.append(key)
    return seen


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatexDocument:
    preamble: str
    body: str
    bib_text: str

    def render(self) -> str:
        return f"{self.preamble}\n\\begin{{document}}\n\n{self.body}\n\\end{{document}}\n"

    def bib_keys(self) -> set[str]:
        return {m.group(1).strip() for m in _BIB_ENTRY.finditer(self.bib_text)}


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class LintIssue:
    severity: Severity
    code: str
    message: str
    line: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "severity": self.severity.value,
            "code": self.code,
            "message": self.message,
            "line": self.line,
        }


@dataclass(frozen=True)
class LintReport:
    issues: tuple[LintIssue, ...]

    @property
    def errors(self) -> list[LintIssue]:
        return [i for i in self.issues if i.severity is Severity.ERROR]

    @property
    def warnings(self) -> list[LintIssue]:
        return [i for i in self.issues if i.severity is Severity.WARNING]

    def to_dict(self) -> dict[str, Any]:
        return {"issues": [i.to_dict() for i in self.issues]}


# The references marker anchors at the start of the emitted block so the
# preceding section's body never absorbs the style directive.
_SECTION_MARKERS = {
    SectionKind.TITLE: "\\title{",
    SectionKind.ABSTRACT: "\\begin{abstract}",
    SectionKind.INTRODUCTION: "\\section{Introduction}",
    SectionKind.RELATED_WORK: "\\section{Related Work}",
    SectionKind.METHODS: "\\section{Methods}",
    SectionKind.RESULTS: "\\section{Results}",
    SectionKind.CONCLUSION: "\\section{Conclusion}",
    SectionKind.REFERENCES: "\\bibliographystyle{",
}


def references_block(bib_file_stem: str = "references") -> str:
    return f"\\bibliographystyle{{plain}}\n\\bibliography{{{bib_file_stem}}}"


def _section_block(kind: SectionKind, body: str) -> str:
    if kind is SectionKind.TITLE:
        return f"\\title{{{body}}}\n\\maketitle"
    if kind is SectionKind.ABSTRACT:
        return f"\\begin{{abstract}}\n{body}\n\\end{{abstract}}"
    if kind is SectionKind.REFERENCES:
        return body if body.strip() else references_block()
    return f"\\section{{{kind.heading}}}\n{body}"


def scaffold(paper_kind: PaperKind) -> LatexDocument:
    """Empty skeleton: fixed preamble, eight placeholders, no bibliography."""
    blocks = []
    for kind in canonical_section_order():
        placeholder = f"% {paper_kind.value} {kind.value} pending"
        if kind is SectionKind.TITLE:
            blocks.append(f"\\title{{{placeholder.lstrip('% ')}}}\n\\maketitle")
        elif kind is SectionKind.ABSTRACT:
            blocks.append(f"\\begin{{abstract}}\n{placeholder}\n\\end{{abstract}}")
        elif kind is SectionKind.REFERENCES:
            blocks.append(references_block())
        else:
            blocks.append(f"\\section{{{kind.heading}}}\n{placeholder}")
    return LatexDocument(preamble=PREAMBLE, body="\n\n".join(blocks) + "\n", bib_text="")


def assemble(manuscript: ManuscriptDraft, bib: "CuratedBibliography") -> LatexDocument:
    """Splice a Complete manuscript into the scaffold and wire its bibliography."""
    from .literature import to_bibtex  # local import keeps module deps acyclic

    if manuscript.status is not DraftStatus.COMPLETE:
        raise MissingSection("manuscript is not Complete")
    drafts = {s.kind: s for s in manuscript.sections}
    missing = [k.value for k in canonical_section_order() if k not in drafts]
    if missing:
        raise MissingSection(f"missing sections: {', '.join(missing)}")
    bib_text = to_bibtex(bib)
    doc = LatexDocument(
        preamble=PREAMBLE,
        body="\n\n".join(
            _section_block(kind, drafts[kind].body) for kind in canonical_section_order()
        )
        + "\n",
        bib_text=bib_text,
    )
    dangling = sorted(set(extract_cite_keys(doc.body)) - doc.bib_keys())
    if dangling:
        raise DanglingCitation(dangling)
    return doc


def lint(doc: LatexDocument) -> LintReport:
    """Static checks standing in for a compiler: structure, citations, refs."""
    issues: list[LintIssue] = []
    body = doc.body
    line_of = _line_index(body)

    stack: list[tuple[str, int]] = []
    events = sorted(
        [(m.start(), "begin", m.group(1)) for m in _BEGIN.finditer(body)]
        + [(m.start(), "end", m.group(1)) for m in _END.finditer(body)]
    )
    for pos, kind, env in events:
        if kind == "begin":
            stack.append((env, pos))
        elif stack and stack[-1][0] == env:
            stack.pop()
        else:
            issues.append(
                LintIssue(Severity.ERROR, "E_UNBALANCED", f"\\end{{{env}}} without matching begin", line_of(pos))
            )
    for env, pos in stack:
        issues.append(
            LintIssue(Severity.ERROR, "E_UNBALANCED", f"\\begin{{{env}}} never closed", line_of(pos))
        )

    bib_keys = doc.bib_keys()
    for match in _CITE.finditer(body):
        for key in match.group(1).split(","):
            key = key.strip()
            if key and key not in bib_keys:
                issues.append(
                    LintIssue(
                        Severity.ERROR, "E_DANGLING_CITE", f"\\cite{{{key}}} not in bibliography", line_of(match.start())
                    )
                )

    labels = {m.group(1) for m in _LABEL.finditer(body)}
    for match in _REF.finditer(body):
        if match.group(1) not in labels:
            issues.append(
                LintIssue(
                    Severity.WARNING, "W_REF_NO_LABEL", f"\\ref{{{match.group(1)}}} has no label", line_of(match.start())
                )
            )

    present = 0
    for kind, marker in _SECTION_MARKERS.items():
        count = body.count(marker)
        present += 1 if count >= 1 else 0
        if count > 1:
            issues.append(
                LintIssue(Severity.ERROR, "E_SECTION_COUNT", f"duplicate block for {kind.value}", 1)
            )
    if present != len(_SECTION_MARKERS):
        issues.append(
            LintIssue(
                Severity.ERROR, "E_SECTION_COUNT", f"expected 8 section blocks, found {present}", 1
            )
        )

    for kind, section_body in _split_section_bodies(body).items():
        if not section_body.strip() or section_body.strip().startswith("%"):
            issues.append(
                LintIssue(Severity.WARNING, "W_EMPTY_SECTION", f"empty body for {kind.value}", 1)
            )

    for i, char in enumerate(body):
        if ord(char) >= 128 and char not in _TRANSLITERATION:
            decomposed = unicodedata.normalize("NFKD", char)
            if not any(ord(c) < 128 for c in decomposed):
                issues.append(
                    LintIssue(
                        Severity.WARNING, "W_NON_ASCII", f"character {char!r} outside escaping table", line_of(i)
                    )
                )

    issues.sort(key=lambda issue: (issue.line, issue.code, issue.message))
    return LintReport(issues=tuple(issues))


def _line_index(text: str):
    newlines = [i for i, c in enumerate(text) if c == "\n"]

    def line_of(pos: int) -> int:
        low, high = 0, len(newlines)
        while low < high:
            mid = (low + high) // 2
            if newlines[mid] < pos:
                low = mid + 1
            else:
                high = mid
        return low + 1

    return line_of


def _split_section_bodies(body: str) -> dict[SectionKind, str]:
    """Text between consecutive section markers, keyed by section kind."""
    positions = []
    for kind, marker in _SECTION_MARKERS.items():
        pos = body.find(marker)
        if pos >= 0:
            positions.append((pos, kind, marker))
    positions.sort()
    bodies: dict[SectionKind, str] = {}
    for i, (pos, kind, marker) in enumerate(positions):
        end = positions[i + 1][0] if i + 1 < len(positions) else len(body)
        chunk = body[pos:end]
        if kind is SectionKind.TITLE:
            inner = chunk[len("\\title{"):]
            bodies[kind] = inner.split("}", 1)[0]
        elif kind is SectionKind.ABSTRACT:
            inner = chunk[len("\\begin{abstract}"):]
            bodies[kind] = inner.split("\\end{abstract}", 1)[0]
        elif kind is SectionKind.REFERENCES:
            bodies[kind] = chunk  # directive block counts as its own body
        else:
            first_line_end = chunk.find("\n")
            bodies[kind] = chunk[first_line_end + 1 :] if first_line_end >= 0 else ""
    return bodies


# ---------------------------------------------------------------------------
# Guarded whole-document reprocessing
# ---------------------------------------------------------------------------


def _marker_sequence(body: str) -> list[SectionKind]:
    found = []
    for kind, marker in _SECTION_MARKERS.items():
        pos = body.find(marker)
        if pos >= 0:
            found.append((pos, kind))
    return [kind for _, kind in sorted(found, key=lambda p: p[0])]


@dataclass(frozen=True)
class ReprocessResult:
    document: LatexDocument
    changed: bool
    warnings: tuple[str, ...]
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: int = 0


def reprocess(
    doc: LatexDocument, style_instructions: str, gateway: "Gateway", model: str
) -> ReprocessResult:
    """One guarded LLM pass over the whole body to improve flow and format.

    The rewrite is kept only when it preserves the citation-key set and
    the section structure and introduces no lint errors; otherwise the
    original document is returned with a warning.
    """
    from .gateway import ChatRequest, estimate_tokens

    before = lint(doc)
    if before.errors:
        raise ValueError("reprocess requires a document that lints without errors")
    prompt = (
        "[stage:reprocess]\n"
        "Improve logical flow, cross-referencing, and formatting without changing "
        "citations or section structure.\n"
        f"STYLE: {style_instructions or 'default'}\n"
        "FORMAT: rewrite\n"
        f"<<<BEGIN TEXT>>>\n{doc.body}\n<<<END TEXT>>>"
    )
    response = gateway.complete(
        ChatRequest(
            model=model,
            messages=(("system", "You restructure LaTeX manuscripts conservatively."), ("user", prompt)),
            temperature=0.0,
            max_output_tokens=max(1024, estimate_tokens(doc.body) * 2),
        )
    )
    candidate = LatexDocument(preamble=doc.preamble, body=response.text, bib_text=doc.bib_text)
    warnings: list[str] = []
    if sorted(extract_cite_keys(candidate.body)) != sorted(extract_cite_keys(doc.body)):
        warnings.append("reprocess altered citation keys; original kept")
    elif _marker_sequence(candidate.body) != _marker_sequence(doc.body):
        warnings.append("reprocess altered section structure; original kept")
    elif lint(candidate).errors:
        warnings.append("reprocess introduced lint errors; original kept")
    if warnings:
        return ReprocessResult(
            doc, changed=False, warnings=tuple(warnings),
            input_tokens=response.input_tokens, output_tokens=response.output_tokens,
            latency_ms=response.latency_ms,
        )
    return ReprocessResult(
        candidate, changed=candidate.body != doc.body, warnings=(),
        input_tokens=response.input_tokens, output_tokens=response.output_tokens,
        latency_ms=response.latency_ms,
    )


__all__ = [
    "LatexDocument",
    "LintIssue",
    "LintReport",
    "PREAMBLE",
    "ReprocessResult",
    "Severity",
    "assemble",
    "assign_cite_keys",
    "cite_key",
    "extract_cite_keys",
    "latin_transliterate",
    "lint",
    "references_block",
    "reprocess",
    "scaffold",
]

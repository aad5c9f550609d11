"""Markdown-to-ObjectGraph pipeline.

Three stages with one invariant: metadata generators never touch actual
content.  Stage 1 is a deterministic single-pass structural extraction;
Stage 2 synthesizes navigational metadata only (dense blocks and index
keywords), via a term-frequency heuristic or an external process; Stage 3
verifies fidelity against the source and gates the result.
"""

from __future__ import annotations

import re
import subprocess
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Optional, Sequence

from .cost import estimate_tokens
from .model import (
    ALL_SCOPE,
    ContentBlock,
    Diagnostic,
    DocumentGraph,
    IndexEntry,
    Meta,
    Node,
    SourceKind,
)
from .parser import SlugRegistry, slugify

DEFAULT_GATE = 0.95
ADDITION_PENALTY = 0.02
DENSE_TOKEN_LIMIT = 15
PROSE_WINDOW = 500
TRANSPILED_CONFIDENCE = Decimal("0.90")

_FENCE_RE = re.compile(r"^```(.*)$")
_TABLE_ROW_RE = re.compile(r"^\s*\|.+\|\s*$")
_STEP_RE = re.compile(r"^\s*\d+\.\s")
_BULLET_RE = re.compile(r"^\s*-\s+")
_CALLOUT_RE = re.compile(r"^>\s*\[!(WARNING|NOTE)\]\s*$")
_QUOTE_RE = re.compile(r"^>\s?")
_LINK_ONLY_RE = re.compile(r"^\s*\[[^\]]+\]\([^)]+\)\s*$")
_HEADING_RE = re.compile(r"^##\s+(.+?)\s*$")
_H1_RE = re.compile(r"^#\s+(.+?)\s*$")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")

_STOPWORDS = frozenset(
    """a an and are as at be been before but by do for from has have how if in
    into is it its of on or our that the their then there this to was we what
    when where which while who will with you your""".split()
)


class GateError(Exception):
    """Fidelity verification blocked the transpiled document."""

    def __init__(self, report: "FidelityReport"):
        self.report = report
        super().__init__(
            f"fidelity {report.phi:.4f} below gate {report.gate_threshold:g} "
            f"({report.checks_passed}/{report.checks_total} checks, "
            f"{len(report.additions)} additions)"
        )


@dataclass(frozen=True)
class SynthOutput:
    dense: str
    keywords: tuple[str, ...]


MetadataSynth = Callable[[str, str, str], SynthOutput]


class SynthProtocolError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Stage 1: structural extraction
# ---------------------------------------------------------------------------

def extract_structure(markdown: str) -> tuple[list[Node], list[Diagnostic]]:
    """Split Markdown into typed nodes: ``##`` headings open nodes, fenced
    code / pipe tables / numbered steps / bullets / callouts / standalone
    links become typed blocks, and everything else stays verbatim prose.

    Total function over any input; an unclosed fence consumes to end of
    file with a warning.  Content before the first ``##`` becomes a node
    with id ``preamble``.
    """
    lines = markdown.split("\n")
    diags: list[Diagnostic] = []
    slugs = SlugRegistry()
    nodes: list[Node] = []

    cur_id: Optional[str] = None
    cur_blocks: list[ContentBlock] = []
    prose: list[str] = []
    saw_heading = False

    def flush_prose() -> None:
        while prose and not prose[0].strip():
            prose.pop(0)
        while prose and not prose[-1].strip():
            prose.pop()
        if prose:
            cur_blocks.append(ContentBlock(kind="full", body="\n".join(prose)))
        prose.clear()

    def close_node() -> None:
        nonlocal cur_id, cur_blocks
        flush_prose()
        if cur_id is None:
            if cur_blocks:
                nodes.append(
                    Node(
                        id=slugs.claim("preamble"),
                        node_type="concept",
                        confidence=TRANSPILED_CONFIDENCE,
                        blocks=tuple(cur_blocks),
                    )
                )
        else:
            nodes.append(
                Node(
                    id=cur_id,
                    node_type="concept",
                    confidence=TRANSPILED_CONFIDENCE,
                    blocks=tuple(cur_blocks),
                )
            )
        cur_id = None
        cur_blocks = []

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        heading = _HEADING_RE.match(line)  # deeper headings (###+) stay prose
        if heading:
            close_node()
            saw_heading = True
            cur_id = slugs.assign(heading.group(1))
            i += 1
            continue
        fence = _FENCE_RE.match(line)
        if fence:
            flush_prose()
            info = fence.group(1).strip()
            lang = info.split()[0] if info else ""
            body: list[str] = []
            i += 1
            closed = False
            while i < n:
                if lines[i].startswith("```"):
                    closed = True
                    i += 1
                    break
                body.append(lines[i])
                i += 1
            if not closed:
                diags.append(
                    Diagnostic(
                        "OG013",
                        "warning",
                        "unclosed code fence consumed to end of file",
                    )
                )
            attrs = (("lang", lang),) if lang else ()
            cur_blocks.append(ContentBlock(kind="code", body="\n".join(body), attrs=attrs))
            continue
        if _TABLE_ROW_RE.match(line):
            flush_prose()
            body = []
            while i < n and _TABLE_ROW_RE.match(lines[i]):
                body.append(lines[i])
                i += 1
            cur_blocks.append(ContentBlock(kind="table", body="\n".join(body)))
            continue
        if _STEP_RE.match(line):
            flush_prose()
            body = []
            while i < n and _STEP_RE.match(lines[i]):
                body.append(lines[i])
                i += 1
            cur_blocks.append(ContentBlock(kind="steps", body="\n".join(body)))
            continue
        if _BULLET_RE.match(line):
            flush_prose()
            body = []
            while i < n and _BULLET_RE.match(lines[i]):
                body.append(lines[i])
                i += 1
            cur_blocks.append(ContentBlock(kind="list", body="\n".join(body)))
            continue
        callout = _CALLOUT_RE.match(line)
        if callout:
            flush_prose()
            kind = "warning" if callout.group(1) == "WARNING" else "note"
            body = []
            i += 1
            while i < n and lines[i].startswith(">"):
                stripped = _QUOTE_RE.sub("", lines[i], count=1)
                if stripped.startswith(">"):
                    diags.append(
                        Diagnostic(
                            "OG013",
                            "warning",
                            "nested blockquote flattened inside callout",
                        )
                    )
                body.append(stripped)
                i += 1
            cur_blocks.append(ContentBlock(kind=kind, body="\n".join(body)))
            continue
        if _LINK_ONLY_RE.match(line):
            flush_prose()
            cur_blocks.append(ContentBlock(kind="reference", body=line.strip()))
            i += 1
            continue
        prose.append(line)
        i += 1

    close_node()
    if not nodes and not saw_heading:
        # Whitespace-only input still yields one (empty) preamble node.
        nodes.append(
            Node(id="preamble", node_type="concept", confidence=TRANSPILED_CONFIDENCE)
        )
    return nodes, diags


# ---------------------------------------------------------------------------
# Stage 2: metadata synthesis
# ---------------------------------------------------------------------------

STAGE2_PROMPT = (
    "You are generating search index keywords.\n"
    "Node: {node_id} | Type: {node_type}\n"
    "Prose content: {prose}\n"
    "\n"
    "DENSE (max 15 tokens, pipe-separated technical keywords, no verbs, no articles):\n"
    "INDEX (5-8 comma-separated query terms, include synonyms):\n"
    "\n"
    "Respond with exactly two lines.\n"
    "No explanation. No markdown formatting.\n"
)


def _term_frequencies(text: str) -> list[str]:
    words = re.findall(r"[a-z][a-z0-9]+", text.lower())
    words = [w for w in words if w not in _STOPWORDS]
    counts = Counter(words)
    first_seen = {w: i for i, w in reversed(list(enumerate(words)))}
    return sorted(counts, key=lambda w: (-counts[w], first_seen[w]))


class HeuristicSynth:
    """Term-frequency metadata synthesis: top stopword-filtered prose terms,
    falling back to the node id's own words for prose-free nodes."""

    def __call__(self, node_id: str, node_type: str, prose: str) -> SynthOutput:
        terms = _term_frequencies(prose)
        if not terms:
            terms = [t for t in node_id.split("-") if t and not t.isdigit()]
        if not terms:
            terms = [node_id]
        keywords = list(dict.fromkeys(terms[:8]))
        for extra in node_id.split("-"):
            if len(keywords) >= 5:
                break
            if extra and extra not in keywords:
                keywords.append(extra)
        return SynthOutput(dense="|".join(terms[:12]), keywords=tuple(keywords))


class ExternalProcessSynth:
    """Delegates synthesis to an external program honouring the two-line
    reply protocol: the prompt arrives on stdin, the reply must be exactly
    DENSE and INDEX lines (optional ``DENSE:`` / ``INDEX:`` prefixes)."""

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout

    def __call__(self, node_id: str, node_type: str, prose: str) -> SynthOutput:
        prompt = STAGE2_PROMPT.format(node_id=node_id, node_type=node_type, prose=prose)
        proc = subprocess.run(
            self.command,
            input=prompt,
            capture_output=True,
            text=True,
            timeout=self.timeout,
        )
        lines = [ln for ln in proc.stdout.strip().split("\n") if ln.strip()]
        if proc.returncode != 0 or len(lines) != 2:
            raise SynthProtocolError(
                f"expected exactly two reply lines, got {len(lines)} "
                f"(exit {proc.returncode})"
            )
        dense = re.sub(r"^DENSE\s*:?\s*", "", lines[0], flags=re.IGNORECASE).strip()
        index = re.sub(r"^INDEX\s*:?\s*", "", lines[1], flags=re.IGNORECASE).strip()
        keywords = tuple(k.strip().lower() for k in index.split(",") if k.strip())
        if not dense or not keywords:
            raise SynthProtocolError("empty DENSE or INDEX line")
        return SynthOutput(dense=dense, keywords=keywords)


def _truncate_dense(dense: str, tokenizer: Callable[[str], int]) -> tuple[str, bool]:
    if tokenizer(dense) <= DENSE_TOKEN_LIMIT:
        return dense, False
    terms = dense.split("|")
    kept: list[str] = []
    for term in terms:
        candidate = "|".join(kept + [term])
        if tokenizer(candidate) > DENSE_TOKEN_LIMIT:
            break
        kept.append(term)
    if not kept:  # a single oversized term: hard-cut at the token budget
        return dense[: DENSE_TOKEN_LIMIT * 4], True
    return "|".join(kept), True


def synthesize_metadata(
    nodes: Sequence[Node],
    synth: Optional[MetadataSynth] = None,
    tokenizer: Callable[[str], int] = estimate_tokens,
) -> tuple[list[Node], list[IndexEntry], list[Diagnostic]]:
    """Attach a dense block to every node and assemble the routing index.

    The synthesis input is the first 500 characters of the node's prose
    blocks; code and table bodies are never shown to the generator, and no
    existing block body is modified.  A generator that violates its reply
    contract is replaced by the heuristic for that node, with a warning.
    """
    synth = synth or HeuristicSynth()
    fallback = HeuristicSynth()
    out_nodes: list[Node] = []
    entries: list[IndexEntry] = []
    diags: list[Diagnostic] = []

    for node in nodes:
        prose = "\n".join(b.body for b in node.blocks if b.kind == "full")[:PROSE_WINDOW]
        try:
            result = synth(node.id, node.node_type, prose)
            if not isinstance(result, SynthOutput) or not result.dense or not result.keywords:
                raise SynthProtocolError("malformed synthesis output")
        except SynthProtocolError as exc:
            diags.append(
                Diagnostic(
                    "OG014",
                    "warning",
                    f"metadata synthesis for {node.id!r} fell back to the "
                    f"heuristic: {exc}",
                )
            )
            result = fallback(node.id, node.node_type, prose)

        dense, truncated = _truncate_dense(result.dense, tokenizer)
        if truncated:
            diags.append(
                Diagnostic(
                    "OG014",
                    "warning",
                    f"dense block for {node.id!r} truncated to "
                    f"{DENSE_TOKEN_LIMIT} tokens",
                )
            )
        keywords = tuple(dict.fromkeys(k.lower() for k in result.keywords))[:8]

        if node.blocks_of("dense"):
            new_node = node
        else:
            new_node = Node(
                id=node.id,
                node_type=node.node_type,
                confidence=node.confidence,
                scope=node.scope,
                updated=node.updated,
                entry=node.entry,
                skip_if_known=node.skip_if_known,
                blocks=(ContentBlock(kind="dense", body=dense),) + node.blocks,
                edges=node.edges,
                assertion=node.assertion,
                changelog=node.changelog,
                extra_attrs=node.extra_attrs,
            )
        out_nodes.append(new_node)
        entries.append(
            IndexEntry(
                id=node.id,
                node_type=node.node_type,
                scope=node.scope,
                confidence=TRANSPILED_CONFIDENCE,
                keywords=keywords or (node.id,),
            )
        )
    return out_nodes, entries, diags


# ---------------------------------------------------------------------------
# Stage 3: fidelity verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FidelityCheck:
    kind: str  # code-block | table-row | heading | sentence
    subject: str
    passed: bool


@dataclass(frozen=True)
class FidelityReport:
    checks_passed: int
    checks_total: int
    additions: tuple[str, ...]
    alpha: float
    phi: float
    gate: bool
    gate_threshold: float
    per_check: tuple[FidelityCheck, ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "checks_passed": self.checks_passed,
            "checks_total": self.checks_total,
            "additions": list(self.additions),
            "alpha": self.alpha,
            "phi": self.phi,
            "gate": self.gate,
            "gate_threshold": self.gate_threshold,
            "per_check": [
                {"kind": c.kind, "subject": c.subject, "passed": c.passed}
                for c in self.per_check
            ],
        }


def _source_fences(markdown: str) -> list[str]:
    bodies: list[str] = []
    lines = markdown.split("\n")
    i = 0
    while i < len(lines):
        if _FENCE_RE.match(lines[i]):
            body: list[str] = []
            i += 1
            while i < len(lines) and not lines[i].startswith("```"):
                body.append(lines[i])
                i += 1
            bodies.append("\n".join(body))
        i += 1
    return bodies


def _source_table_rows(markdown: str) -> list[str]:
    rows: list[str] = []
    in_fence = False
    for line in markdown.split("\n"):
        if _FENCE_RE.match(line):
            in_fence = not in_fence
            continue
        if not in_fence and _TABLE_ROW_RE.match(line):
            rows.append(line.strip())
    return rows


def _source_headings(markdown: str) -> list[str]:
    headings: list[str] = []
    in_fence = False
    for line in markdown.split("\n"):
        if _FENCE_RE.match(line):
            in_fence = not in_fence
            continue
        m = _HEADING_RE.match(line)
        if not in_fence and m:
            headings.append(m.group(1))
    return headings


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _sentences(text: str) -> list[str]:
    return [s for s in (_normalize(p) for p in _SENTENCE_SPLIT_RE.split(text)) if s]


def verify_fidelity(
    source_md: str,
    og_doc: DocumentGraph,
    alpha: float = ADDITION_PENALTY,
    gate_threshold: float = DEFAULT_GATE,
) -> FidelityReport:
    """Deterministic fidelity verification of a transpiled document.

    Checks: every source code fence appears byte-identically in a code
    block; every source table row appears in a table block; every ``##``
    heading maps to a node id; every sentence in the document's full blocks
    appears in the source (violations are counted as additions and
    penalised by ``alpha`` each).
    """
    checks: list[FidelityCheck] = []
    additions: list[str] = []

    code_bodies = [b.body for n in og_doc.nodes for b in n.blocks_of("code")]
    for body in _source_fences(source_md):
        checks.append(FidelityCheck("code-block", body[:60], body in code_bodies))

    table_lines = {
        line.strip()
        for n in og_doc.nodes
        for b in n.blocks_of("table")
        for line in b.body.split("\n")
    }
    for row in _source_table_rows(source_md):
        checks.append(FidelityCheck("table-row", row[:60], row in table_lines))

    node_ids = og_doc.node_ids
    slugs = SlugRegistry()
    for heading in _source_headings(source_md):
        expected = slugs.assign(heading)
        checks.append(FidelityCheck("heading", heading[:60], expected in node_ids))

    norm_source = _normalize(source_md)
    for node in og_doc.nodes:
        for block in node.blocks_of("full"):
            for sentence in _sentences(block.body):
                ok = sentence in norm_source
                checks.append(FidelityCheck("sentence", sentence[:60], ok))
                if not ok:
                    additions.append(sentence)

    total = len(checks)
    passed = sum(1 for c in checks if c.passed)
    phi = (passed / total if total else 1.0) - alpha * len(additions)
    gate = phi >= gate_threshold - 1e-9
    return FidelityReport(
        checks_passed=passed,
        checks_total=total,
        additions=tuple(additions),
        alpha=alpha,
        phi=phi,
        gate=gate,
        gate_threshold=gate_threshold,
        per_check=tuple(checks),
    )


# ---------------------------------------------------------------------------
# The composed pipeline
# ---------------------------------------------------------------------------

def _document_title(markdown: str) -> str:
    for line in markdown.split("\n"):
        m = _H1_RE.match(line)
        if m:
            return m.group(1)
    return "document"


def assemble_document(
    markdown: str,
    nodes: Sequence[Node],
    entries: Sequence[IndexEntry],
    warnings: Sequence[Diagnostic] = (),
) -> DocumentGraph:
    return DocumentGraph(
        meta=Meta(title=_document_title(markdown), scope=ALL_SCOPE),
        schema=None,
        index=tuple(entries),
        nodes=tuple(nodes),
        source_kind=SourceKind.NATIVE,
        parse_warnings=tuple(warnings),
    )


def transpile(
    markdown: str,
    synth: Optional[MetadataSynth] = None,
    gate_threshold: float = DEFAULT_GATE,
) -> tuple[DocumentGraph, FidelityReport]:
    """Run the three-stage pipeline and gate on fidelity.

    Raises GateError (carrying the report) when the fidelity score falls
    below the threshold; that is the only failure mode.
    """
    nodes, diags = extract_structure(markdown)
    enriched, entries, synth_diags = synthesize_metadata(nodes, synth)
    doc = assemble_document(markdown, enriched, entries, list(diags) + list(synth_diags))
    report = verify_fidelity(markdown, doc, gate_threshold=gate_threshold)
    if not report.gate:
        raise GateError(report)
    return doc, report

"""Core data model for ObjectGraph (.og) documents.

Everything here is immutable after construction; a parsed document can be
shared read-only across any number of concurrent query sessions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from enum import Enum
from typing import Optional

ALL_SCOPE = "all"

#: Content-block tags with defined semantics.  Anything else is carried as
#: an opaque block and flagged by the validator, never dropped.
CONTENT_KINDS = (
    "dense",
    "full",
    "code",
    "steps",
    "list",
    "table",
    "warning",
    "note",
    "example",
    "reference",
    "summary",
)

#: Block kinds whose bodies are never transformed by any operation.
VERBATIM_KINDS = ("code", "table")

CHANGELOG_ACTIONS = ("added", "updated", "deprecated")


class SourceKind(str, Enum):
    NATIVE = "native-og"
    MARKDOWN_FALLBACK = "markdown-fallback"


class EdgeDirection(str, Enum):
    OUT = "->"
    IN = "<-"
    BOTH = "<>"


@dataclass(frozen=True)
class SourceSpan:
    """Byte and line extent of a construct, tag lines included."""

    byte_start: int = 0
    byte_end: int = 0
    line_start: int = 0
    line_end: int = 0


EMPTY_SPAN = SourceSpan()


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    severity: str  # "error" | "warning"
    message: str
    line_start: int = 0
    line_end: int = 0

    def render(self, path: str = "<input>") -> str:
        return f"{path}:{self.line_start}:1 [{self.severity.upper()} {self.rule}] {self.message}"


@dataclass(frozen=True)
class ContentBlock:
    """A tagged content region.  ``body`` is byte-identical to the source
    region between the opening tag line and its terminator."""

    kind: str
    body: str
    attrs: tuple[tuple[str, str], ...] = ()
    span: SourceSpan = field(default=EMPTY_SPAN, compare=False)

    @property
    def lang(self) -> Optional[str]:
        for key, value in self.attrs:
            if key == "lang":
                return value
        return None

    @property
    def always_read(self) -> bool:
        return self.kind == "warning"

    @property
    def known(self) -> bool:
        return self.kind in CONTENT_KINDS


@dataclass(frozen=True)
class EdgeCondition:
    """Side-effect-free predicate over the originating query text."""

    subject: str  # "query"
    predicate: str  # "contains"
    argument: str

    def evaluate(self, query: str) -> bool:
        return self.argument.lower() in query.lower()

    def render(self) -> str:
        return f"{self.subject} {self.predicate} {self.argument}"


@dataclass(frozen=True)
class Edge:
    direction: EdgeDirection
    label: str  # includes the leading ':'
    target: str
    condition: Optional[EdgeCondition] = None
    attrs: tuple[tuple[str, str], ...] = ()
    span: SourceSpan = field(default=EMPTY_SPAN, compare=False)

    def attr(self, key: str) -> Optional[str]:
        for k, v in self.attrs:
            if k == key:
                return v
        return None


@dataclass(frozen=True)
class Check:
    kind: str  # "command-matches" | "command-contains" | "file-exists"
    command_or_path: str
    pattern_or_literal: Optional[str] = None


@dataclass(frozen=True)
class AssertionSpec:
    trigger: str
    checks: tuple[Check, ...] = ()
    on_pass: Optional[Edge] = None
    on_fail: Optional[Edge] = None
    on_fail_after_retries: Optional[Edge] = None
    max_retries: int = 0
    timeout: Optional[float] = None  # seconds
    extras: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ChangelogEntry:
    date: date
    action: str  # one of CHANGELOG_ACTIONS
    target_node: str
    note: Optional[str] = None


@dataclass(frozen=True)
class Node:
    """Atomic knowledge unit.  Identity is the (id, scope) pair: two nodes
    may share an id only when their scopes differ."""

    id: str
    node_type: str = "concept"
    confidence: Decimal = Decimal("1.0")
    scope: str = ALL_SCOPE
    updated: Optional[str] = None
    entry: bool = False
    skip_if_known: bool = False
    blocks: tuple[ContentBlock, ...] = ()
    edges: tuple[Edge, ...] = ()
    assertion: Optional[AssertionSpec] = None
    changelog: Optional[tuple[ChangelogEntry, ...]] = None
    extra_attrs: tuple[tuple[str, str], ...] = ()
    span: SourceSpan = field(default=EMPTY_SPAN, compare=False)

    @property
    def key(self) -> tuple[str, str]:
        return (self.id, self.scope)

    def blocks_of(self, kind: str) -> tuple[ContentBlock, ...]:
        return tuple(b for b in self.blocks if b.kind == kind)

    @property
    def has_warning(self) -> bool:
        return any(b.kind == "warning" for b in self.blocks)


@dataclass(frozen=True)
class Meta:
    title: str = ""
    version: str = ""
    updated: str = ""
    domain: str = ""
    scope: str = ALL_SCOPE
    checksum: Optional[str] = None
    extra: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Schema:
    node_types: tuple[str, ...] = ()
    edge_types: tuple[str, ...] = ()
    scope_levels: tuple[str, ...] = ()


@dataclass(frozen=True)
class IndexEntry:
    id: str
    node_type: str
    scope: str
    confidence: Decimal
    keywords: tuple[str, ...]
    span: SourceSpan = field(default=EMPTY_SPAN, compare=False)

    @property
    def key(self) -> tuple[str, str]:
        return (self.id, self.scope)


@dataclass(frozen=True)
class DocumentGraph:
    meta: Meta
    schema: Optional[Schema]
    index: tuple[IndexEntry, ...]
    nodes: tuple[Node, ...]
    source_kind: SourceKind
    #: Unknown top-level blocks, preserved opaquely for forward compatibility.
    extras: tuple[ContentBlock, ...] = ()
    parse_warnings: tuple[Diagnostic, ...] = field(default=(), compare=False)

    @property
    def node_ids(self) -> set[str]:
        return {n.id for n in self.nodes}

    def find(self, node_id: str, scope: str) -> Optional[Node]:
        for n in self.nodes:
            if n.id == node_id and n.scope == scope:
                return n
        return None

    def visible_node(self, node_id: str, role: str) -> Optional[Node]:
        """Resolve an id under a role: a role-scoped node wins over the
        ``all``-scoped one with the same id."""
        fallback = None
        for n in self.nodes:
            if n.id != node_id:
                continue
            if n.scope == role:
                return n
            if n.scope == ALL_SCOPE:
                fallback = n
        return fallback

    def changelog_entries(self) -> tuple[ChangelogEntry, ...]:
        out: list[ChangelogEntry] = []
        for n in self.nodes:
            if n.changelog:
                out.extend(n.changelog)
        return tuple(out)

    def assertions_triggered_by(self, node_id: str) -> tuple[str, ...]:
        return tuple(
            n.id for n in self.nodes if n.assertion and n.assertion.trigger == node_id
        )


def document_to_dict(doc: DocumentGraph) -> dict:
    """JSON-ready view of a parsed document (schema_version 1)."""

    def block(b: ContentBlock) -> dict:
        d = {"kind": b.kind, "body": b.body}
        if b.attrs:
            d["attrs"] = dict(b.attrs)
        return d

    def edge(e: Edge) -> dict:
        d = {"direction": e.direction.value, "label": e.label, "target": e.target}
        if e.condition:
            d["condition"] = e.condition.render()
        if e.attrs:
            d["attrs"] = dict(e.attrs)
        return d

    def node(n: Node) -> dict:
        d = {
            "id": n.id,
            "type": n.node_type,
            "confidence": str(n.confidence),
            "scope": n.scope,
            "blocks": [block(b) for b in n.blocks],
            "edges": [edge(e) for e in n.edges],
        }
        if n.updated:
            d["updated"] = n.updated
        if n.entry:
            d["entry"] = True
        if n.skip_if_known:
            d["skip_if_known"] = True
        if n.assertion:
            a = n.assertion
            d["assertion"] = {
                "trigger": a.trigger,
                "checks": [
                    {
                        "kind": c.kind,
                        "command_or_path": c.command_or_path,
                        "pattern_or_literal": c.pattern_or_literal,
                    }
                    for c in a.checks
                ],
                "on_pass": edge(a.on_pass) if a.on_pass else None,
                "on_fail": edge(a.on_fail) if a.on_fail else None,
                "on_fail_after_retries": (
                    edge(a.on_fail_after_retries) if a.on_fail_after_retries else None
                ),
                "max_retries": a.max_retries,
                "timeout": a.timeout,
            }
        if n.changelog is not None:
            d["changelog"] = [
                {
                    "date": e.date.isoformat(),
                    "action": e.action,
                    "target_node": e.target_node,
                    "note": e.note,
                }
                for e in n.changelog
            ]
        return d

    out: dict = {
        "schema_version": 1,
        "source_kind": doc.source_kind.value,
        "meta": {
            "title": doc.meta.title,
            "version": doc.meta.version,
            "updated": doc.meta.updated,
            "domain": doc.meta.domain,
            "scope": doc.meta.scope,
            "checksum": doc.meta.checksum,
            "extra": dict(doc.meta.extra),
        },
        "index": [
            {
                "id": e.id,
                "type": e.node_type,
                "scope": e.scope,
                "confidence": str(e.confidence),
                "keywords": list(e.keywords),
            }
            for e in doc.index
        ],
        "nodes": [node(n) for n in doc.nodes],
    }
    if doc.schema:
        out["schema"] = {
            "node_types": list(doc.schema.node_types),
            "edge_types": list(doc.schema.edge_types),
            "scope_levels": list(doc.schema.scope_levels),
        }
    return out

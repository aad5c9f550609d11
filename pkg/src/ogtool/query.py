"""The two-primitive query protocol: role-filtered index search and
dependency-closing context resolution, with per-session memory.

Role isolation is absolute: entries and nodes scoped to another role are
omitted from search results entirely, and resolving their ids raises the
same error as resolving an id that does not exist at all, so a consumer
can never learn that withheld content exists.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from typing import Callable, Optional, Sequence

from .cost import estimate_tokens
from .model import (
    ALL_SCOPE,
    ChangelogEntry,
    ContentBlock,
    Diagnostic,
    DocumentGraph,
    EdgeDirection,
    IndexEntry,
    Node,
    SourceKind,
)

_WORD_RE = re.compile(r"[a-z0-9]+")
_VERSION_RE = re.compile(r"v?\d+(?:\.\d+)*$")

REQUIRES_LABEL = ":requires"


class UnknownNodeError(KeyError):
    """Raised for ids that do not resolve under the caller's role.  Unknown
    and access-denied ids produce identical errors by design."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(f"unknown node id: {node_id}")

    def __str__(self) -> str:  # KeyError quotes its payload otherwise
        return f"unknown node id: {self.node_id}"


class NoChangelogError(LookupError):
    pass


class DeltaError(ValueError):
    pass


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass
class QueryConfig:
    confidence_threshold: float = 0.80
    requires_depth_limit: int = 3
    role: str = ALL_SCOPE
    #: dense-preferred returns dense blocks where allowed; full-preferred
    #: (execution mode) always discloses full content.
    mode: str = "dense-preferred"
    #: "flagged-only": only skip-if-known nodes are withheld on revisit
    #: (default); "all": any previously visited node is withheld.
    skip_visited: str = "flagged-only"
    tokenizer: Optional[Callable[[str], int]] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence threshold must be within [0, 1]")
        if self.requires_depth_limit < 0:
            raise ValueError("depth limit must be >= 0")
        if self.mode not in ("dense-preferred", "full-preferred"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.skip_visited not in ("flagged-only", "all"):
            raise ValueError(f"unknown skip_visited policy {self.skip_visited!r}")


@dataclass
class QuerySession:
    """Visited-node memory for one agent.  Single-writer: one session must
    not be shared by concurrent resolutions."""

    role: str = ALL_SCOPE
    visited: set[tuple[str, str]] = field(default_factory=set)
    turn: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "role": self.role,
                "turn": self.turn,
                "visited": sorted(list(k) for k in self.visited),
            }
        )

    @classmethod
    def from_json(cls, raw: str) -> "QuerySession":
        data = json.loads(raw)
        return cls(
            role=data.get("role", ALL_SCOPE),
            visited={(i, s) for i, s in data.get("visited", [])},
            turn=int(data.get("turn", 0)),
        )


@dataclass(frozen=True)
class SearchResult:
    formatted: str
    entries: tuple[IndexEntry, ...]
    empty_query: bool = False

    def to_dict(self) -> dict:
        return {
            "formatted": self.formatted,
            "entries": [
                {
                    "id": e.id,
                    "type": e.node_type,
                    "confidence": str(e.confidence),
                    "keywords": list(e.keywords),
                }
                for e in self.entries
            ],
            "empty_query": self.empty_query,
        }


@dataclass(frozen=True)
class PayloadItem:
    node_id: str
    scope: str
    disclosure: str  # "dense" | "full"
    blocks: tuple[ContentBlock, ...]
    pending_assertions: tuple[str, ...] = ()


@dataclass(frozen=True)
class ContextPayload:
    items: tuple[PayloadItem, ...]
    token_estimate: int
    diagnostics: tuple[Diagnostic, ...] = ()

    def to_dict(self) -> dict:
        return {
            "items": [
                {
                    "id": item.node_id,
                    "scope": item.scope,
                    "disclosure": item.disclosure,
                    "blocks": [
                        {"kind": b.kind, "body": b.body, **({"attrs": dict(b.attrs)} if b.attrs else {})}
                        for b in item.blocks
                    ],
                    "pending_assertions": list(item.pending_assertions),
                }
                for item in self.items
            ],
            "token_estimate": self.token_estimate,
            "warnings": [d.message for d in self.diagnostics],
        }


def lexical_route(candidates: Sequence[IndexEntry], query: str) -> list[str]:
    """Deterministic router: score each candidate by distinct query-token
    overlap with its keywords and id tokens; order by score, then confidence,
    then index position.  Zero-score candidates are dropped.

    A model-backed router may replace this with the same contract.
    """
    tokens = set(_tokenize(query))
    scored: list[tuple[int, Decimal, int, str]] = []
    for pos, entry in enumerate(candidates):
        terms = set(entry.keywords) | set(_tokenize(entry.id))
        score = len(tokens & terms)
        if score > 0:
            scored.append((-score, -entry.confidence, pos, entry.id))
    scored.sort()
    return [item[3] for item in scored]


RouterPlug = Callable[[Sequence[IndexEntry], str], list[str]]


def _format_rows(entries: Sequence[IndexEntry]) -> str:
    return "\n".join(
        f"{e.id} | {e.node_type} | {e.confidence} | {','.join(e.keywords)}"
        for e in entries
    )


def _fallback_entry(doc: DocumentGraph) -> IndexEntry:
    node = doc.nodes[0]
    return IndexEntry(
        id=node.id,
        node_type=node.node_type,
        scope=node.scope,
        confidence=Decimal("1.0"),
        keywords=(node.id,),
    )


def search_index(
    doc: DocumentGraph,
    query: str,
    role: Optional[str] = None,
    config: Optional[QueryConfig] = None,
    router: Optional[RouterPlug] = None,
) -> SearchResult:
    """Role-filtered, confidence-gated index search.

    Entries scoped outside the role are omitted entirely.  Markdown-fallback
    documents return their single node unconditionally (full-read fallback).
    """
    config = config or QueryConfig()
    role = role if role is not None else config.role
    empty = not _tokenize(query)

    if doc.source_kind is SourceKind.MARKDOWN_FALLBACK:
        entry = _fallback_entry(doc)
        return SearchResult(_format_rows([entry]), (entry,), empty_query=empty)

    if empty:
        return SearchResult("", (), empty_query=True)

    theta = Decimal(str(config.confidence_threshold))
    candidates = [
        e for e in doc.index if e.scope in (role, ALL_SCOPE) and e.confidence >= theta
    ]
    route = router or lexical_route
    selected_ids = route(candidates, query)

    by_id: dict[str, list[IndexEntry]] = {}
    for e in candidates:
        by_id.setdefault(e.id, []).append(e)
    picked: list[IndexEntry] = []
    seen: set[tuple[str, str]] = set()
    for node_id in selected_ids:
        for e in by_id.get(node_id, []):
            if e.key not in seen:
                picked.append(e)
                seen.add(e.key)
    return SearchResult(_format_rows(picked), tuple(picked), empty_query=False)


def _select_blocks(node: Node, disclosure: str) -> tuple[ContentBlock, ...]:
    if disclosure == "full":
        chosen = [b for b in node.blocks if b.kind != "dense"]
        return tuple(chosen) if chosen else node.blocks
    dense = [b for b in node.blocks if b.kind == "dense"]
    if not dense:
        # Nothing to disclose at dense level; fall back to the full blocks.
        return tuple(b for b in node.blocks if b.kind != "dense")
    warnings = [b for b in node.blocks if b.kind == "warning"]
    return tuple(dense + warnings)


def _requires_targets(node: Node, doc: DocumentGraph, role: str, task: str) -> list[Node]:
    out: list[Node] = []
    for edge in node.edges:
        if edge.label != REQUIRES_LABEL:
            continue
        if edge.direction not in (EdgeDirection.OUT, EdgeDirection.BOTH):
            continue
        if edge.condition is not None and not edge.condition.evaluate(task):
            continue
        target = doc.visible_node(edge.target, role)
        if target is not None:
            out.append(target)
    return out


def _detect_requires_cycle(
    start_nodes: Sequence[Node], doc: DocumentGraph, role: str, task: str
) -> bool:
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[tuple[str, str], int] = {}

    def visit(node: Node) -> bool:
        color[node.key] = GRAY
        for dep in _requires_targets(node, doc, role, task):
            state = color.get(dep.key, WHITE)
            if state == GRAY:
                return True
            if state == WHITE and visit(dep):
                return True
        color[node.key] = BLACK
        return False

    return any(
        visit(n) for n in start_nodes if color.get(n.key, WHITE) == WHITE
    )


def resolve_context(
    doc: DocumentGraph,
    ids: Sequence[str],
    session: QuerySession,
    config: Optional[QueryConfig] = None,
    task: str = "",
) -> ContextPayload:
    """Return the content of the requested nodes plus the transitive closure
    of their dependency edges, up to the configured depth limit.

    Conditional dependency edges fire only when their condition holds for
    ``task``.  Nodes withheld by session memory do not contribute edges.
    Every returned key is recorded in the session's visited set.
    """
    config = config or QueryConfig()
    tokenizer = config.tokenizer or estimate_tokens
    role = session.role

    if doc.source_kind is SourceKind.MARKDOWN_FALLBACK:
        node = doc.nodes[0]
        item = PayloadItem(node.id, node.scope, "full", node.blocks)
        session.visited.add(node.key)
        session.turn += 1
        tokens = sum(tokenizer(b.body) for b in node.blocks)
        return ContextPayload(items=(item,), token_estimate=tokens)

    requested: list[Node] = []
    seen_req: set[tuple[str, str]] = set()
    for node_id in ids:
        node = doc.visible_node(node_id, role)
        if node is None:
            raise UnknownNodeError(node_id)
        if node.key not in seen_req:
            requested.append(node)
            seen_req.add(node.key)

    def withheld(node: Node) -> bool:
        if node.key not in session.visited:
            return False
        if config.skip_visited == "all":
            return True
        return node.skip_if_known

    survivors = [n for n in requested if not withheld(n)]

    collected: list[Node] = list(survivors)
    collected_keys = {n.key for n in survivors}
    frontier: list[tuple[Node, int]] = [(n, 0) for n in survivors]
    while frontier:
        node, depth = frontier.pop(0)
        if depth >= config.requires_depth_limit:
            continue
        for dep in _requires_targets(node, doc, role, task):
            if dep.key in collected_keys or withheld(dep):
                continue
            collected.append(dep)
            collected_keys.add(dep.key)
            frontier.append((dep, depth + 1))

    diagnostics: list[Diagnostic] = []
    if survivors and _detect_requires_cycle(survivors, doc, role, task):
        diagnostics.append(
            Diagnostic(
                "OG012",
                "warning",
                "cycle in the dependency closure; traversal truncated",
            )
        )

    items: list[PayloadItem] = []
    total = 0
    for node in collected:
        if node.has_warning or config.mode == "full-preferred":
            disclosure = "full"
        else:
            disclosure = "dense"
        blocks = _select_blocks(node, disclosure)
        total += sum(tokenizer(b.body) for b in blocks)
        items.append(
            PayloadItem(
                node_id=node.id,
                scope=node.scope,
                disclosure=disclosure,
                blocks=blocks,
                pending_assertions=doc.assertions_triggered_by(node.id),
            )
        )
        session.visited.add(node.key)
    session.turn += 1
    return ContextPayload(
        items=tuple(items),
        token_estimate=total,
        diagnostics=tuple(diagnostics),
    )


def delta_since(
    doc: DocumentGraph, last_seen: str
) -> tuple[list[ChangelogEntry], list[str]]:
    """Changelog entries strictly after ``last_seen`` plus the ids of
    added/updated nodes.  Deprecations are flagged on the entries themselves.

    ``last_seen`` is an ISO date, or a version string: the current version
    yields an empty delta, any other version conservatively returns the full
    changelog (per-version dating is not recorded).
    """
    entries = doc.changelog_entries()
    if not entries:
        raise NoChangelogError("document has no changelog node")

    cutoff: Optional[date] = None
    try:
        cutoff = date.fromisoformat(last_seen.strip())
    except ValueError:
        version = last_seen.strip()
        if not _VERSION_RE.fullmatch(version):
            raise DeltaError(f"cannot interpret last_seen {last_seen!r}") from None
        if version.lstrip("v") == doc.meta.version.lstrip("v"):
            return [], []
        cutoff = None  # unknown version: everything may have changed

    if cutoff is not None:
        selected = [e for e in entries if e.date > cutoff]
    else:
        selected = list(entries)

    stale: list[str] = []
    for e in selected:
        if e.action in ("added", "updated") and e.target_node not in stale:
            stale.append(e.target_node)
    return selected, stale

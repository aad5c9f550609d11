"""Document validation: invariant checks with stable rule ids.

Rule ids (stable, for downstream filtering):

======  ======================================  =================
id      meaning                                 base severity
======  ======================================  =================
OG001   edge target has no node in this file    warning
OG002   schema violation (type/label/scope)     error
OG003   dense block exceeds the token budget    warning
OG004   checksum mismatch / unverifiable form   error / warning
OG005   index and node sets disagree            warning
OG006   unknown block tag preserved opaquely    warning
OG007   duplicate meta key                      warning
OG008   duplicate (id, scope) identity          error
OG009   retry limit inconsistency               warning
OG010   node has no substantive block           error
OG011   index entry invariant broken            error
======  ======================================  =================

Strict mode promotes every warning to an error.  Dangling edges and
index/node mismatches are warnings by default because published files
routinely index nodes that live in excerpts or sibling documents; strict
mode restores the hard-error reading.
"""

from __future__ import annotations

from dataclasses import replace
from decimal import Decimal
from typing import Callable, Optional

from .cost import estimate_tokens
from .model import (
    ALL_SCOPE,
    Diagnostic,
    DocumentGraph,
    SourceKind,
)
from .writer import compute_checksum, is_verifiable_checksum

DENSE_TOKEN_BUDGET = 15

_ZERO = Decimal(0)
_ONE = Decimal(1)


def validate(
    doc: DocumentGraph,
    strictness: str = "lenient",
    tokenizer: Optional[Callable[[str], int]] = None,
) -> list[Diagnostic]:
    """Check every document invariant and return diagnostics.

    Never raises: problems are the return value.  ``strictness`` is
    ``lenient`` or ``strict``; strict promotes warnings to errors.
    """
    if strictness not in ("lenient", "strict"):
        raise ValueError(f"unknown strictness {strictness!r}")
    count_tokens = tokenizer or estimate_tokens
    out: list[Diagnostic] = list(doc.parse_warnings)

    if doc.source_kind is SourceKind.MARKDOWN_FALLBACK:
        # Fallback documents are valid by construction.
        return _promote(out, strictness)

    node_ids = doc.node_ids
    node_keys = [n.key for n in doc.nodes]

    # -- identity uniqueness ------------------------------------------------
    seen: set[tuple[str, str]] = set()
    for n in doc.nodes:
        if n.key in seen:
            out.append(
                Diagnostic(
                    "OG008",
                    "error",
                    f"duplicate node identity (id={n.id!r}, scope={n.scope!r})",
                    n.span.line_start,
                    n.span.line_start,
                )
            )
        seen.add(n.key)
    seen_entries: set[tuple[str, str]] = set()
    for e in doc.index:
        if e.key in seen_entries:
            out.append(
                Diagnostic(
                    "OG008",
                    "error",
                    f"duplicate index entry (id={e.id!r}, scope={e.scope!r})",
                    e.span.line_start,
                    e.span.line_start,
                )
            )
        seen_entries.add(e.key)

    # -- index entry invariants ----------------------------------------------
    for e in doc.index:
        if not (_ZERO <= e.confidence <= _ONE):
            out.append(
                Diagnostic(
                    "OG011",
                    "error",
                    f"index confidence {e.confidence} outside [0, 1] for {e.id!r}",
                    e.span.line_start,
                    e.span.line_start,
                )
            )
        if not e.keywords:
            out.append(
                Diagnostic(
                    "OG011",
                    "error",
                    f"index entry {e.id!r} has no keywords",
                    e.span.line_start,
                    e.span.line_start,
                )
            )

    # -- index / node correspondence -----------------------------------------
    key_set = set(node_keys)
    for e in doc.index:
        if e.key not in key_set and (e.id, ALL_SCOPE) not in key_set:
            out.append(
                Diagnostic(
                    "OG005",
                    "warning",
                    f"index entry {e.id!r} (scope {e.scope!r}) has no node body",
                    e.span.line_start,
                    e.span.line_start,
                )
            )
    entry_keys = {e.key for e in doc.index}
    entry_ids = {e.id for e in doc.index}
    for n in doc.nodes:
        if n.key not in entry_keys and n.id not in entry_ids:
            out.append(
                Diagnostic(
                    "OG005",
                    "warning",
                    f"node {n.id!r} (scope {n.scope!r}) is missing from the index",
                    n.span.line_start,
                    n.span.line_start,
                )
            )

    # -- edges ----------------------------------------------------------------
    for n in doc.nodes:
        for edge in n.edges:
            if edge.target not in node_ids:
                out.append(
                    Diagnostic(
                        "OG001",
                        "warning",
                        f"edge {edge.label} from {n.id!r} targets missing node "
                        f"{edge.target!r}",
                        edge.span.line_start,
                        edge.span.line_end,
                    )
                )
        if n.assertion:
            for route in (n.assertion.on_pass, n.assertion.on_fail,
                          n.assertion.on_fail_after_retries):
                if route and route.target not in node_ids:
                    out.append(
                        Diagnostic(
                            "OG001",
                            "warning",
                            f"assertion route {route.label} on {n.id!r} targets "
                            f"missing node {route.target!r}",
                            n.span.line_start,
                            n.span.line_start,
                        )
                    )

    # -- schema closure ---------------------------------------------------------
    # Covers node types, edge labels in ::edges blocks, and every scope
    # annotation.  The index's type column and assertion routing labels are
    # free-form in published files and stay unchecked.
    if doc.schema is not None:
        schema = doc.schema
        node_types = set(schema.node_types)
        edge_types = set(schema.edge_types)
        scope_levels = set(schema.scope_levels)
        for n in doc.nodes:
            if node_types and n.node_type not in node_types:
                out.append(
                    Diagnostic(
                        "OG002",
                        "error",
                        f"node type {n.node_type!r} not declared in schema",
                        n.span.line_start,
                        n.span.line_start,
                    )
                )
            if scope_levels and n.scope not in scope_levels:
                out.append(
                    Diagnostic(
                        "OG002",
                        "error",
                        f"scope {n.scope!r} on node {n.id!r} not declared in schema",
                        n.span.line_start,
                        n.span.line_start,
                    )
                )
            for edge in n.edges:
                if edge_types and edge.label.lstrip(":") not in edge_types:
                    out.append(
                        Diagnostic(
                            "OG002",
                            "error",
                            f"edge label {edge.label!r} not declared in schema",
                            edge.span.line_start,
                            edge.span.line_end,
                        )
                    )
        for e in doc.index:
            if scope_levels and e.scope not in scope_levels:
                out.append(
                    Diagnostic(
                        "OG002",
                        "error",
                        f"scope {e.scope!r} on index entry {e.id!r} not declared",
                        e.span.line_start,
                        e.span.line_start,
                    )
                )
        if scope_levels and doc.meta.scope and doc.meta.scope not in scope_levels:
            out.append(
                Diagnostic(
                    "OG002",
                    "error",
                    f"meta scope {doc.meta.scope!r} not declared in schema",
                    1,
                    1,
                )
            )

    # -- per-node content invariants -------------------------------------------
    for n in doc.nodes:
        substantive = (
            any(b.kind in ("dense", "full") for b in n.blocks)
            or n.assertion is not None
            or n.changelog is not None
        )
        if not substantive:
            out.append(
                Diagnostic(
                    "OG010",
                    "error",
                    f"node {n.id!r} needs a dense, full, assertion or changelog block",
                    n.span.line_start,
                    n.span.line_end,
                )
            )
        if not (_ZERO <= n.confidence <= _ONE):
            out.append(
                Diagnostic(
                    "OG011",
                    "error",
                    f"node confidence {n.confidence} outside [0, 1] for {n.id!r}",
                    n.span.line_start,
                    n.span.line_start,
                )
            )
        for block in n.blocks_of("dense"):
            tokens = count_tokens(block.body)
            if tokens > DENSE_TOKEN_BUDGET:
                out.append(
                    Diagnostic(
                        "OG003",
                        "warning",
                        f"dense block of {n.id!r} is {tokens} tokens "
                        f"(budget {DENSE_TOKEN_BUDGET})",
                        block.span.line_start,
                        block.span.line_end,
                    )
                )

    # -- checksum ------------------------------------------------------------------
    if doc.meta.checksum:
        if not is_verifiable_checksum(doc.meta.checksum):
            out.append(
                Diagnostic(
                    "OG004",
                    "warning",
                    f"checksum {doc.meta.checksum!r} is not a verifiable "
                    "sha256:<64 hex> digest",
                    1,
                    1,
                )
            )
        elif doc.nodes:
            actual = compute_checksum(doc)
            if actual != doc.meta.checksum:
                out.append(
                    Diagnostic(
                        "OG004",
                        "error",
                        f"checksum mismatch: meta says {doc.meta.checksum}, "
                        f"content hashes to {actual}",
                        1,
                        1,
                    )
                )

    return _promote(out, strictness)


def _promote(diags: list[Diagnostic], strictness: str) -> list[Diagnostic]:
    if strictness != "strict":
        return diags
    return [
        replace(d, severity="error") if d.severity == "warning" else d for d in diags
    ]


def errors_only(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]

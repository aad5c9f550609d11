"""Canonical serializer for DocumentGraph, plus the content checksum.

The canonical form is deterministic and idempotent: writing, re-parsing and
writing again produces byte-identical output.  Output uses ``\\n`` line
endings and ends with exactly one trailing newline.
"""

from __future__ import annotations

import hashlib

from .model import (
    AssertionSpec,
    ContentBlock,
    DocumentGraph,
    Edge,
    Meta,
    Node,
    Schema,
)

_META_FIELD_ORDER = ("title", "version", "updated", "domain", "scope")


def _attr_value(value: str) -> str:
    if value == "" or any(ch.isspace() for ch in value) or "]" in value:
        return f"'{value}'"
    return value


def _attrs_text(pairs) -> str:
    return " ".join(f"{k}={_attr_value(v)}" for k, v in pairs)


def _edge_text(edge: Edge) -> str:
    inner = edge.label
    if edge.condition:
        inner += f" condition='{edge.condition.render()}'"
    if edge.attrs:
        inner += " " + _attrs_text(edge.attrs)
    return f"{edge.direction.value}[{inner}] {edge.target}"


def _meta_text(meta: Meta) -> str:
    lines = ["::meta"]
    for name in _META_FIELD_ORDER:
        value = getattr(meta, name)
        if value:
            lines.append(f"  {name}: {value}")
    if meta.checksum:
        lines.append(f"  checksum: {meta.checksum}")
    for key, value in meta.extra:
        lines.append(f"  {key}: {value}")
    lines.append("::end")
    return "\n".join(lines)


def _schema_text(schema: Schema) -> str:
    lines = ["::schema"]
    if schema.node_types:
        lines.append(f"  node-types: [{','.join(schema.node_types)}]")
    if schema.edge_types:
        lines.append(f"  edge-types: [{','.join(schema.edge_types)}]")
    if schema.scope_levels:
        lines.append(f"  scope-levels: [{','.join(schema.scope_levels)}]")
    lines.append("::end")
    return "\n".join(lines)


def _index_text(doc: DocumentGraph) -> str:
    lines = ["::index"]
    for e in doc.index:
        kw = ",".join(e.keywords)
        lines.append(f"  {e.id} | {e.node_type} | {e.scope} | {e.confidence} | {kw}")
    lines.append("::end")
    return "\n".join(lines)


def _content_block_text(block: ContentBlock) -> str:
    open_line = f"::{block.kind}"
    if block.attrs:
        open_line += f"[{_attrs_text(block.attrs)}]"
    if block.body:
        return f"{open_line}\n{block.body}\n::end"
    return f"{open_line}\n::end"


def _assertion_text(spec: AssertionSpec) -> str:
    lines = ["::assertion"]
    if spec.trigger:
        lines.append(f"  trigger: after[{spec.trigger}]")
    for check in spec.checks:
        if check.kind == "file-exists":
            lines.append(f"  check: file_exists('{check.command_or_path}')")
        else:
            verb = "matches" if check.kind == "command-matches" else "contains"
            lines.append(
                f"  check: command('{check.command_or_path}') "
                f"{verb} '{check.pattern_or_literal}'"
            )
    if spec.on_pass:
        lines.append(f"  on-pass: {_edge_text(spec.on_pass)}")
    if spec.on_fail:
        lines.append(f"  on-fail: {_edge_text(spec.on_fail)}")
    if spec.on_fail_after_retries:
        lines.append(f"  on-fail-after-retries: {_edge_text(spec.on_fail_after_retries)}")
    if spec.max_retries:
        lines.append(f"  max-retries: {spec.max_retries}")
    if spec.timeout is not None:
        lines.append(f"  timeout: {spec.timeout:g}s")
    for key, value in spec.extras:
        lines.append(f"  {key}: {value}")
    lines.append("::end")
    return "\n".join(lines)


def _node_text(node: Node) -> str:
    attrs = [("id", node.id), ("type", node.node_type),
             ("confidence", str(node.confidence)), ("scope", node.scope)]
    if node.updated:
        attrs.append(("updated", node.updated))
    if node.entry:
        attrs.append(("entry", "true"))
    if node.skip_if_known:
        attrs.append(("skip-if-known", "true"))
    attrs.extend(node.extra_attrs)

    parts = [f"::node[{_attrs_text(attrs)}]"]
    for block in node.blocks:
        parts.append(_content_block_text(block))
    if node.edges:
        lines = ["::edges"]
        for edge in node.edges:
            lines.append(f"  {_edge_text(edge)}")
        lines.append("::end")
        parts.append("\n".join(lines))
    if node.assertion:
        parts.append(_assertion_text(node.assertion))
    if node.changelog is not None:
        lines = ["::changelog"]
        for entry in node.changelog:
            row = f"  {entry.date.isoformat()}|{entry.action}|node[{entry.target_node}]"
            if entry.note:
                row += f"|{entry.note}"
            lines.append(row)
        lines.append("::end")
        parts.append("\n".join(lines))
    parts.append(f"::end # {node.id}")
    return "\n".join(parts)


def _node_section(doc: DocumentGraph) -> str:
    return "\n\n".join(_node_text(n) for n in doc.nodes)


def write_canonical(doc: DocumentGraph) -> str:
    """Serialize to canonical ``.og`` text.

    A markdown-fallback document is lifted into native form: one node
    wrapping the original text in a ``full`` block.
    """
    parts = [_meta_text(doc.meta)]
    if doc.schema is not None:
        parts.append(_schema_text(doc.schema))
    if doc.index:
        parts.append(_index_text(doc))
    for block in doc.extras:
        parts.append(_content_block_text(block))
    if doc.nodes:
        parts.append(_node_section(doc))
    return "\n\n".join(parts) + "\n"


def compute_checksum(doc: DocumentGraph) -> str:
    """SHA-256 over the canonical node section (first ``::node`` line through
    the last node's terminator).  Meta, schema and index are excluded, so
    retitling or reversioning never invalidates content integrity."""
    if not doc.nodes:
        raise ValueError("checksum requires at least one node")
    blob = _node_section(doc).encode("utf-8")
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def is_verifiable_checksum(value: str) -> bool:
    """True when the stored checksum has the canonical sha256:<64 hex> form."""
    if not value.startswith("sha256:"):
        return False
    digest = value[len("sha256:"):]
    return len(digest) == 64 and all(c in "0123456789abcdef" for c in digest)


__all__ = [
    "write_canonical",
    "compute_checksum",
    "is_verifiable_checksum",
]

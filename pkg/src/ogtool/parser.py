"""Single-pass block parser for ``.og`` text, with Markdown fallback.

A file whose first non-blank line opens a ``::meta`` block is parsed as a
native ObjectGraph document.  Anything else is wrapped, byte-for-byte, into
a single-node fallback document so that every Markdown file is consumable
with zero errors.

Grammar sketch (the normative EBNF ships in ``docs/og-grammar.ebnf``):

* a block opens on ``::<tag>``, optionally followed by ``[k=v ...]`` where
  the bracketed attribute list may wrap onto continuation lines;
* a block closes on a line whose trimmed content is ``::end``, optionally
  followed by whitespace and a ``# comment``;
* inside content blocks every line is verbatim except the terminator --
  there is no escape syntax, so a content body cannot itself contain a
  bare ``::end`` line;
* node containers may hold content blocks, ``::edges``, ``::assertion``
  and ``::changelog``; content blocks do not nest.
"""

from __future__ import annotations

import re
from datetime import date
from decimal import Decimal, InvalidOperation
from typing import Optional

from .model import (
    ALL_SCOPE,
    CONTENT_KINDS,
    AssertionSpec,
    ChangelogEntry,
    Check,
    ContentBlock,
    Diagnostic,
    DocumentGraph,
    Edge,
    EdgeCondition,
    EdgeDirection,
    IndexEntry,
    Meta,
    Node,
    Schema,
    SourceKind,
    SourceSpan,
)


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, line_end: int = 0):
        self.line = line
        self.line_end = line_end or line
        super().__init__(f"line {line}: {message}" if line else message)


_END_RE = re.compile(r"::end(?:\s*|\s+#.*)$")
_META_OPEN_RE = re.compile(r"::meta\s*(?:#.*)?$")
_TAG_RE = re.compile(r"::([A-Za-z_][\w-]*)")
_KV_RE = re.compile(r"([A-Za-z_][\w-]*):\s*(.*)$")
# Meta lines may carry several pairs: a new key starts at the beginning of
# the (stripped) line or after a run of two or more spaces, and must be
# followed by ': ' -- which keeps values like "sha256:<hex>" intact.
_META_KEY_RE = re.compile(r"(?:^|(?<=\s\s))([A-Za-z_][\w-]*):(?:\s|$)")
_EDGE_HEAD_RE = re.compile(r"(->|<-|<>)\s*\[")
_ATTR_KEY_RE = re.compile(r"[A-Za-z_][\w-]*")
_TRIGGER_RE = re.compile(r"after\[([^\]]+)\]\s*$")
_CHECK_CMD_RE = re.compile(r"command\('([^']*)'\)\s+(matches|contains)\s+'([^']*)'\s*$")
_CHECK_FILE_RE = re.compile(r"file_exists\('([^']*)'\)\s*$")
_TIMEOUT_RE = re.compile(r"(\d+(?:\.\d+)?)s$")
_CHANGELOG_TARGET_RE = re.compile(r"node\[([^\]]+)\]\s*$")
_SLUG_STRIP_RE = re.compile(r"[^a-z0-9]+")

_BOOL_VALUES = {"true": True, "false": False}

_NODE_ATTR_KEYS = ("id", "type", "confidence", "scope", "updated", "entry", "skip-if-known")


def slugify(heading: str) -> str:
    """Collapse a heading into a node id: lowercase, with every maximal run
    of non-alphanumeric characters becoming one ``-``.  May return an empty
    string (e.g. for headings without ASCII alphanumerics); callers assign
    positional ``section-<n>`` ids in that case."""
    text = heading.lstrip("#").strip().lower()
    return _SLUG_STRIP_RE.sub("-", text).strip("-")


class SlugRegistry:
    """Per-document slug assignment with collision dedup (``-2``, ``-3`` ...)
    and ``section-<ordinal>`` fallback for empty slugs."""

    def __init__(self) -> None:
        self._counts: dict[str, int] = {}
        self._ordinal = 0

    def assign(self, heading: str) -> str:
        self._ordinal += 1
        base = slugify(heading) or f"section-{self._ordinal}"
        return self.claim(base)

    def claim(self, base: str) -> str:
        seen = self._counts.get(base, 0)
        self._counts[base] = seen + 1
        if seen == 0:
            return base
        candidate = f"{base}-{seen + 1}"
        while candidate in self._counts:
            seen += 1
            self._counts[base] = seen + 1
            candidate = f"{base}-{seen + 1}"
        self._counts[candidate] = 1
        return candidate


class _Lines:
    """Line cursor over the source text with byte offsets for spans."""

    def __init__(self, text: str):
        self.text = text
        self.lines = text.split("\n")
        self.offsets = [0]
        for ln in self.lines[:-1]:
            self.offsets.append(self.offsets[-1] + len(ln) + 1)
        self.i = 0

    def eof(self) -> bool:
        return self.i >= len(self.lines)

    def peek(self) -> str:
        return self.lines[self.i]

    def take(self) -> str:
        line = self.lines[self.i]
        self.i += 1
        return line

    def span(self, start_line: int, end_line: int) -> SourceSpan:
        byte_end = self.offsets[end_line] + len(self.lines[end_line])
        return SourceSpan(self.offsets[start_line], byte_end, start_line + 1, end_line + 1)


def _is_end_line(line: str) -> bool:
    return bool(_END_RE.fullmatch(line.strip()))


def _scan_attrs(raw: str, line: int) -> list[tuple[str, str]]:
    """Parse ``k=v`` / ``k='quoted value'`` attribute text.  Barewords end at
    whitespace; single quotes delimit values with spaces; no escapes."""
    attrs: list[tuple[str, str]] = []
    pos = 0
    n = len(raw)
    while pos < n:
        if raw[pos].isspace():
            pos += 1
            continue
        m = _ATTR_KEY_RE.match(raw, pos)
        if not m:
            raise ParseError(f"malformed attribute near {raw[pos:pos + 12]!r}", line)
        key = m.group(0)
        pos = m.end()
        if pos >= n or raw[pos] != "=":
            raise ParseError(f"attribute {key!r} missing '=value'", line)
        pos += 1
        if pos < n and raw[pos] == "'":
            close = raw.find("'", pos + 1)
            if close < 0:
                raise ParseError(f"unterminated quoted value for {key!r}", line)
            value = raw[pos + 1 : close]
            pos = close + 1
        else:
            end = pos
            while end < n and not raw[end].isspace():
                end += 1
            value = raw[pos:end]
            if not value:
                raise ParseError(f"attribute {key!r} has empty value", line)
            pos = end
        attrs.append((key, value))
    return attrs


def _find_bracket_close(raw: str, start: int) -> int:
    """Index of the ``]`` closing the bracket at raw[start-1], honouring
    single-quoted values; -1 when the bracket does not close on this text."""
    pos = start
    in_quote = False
    while pos < len(raw):
        ch = raw[pos]
        if ch == "'":
            in_quote = not in_quote
        elif ch == "]" and not in_quote:
            return pos
        pos += 1
    return -1


def _parse_condition(value: str, line: int) -> EdgeCondition:
    parts = value.split(None, 2)
    if len(parts) != 3 or parts[0] != "query" or parts[1] != "contains":
        raise ParseError(f"unsupported edge condition {value!r}", line)
    return EdgeCondition(subject="query", predicate="contains", argument=parts[2])


def _parse_edge_expr(expr: str, line: int) -> Edge:
    """Parse a single edge expression: ``(->|<-|<>)[:label k=v ...] target``."""
    stripped = expr.strip()
    m = _EDGE_HEAD_RE.match(stripped)
    if not m:
        raise ParseError(f"malformed edge line {stripped!r}", line)
    direction = EdgeDirection(m.group(1))
    close = _find_bracket_close(stripped, m.end())
    if close < 0:
        raise ParseError("edge label bracket never closes", line)
    inner = stripped[m.end() : close].strip()
    if not inner.startswith(":"):
        raise ParseError(f"edge label must begin with ':' in {stripped!r}", line)
    label_end = 1
    while label_end < len(inner) and not inner[label_end].isspace():
        label_end += 1
    label = inner[:label_end]
    attr_pairs = _scan_attrs(inner[label_end:], line)
    condition = None
    kept: list[tuple[str, str]] = []
    for key, value in attr_pairs:
        if key == "condition":
            condition = _parse_condition(value, line)
        else:
            kept.append((key, value))
    target = stripped[close + 1 :].strip()
    if target and len(target.split()) != 1:
        raise ParseError(f"malformed edge target {target!r}", line)
    return Edge(
        direction=direction,
        label=label,
        target=target,
        condition=condition,
        attrs=tuple(kept),
        span=SourceSpan(0, 0, line, line),
    )


def _parse_edges_block(cur: _Lines, open_line: int) -> tuple[list[Edge], int]:
    edges: list[Edge] = []
    pending: Optional[Edge] = None
    while True:
        if cur.eof():
            raise ParseError("unterminated ::edges block", open_line + 1)
        line_no = cur.i
        line = cur.take()
        stripped = line.strip()
        if _is_end_line(line):
            if pending is not None:
                raise ParseError("edge is missing its target", pending.span.line_start)
            return edges, line_no
        if not stripped or stripped.startswith("#"):
            continue
        if pending is not None:
            if len(stripped.split()) != 1:
                raise ParseError(f"malformed edge target {stripped!r}", line_no + 1)
            edges.append(
                Edge(
                    direction=pending.direction,
                    label=pending.label,
                    target=stripped,
                    condition=pending.condition,
                    attrs=pending.attrs,
                    span=SourceSpan(0, 0, pending.span.line_start, line_no + 1),
                )
            )
            pending = None
            continue
        edge = _parse_edge_expr(stripped, line_no + 1)
        if edge.target:
            edges.append(edge)
        else:
            pending = edge  # target wraps onto the next line


def parse_assertion_body(
    body: str,
    base_line: int = 0,
    warnings: Optional[list[Diagnostic]] = None,
) -> AssertionSpec:
    """Parse the key-value body of an ``::assertion`` block.

    Repeated ``check:`` lines accumulate in order; values may wrap onto
    continuation lines.  ``timeout`` accepts seconds-suffixed durations only.
    Unknown keys are preserved opaquely and reported as warnings.
    """
    entries: list[tuple[str, str, int]] = []  # (key, value, line)
    for offset, raw in enumerate(body.split("\n")):
        stripped = raw.strip()
        if not stripped:
            continue
        m = _KV_RE.match(stripped)
        if m:
            entries.append((m.group(1), m.group(2).strip(), base_line + offset))
        elif entries:
            key, value, ln = entries[-1]
            entries[-1] = (key, (value + " " + stripped).strip(), ln)
        else:
            raise ParseError(f"malformed assertion line {stripped!r}", base_line + offset)

    trigger = ""
    checks: list[Check] = []
    on_pass = on_fail = on_fail_after = None
    max_retries: Optional[int] = None
    timeout: Optional[float] = None
    extras: list[tuple[str, str]] = []

    for key, value, line in entries:
        if key == "trigger":
            m = _TRIGGER_RE.fullmatch(value)
            if not m:
                raise ParseError(f"malformed trigger {value!r}", line)
            trigger = m.group(1)
        elif key == "check":
            m = _CHECK_CMD_RE.fullmatch(value)
            if m:
                kind = "command-matches" if m.group(2) == "matches" else "command-contains"
                if kind == "command-matches":
                    try:
                        re.compile(m.group(3))
                    except re.error as exc:
                        raise ParseError(f"invalid check pattern: {exc}", line) from exc
                checks.append(Check(kind, m.group(1), m.group(3)))
                continue
            m = _CHECK_FILE_RE.fullmatch(value)
            if m:
                checks.append(Check("file-exists", m.group(1)))
                continue
            raise ParseError(f"malformed check expression {value!r}", line)
        elif key in ("on-pass", "on-fail", "on-fail-after-retries"):
            edge = _parse_edge_expr(value, line)
            if not edge.target:
                raise ParseError(f"routing edge for {key!r} is missing its target", line)
            if key == "on-pass":
                on_pass = edge
            elif key == "on-fail":
                on_fail = edge
            else:
                on_fail_after = edge
        elif key == "max-retries":
            try:
                max_retries = int(value)
            except ValueError:
                raise ParseError(f"non-integer retry limit {value!r}", line) from None
        elif key == "timeout":
            m = _TIMEOUT_RE.fullmatch(value)
            if not m:
                raise ParseError(f"unsupported timeout {value!r} (seconds only, e.g. 30s)", line)
            timeout = float(m.group(1))
        else:
            extras.append((key, value))
            if warnings is not None:
                warnings.append(
                    Diagnostic("OG006", "warning", f"unknown assertion key {key!r}", line, line)
                )

    limit_attr = on_fail.attr("limit") if on_fail else None
    effective = 0
    if limit_attr is not None:
        try:
            effective = int(limit_attr)
        except ValueError:
            raise ParseError(f"non-integer retry limit {limit_attr!r}", base_line) from None
        if max_retries is not None and max_retries != effective and warnings is not None:
            warnings.append(
                Diagnostic(
                    "OG009",
                    "warning",
                    f"retry limit {effective} on the on-fail edge disagrees with "
                    f"max-retries {max_retries}; the edge limit wins",
                    base_line,
                    base_line,
                )
            )
    elif max_retries is not None:
        effective = max_retries
        if on_fail and on_fail.label == ":retry" and warnings is not None:
            warnings.append(
                Diagnostic(
                    "OG009",
                    "warning",
                    "on-fail :retry edge should carry an explicit limit attribute",
                    base_line,
                    base_line,
                )
            )
    elif on_fail and on_fail.label == ":retry" and warnings is not None:
        warnings.append(
            Diagnostic(
                "OG009",
                "warning",
                "on-fail :retry edge has no finite limit; retries default to 0",
                base_line,
                base_line,
            )
        )
    if effective < 0:
        raise ParseError(f"retry limit must be >= 0, got {effective}", base_line)

    return AssertionSpec(
        trigger=trigger,
        checks=tuple(checks),
        on_pass=on_pass,
        on_fail=on_fail,
        on_fail_after_retries=on_fail_after,
        max_retries=effective,
        timeout=timeout,
        extras=tuple(extras),
    )


def _parse_changelog_rows(body: str, base_line: int) -> tuple[ChangelogEntry, ...]:
    entries: list[ChangelogEntry] = []
    for offset, raw in enumerate(body.split("\n")):
        stripped = raw.strip()
        line = base_line + offset
        if not stripped or stripped.startswith("#"):
            continue
        cells = [c.strip() for c in stripped.split("|", 3)]
        if len(cells) < 3:
            raise ParseError(f"malformed changelog row {stripped!r}", line)
        try:
            when = date.fromisoformat(cells[0])
        except ValueError:
            raise ParseError(f"bad changelog date {cells[0]!r}", line) from None
        action = cells[1]
        if action not in ("added", "updated", "deprecated"):
            raise ParseError(f"unknown changelog action {action!r}", line)
        m = _CHANGELOG_TARGET_RE.fullmatch(cells[2])
        if not m:
            raise ParseError(f"malformed changelog target {cells[2]!r}", line)
        note = cells[3] if len(cells) == 4 and cells[3] else None
        entries.append(ChangelogEntry(when, action, m.group(1), note))
    return tuple(entries)


def _read_block_open(cur: _Lines) -> tuple[str, list[tuple[str, str]], int]:
    """Consume a ``::tag`` opening, joining wrapped ``[...]`` attribute text
    across lines.  Returns (tag, attrs, opening line index)."""
    start = cur.i
    line = cur.take()
    stripped = line.strip()
    m = _TAG_RE.match(stripped)
    if not m:
        raise ParseError(f"expected a ::block opening, got {stripped!r}", start + 1)
    tag = m.group(1)
    rest = stripped[m.end() :]
    if not rest.strip():
        return tag, [], start
    if not rest.startswith("["):
        raise ParseError(f"unexpected text after ::{tag}", start + 1)
    attr_text = rest[1:]
    close = _find_bracket_close(attr_text, 0)
    while close < 0:
        if cur.eof():
            raise ParseError(f"attribute list of ::{tag} never closes", start + 1)
        attr_text += " " + cur.take().strip()
        close = _find_bracket_close(attr_text, 0)
    trailing = attr_text[close + 1 :].strip()
    if trailing:
        raise ParseError(f"unexpected text after ::{tag}[...] attributes", start + 1)
    attrs = _scan_attrs(attr_text[:close], start + 1)
    return tag, attrs, start


def _read_verbatim_body(cur: _Lines, tag: str, open_line: int) -> tuple[str, int]:
    """Collect raw lines until the terminator.  Returns (body, end line index)."""
    body_lines: list[str] = []
    while True:
        if cur.eof():
            raise ParseError(f"unterminated ::{tag} block", open_line + 1)
        line_no = cur.i
        line = cur.take()
        if _is_end_line(line):
            return "\n".join(body_lines), line_no
        body_lines.append(line)


def _parse_meta(body: str, base_line: int, warnings: list[Diagnostic]) -> Meta:
    known = {"title": "", "version": "", "updated": "", "domain": "", "scope": ALL_SCOPE}
    checksum: Optional[str] = None
    extra: list[tuple[str, str]] = []
    seen: set[str] = set()
    for offset, raw in enumerate(body.split("\n")):
        stripped = raw.strip()
        line = base_line + offset
        if not stripped or stripped.startswith("#"):
            continue
        keys = list(_META_KEY_RE.finditer(stripped))
        if not keys:
            raise ParseError(f"malformed meta line {stripped!r}", line)
        for j, m in enumerate(keys):
            key = m.group(1)
            value_end = keys[j + 1].start() if j + 1 < len(keys) else len(stripped)
            value = stripped[m.end() : value_end].strip()
            if key in seen:
                warnings.append(
                    Diagnostic(
                        "OG007", "warning", f"duplicate meta key {key!r}; last wins", line, line
                    )
                )
            seen.add(key)
            if key in known:
                known[key] = value
            elif key == "checksum":
                checksum = value
            else:
                extra = [(k, v) for k, v in extra if k != key]
                extra.append((key, value))
    return Meta(
        title=known["title"],
        version=known["version"],
        updated=known["updated"],
        domain=known["domain"],
        scope=known["scope"],
        checksum=checksum,
        extra=tuple(extra),
    )


def _parse_bracket_list(value: str, line: int) -> tuple[str, ...]:
    stripped = value.strip()
    if not (stripped.startswith("[") and stripped.endswith("]")):
        raise ParseError(f"expected a [comma,list], got {stripped!r}", line)
    items = [item.strip() for item in stripped[1:-1].split(",")]
    return tuple(item for item in items if item)


def _parse_schema(body: str, base_line: int) -> Schema:
    # Bracketed lists may wrap onto continuation lines; fold first.
    logical: list[tuple[str, str, int]] = []
    for offset, raw in enumerate(body.split("\n")):
        stripped = raw.strip()
        line = base_line + offset
        if not stripped or stripped.startswith("#"):
            continue
        m = _KV_RE.match(stripped)
        if m:
            logical.append((m.group(1), m.group(2).strip(), line))
        elif logical:
            key, value, ln = logical[-1]
            logical[-1] = (key, value + stripped, ln)
        else:
            raise ParseError(f"malformed schema line {stripped!r}", line)
    node_types: tuple[str, ...] = ()
    edge_types: tuple[str, ...] = ()
    scope_levels: tuple[str, ...] = ()
    for key, value, line in logical:
        if key == "node-types":
            node_types = _parse_bracket_list(value, line)
        elif key == "edge-types":
            edge_types = _parse_bracket_list(value, line)
        elif key == "scope-levels":
            scope_levels = _parse_bracket_list(value, line)
        else:
            raise ParseError(f"unknown schema key {key!r}", line)
    return Schema(node_types=node_types, edge_types=edge_types, scope_levels=scope_levels)


def _parse_index(body: str, base_line: int) -> tuple[IndexEntry, ...]:
    entries: list[IndexEntry] = []
    for offset, raw in enumerate(body.split("\n")):
        stripped = raw.strip()
        line = base_line + offset
        if not stripped or stripped.startswith("#"):
            continue
        cells = [c.strip() for c in stripped.split("|")]
        if len(cells) != 5:
            raise ParseError(
                f"index row needs 5 pipe-separated columns, got {len(cells)}", line
            )
        entry_id, node_type, scope, conf_text, kw_text = cells
        if not entry_id:
            raise ParseError("index row has an empty id", line)
        try:
            confidence = Decimal(conf_text)
        except InvalidOperation:
            raise ParseError(f"bad confidence {conf_text!r}", line) from None
        keywords = tuple(k.strip().lower() for k in kw_text.split(",") if k.strip())
        entries.append(
            IndexEntry(
                id=entry_id,
                node_type=node_type,
                scope=scope,
                confidence=confidence,
                keywords=keywords,
                span=SourceSpan(0, 0, line, line),
            )
        )
    return tuple(entries)


def _node_from_attrs(
    attrs: list[tuple[str, str]],
    line: int,
) -> dict:
    fields: dict = {
        "id": "",
        "node_type": "concept",
        "confidence": Decimal("1.0"),
        "scope": ALL_SCOPE,
        "updated": None,
        "entry": False,
        "skip_if_known": False,
        "extra_attrs": [],
    }
    for key, value in attrs:
        if key == "id":
            fields["id"] = value
        elif key == "type":
            fields["node_type"] = value
        elif key == "confidence":
            try:
                fields["confidence"] = Decimal(value)
            except InvalidOperation:
                raise ParseError(f"bad confidence {value!r}", line) from None
        elif key == "scope":
            fields["scope"] = value
        elif key == "updated":
            fields["updated"] = value
        elif key in ("entry", "skip-if-known"):
            flag = _BOOL_VALUES.get(value.lower())
            if flag is None:
                raise ParseError(f"attribute {key!r} must be true or false", line)
            fields["entry" if key == "entry" else "skip_if_known"] = flag
        else:
            fields["extra_attrs"].append((key, value))
    if not fields["id"]:
        raise ParseError("node is missing its id attribute", line)
    return fields


def _parse_node(cur: _Lines, attrs: list[tuple[str, str]], open_line: int,
                warnings: list[Diagnostic]) -> Node:
    fields = _node_from_attrs(attrs, open_line + 1)
    blocks: list[ContentBlock] = []
    edges: list[Edge] = []
    assertion: Optional[AssertionSpec] = None
    changelog: Optional[tuple[ChangelogEntry, ...]] = None

    while True:
        if cur.eof():
            raise ParseError("unterminated ::node block", open_line + 1)
        stripped = cur.peek().strip()
        if _is_end_line(cur.peek()):
            end_line = cur.i
            cur.take()
            return Node(
                id=fields["id"],
                node_type=fields["node_type"],
                confidence=fields["confidence"],
                scope=fields["scope"],
                updated=fields["updated"],
                entry=fields["entry"],
                skip_if_known=fields["skip_if_known"],
                blocks=tuple(blocks),
                edges=tuple(edges),
                assertion=assertion,
                changelog=changelog,
                extra_attrs=tuple(fields["extra_attrs"]),
                span=cur.span(open_line, end_line),
            )
        if not stripped:
            cur.take()
            continue
        if not stripped.startswith("::"):
            raise ParseError(f"unexpected content inside node: {stripped!r}", cur.i + 1)
        tag, sub_attrs, tag_line = _read_block_open(cur)
        if tag == "edges":
            edges, _ = _parse_edges_block(cur, tag_line)
            continue
        if tag == "assertion":
            body, end_line = _read_verbatim_body(cur, tag, tag_line)
            assertion = parse_assertion_body(body, tag_line + 2, warnings)
            continue
        if tag == "changelog":
            body, end_line = _read_verbatim_body(cur, tag, tag_line)
            changelog = _parse_changelog_rows(body, tag_line + 2)
            continue
        body, end_line = _read_verbatim_body(cur, tag, tag_line)
        if tag not in CONTENT_KINDS:
            warnings.append(
                Diagnostic(
                    "OG006",
                    "warning",
                    f"unknown block tag ::{tag} preserved opaquely",
                    tag_line + 1,
                    end_line + 1,
                )
            )
        blocks.append(
            ContentBlock(
                kind=tag,
                body=body,
                attrs=tuple(sub_attrs),
                span=cur.span(tag_line, end_line),
            )
        )


def _markdown_fallback(text: str) -> DocumentGraph:
    lines = text.count("\n") + 1
    span = SourceSpan(0, len(text), 1, lines)
    node = Node(
        id="document",
        node_type="concept",
        scope=ALL_SCOPE,
        blocks=(ContentBlock(kind="full", body=text, span=span),),
        span=span,
    )
    return DocumentGraph(
        meta=Meta(),
        schema=None,
        index=(),
        nodes=(node,),
        source_kind=SourceKind.MARKDOWN_FALLBACK,
    )


def parse(text: str) -> DocumentGraph:
    """Parse ``.og`` text into a DocumentGraph.

    Inputs that do not open with a ``::meta`` block fall back to a
    single-node document holding the whole input in one ``full`` block;
    fallback parsing never fails.
    """
    first = next((ln for ln in text.split("\n") if ln.strip()), None)
    if first is None or not _META_OPEN_RE.fullmatch(first.strip()):
        return _markdown_fallback(text)

    cur = _Lines(text)
    warnings: list[Diagnostic] = []
    meta: Optional[Meta] = None
    schema: Optional[Schema] = None
    index: tuple[IndexEntry, ...] = ()
    nodes: list[Node] = []
    extras: list[ContentBlock] = []
    seen_index = False

    while not cur.eof():
        stripped = cur.peek().strip()
        if not stripped:
            cur.take()
            continue
        if _is_end_line(cur.peek()):
            raise ParseError("::end without an open block", cur.i + 1)
        if not stripped.startswith("::"):
            raise ParseError(f"unexpected content outside blocks: {stripped!r}", cur.i + 1)
        tag, attrs, tag_line = _read_block_open(cur)
        if tag == "node":
            nodes.append(_parse_node(cur, attrs, tag_line, warnings))
            continue
        body, end_line = _read_verbatim_body(cur, tag, tag_line)
        if tag == "meta":
            if meta is not None:
                raise ParseError("duplicate ::meta block", tag_line + 1)
            meta = _parse_meta(body, tag_line + 2, warnings)
        elif tag == "schema":
            schema = _parse_schema(body, tag_line + 2)
        elif tag == "index":
            if seen_index:
                raise ParseError("duplicate ::index block", tag_line + 1)
            index = _parse_index(body, tag_line + 2)
            seen_index = True
        else:
            warnings.append(
                Diagnostic(
                    "OG006",
                    "warning",
                    f"unknown top-level block ::{tag} preserved opaquely",
                    tag_line + 1,
                    end_line + 1,
                )
            )
            extras.append(
                ContentBlock(
                    kind=tag, body=body, attrs=tuple(attrs), span=cur.span(tag_line, end_line)
                )
            )

    assert meta is not None  # guaranteed by the ::meta gate above
    return DocumentGraph(
        meta=meta,
        schema=schema,
        index=index,
        nodes=tuple(nodes),
        source_kind=SourceKind.NATIVE,
        extras=tuple(extras),
        parse_warnings=tuple(warnings),
    )

"""Line-delimited JSON protocol server exposing the query primitives.

One JSON object per line on stdin, one response per line on stdout.
Requests: ``{"id": <int>, "method": <name>, "params": {...}}``; methods are
``search_index``, ``resolve_context``, ``delta_since`` and ``validate``.
Error codes: 1 malformed request, 2 unknown node (also covers role-denied
ids, which are deliberately indistinguishable), 4 bad params.

Sessions are in-memory per process, keyed by ``session_id``, optionally
persisted as JSON under a session directory.  A malformed request never
terminates the loop or corrupts session state.
"""

from __future__ import annotations

import json
import os
from typing import IO, Optional

from .model import DocumentGraph
from .query import (
    DeltaError,
    NoChangelogError,
    QueryConfig,
    QuerySession,
    UnknownNodeError,
    delta_since,
    resolve_context,
    search_index,
)
from .validation import validate

ERR_PARSE = 1
ERR_UNKNOWN_NODE = 2
#: Reserved: role-denied ids answer with ERR_UNKNOWN_NODE on the wire, so a
#: caller cannot distinguish withheld content from absent content.
ERR_ROLE_DENIED = 3
ERR_BAD_PARAMS = 4

SCHEMA_VERSION = 1


class ProtocolServer:
    def __init__(
        self,
        documents: dict[str, DocumentGraph],
        session_dir: Optional[str] = None,
    ):
        self.documents = documents
        self.session_dir = session_dir
        self.sessions: dict[str, QuerySession] = {}

    # -- helpers -----------------------------------------------------------

    def _doc(self, params: dict) -> DocumentGraph:
        name = params.get("file")
        if not isinstance(name, str):
            raise _BadParams("missing 'file' parameter")
        doc = self.documents.get(name)
        if doc is None:
            doc = self.documents.get(os.path.basename(name))
        if doc is None:
            raise _BadParams(f"file {name!r} is not mounted")
        return doc

    def _session(self, session_id: str, role: str) -> QuerySession:
        session = self.sessions.get(session_id)
        if session is None and self.session_dir:
            path = os.path.join(self.session_dir, f"{session_id}.json")
            if os.path.exists(path):
                with open(path, encoding="utf-8") as fh:
                    session = QuerySession.from_json(fh.read())
        if session is None:
            session = QuerySession(role=role)
        if session.role != role:
            raise _BadParams(
                f"session {session_id!r} belongs to role {session.role!r}"
            )
        self.sessions[session_id] = session
        return session

    def _persist(self, session_id: str, session: QuerySession) -> None:
        if not self.session_dir:
            return
        os.makedirs(self.session_dir, exist_ok=True)
        path = os.path.join(self.session_dir, f"{session_id}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(session.to_json())

    # -- methods -----------------------------------------------------------

    def handle(self, request: dict) -> dict:
        req_id = request.get("id")
        method = request.get("method")
        params = request.get("params") or {}
        if not isinstance(params, dict):
            return _error(req_id, ERR_BAD_PARAMS, "params must be an object")
        try:
            if method == "search_index":
                return _result(req_id, self._search(params))
            if method == "resolve_context":
                return _result(req_id, self._resolve(params))
            if method == "delta_since":
                return _result(req_id, self._delta(params))
            if method == "validate":
                return _result(req_id, self._validate(params))
            return _error(req_id, ERR_BAD_PARAMS, f"unknown method {method!r}")
        except _BadParams as exc:
            return _error(req_id, ERR_BAD_PARAMS, str(exc))
        except UnknownNodeError as exc:
            return _error(req_id, ERR_UNKNOWN_NODE, str(exc))
        except (NoChangelogError, DeltaError) as exc:
            return _error(req_id, ERR_BAD_PARAMS, str(exc))

    def _search(self, params: dict) -> dict:
        doc = self._doc(params)
        query = params.get("query", "")
        role = params.get("role", "all")
        config = _config_from(params)
        return search_index(doc, query, role=role, config=config).to_dict()

    def _resolve(self, params: dict) -> dict:
        doc = self._doc(params)
        ids = params.get("ids")
        if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
            raise _BadParams("'ids' must be a list of node id strings")
        role = params.get("role", "all")
        session_id = str(params.get("session_id", "default"))
        session = self._session(session_id, role)
        config = _config_from(params)
        payload = resolve_context(
            doc, ids, session, config=config, task=params.get("task", "")
        )
        self._persist(session_id, session)
        return payload.to_dict()

    def _delta(self, params: dict) -> dict:
        doc = self._doc(params)
        last_seen = params.get("last_seen")
        if not isinstance(last_seen, str):
            raise _BadParams("missing 'last_seen' parameter")
        entries, stale = delta_since(doc, last_seen)
        return {
            "entries": [
                {
                    "date": e.date.isoformat(),
                    "action": e.action,
                    "target_node": e.target_node,
                    "note": e.note,
                }
                for e in entries
            ],
            "stale_ids": stale,
            "deprecated_ids": [
                e.target_node for e in entries if e.action == "deprecated"
            ],
        }

    def _validate(self, params: dict) -> dict:
        doc = self._doc(params)
        strictness = "strict" if params.get("strict") else "lenient"
        diags = validate(doc, strictness)
        return {
            "diagnostics": [
                {
                    "rule": d.rule,
                    "severity": d.severity,
                    "message": d.message,
                    "line": d.line_start,
                }
                for d in diags
            ],
            "error_count": sum(1 for d in diags if d.severity == "error"),
        }

    # -- loop ---------------------------------------------------------------

    def serve(self, stdin: IO[str], stdout: IO[str]) -> None:
        """Process requests until EOF.  Malformed lines answer with an
        id-null parse error and the loop continues."""
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
                if not isinstance(request, dict):
                    raise ValueError("request must be a JSON object")
            except ValueError as exc:
                response = _error(None, ERR_PARSE, f"malformed request: {exc}")
            else:
                response = self.handle(request)
            stdout.write(json.dumps(response) + "\n")
            stdout.flush()


class _BadParams(ValueError):
    pass


def _config_from(params: dict) -> QueryConfig:
    kwargs = {}
    if "theta" in params:
        kwargs["confidence_threshold"] = float(params["theta"])
    if "depth" in params:
        kwargs["requires_depth_limit"] = int(params["depth"])
    if "mode" in params:
        kwargs["mode"] = str(params["mode"])
    if "role" in params:
        kwargs["role"] = str(params["role"])
    return QueryConfig(**kwargs)


def _result(req_id, payload: dict) -> dict:
    return {"id": req_id, "schema_version": SCHEMA_VERSION, "result": payload}


def _error(req_id, code: int, message: str) -> dict:
    return {
        "id": req_id,
        "schema_version": SCHEMA_VERSION,
        "error": {"code": code, "message": message},
    }

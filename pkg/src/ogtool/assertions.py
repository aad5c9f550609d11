"""Assertion execution: check evaluation against a pluggable executor,
retry accounting, and routing.

Documents embed shell commands, so nothing here runs a real process unless
the caller explicitly constructs an enabled LiveExecutor; tests and CI use
FixtureExecutor replays.
"""

from __future__ import annotations

import json
import os
import re
import shlex
import subprocess
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .model import AssertionSpec, Check


class RoutingError(Exception):
    """An assertion finished in a verdict that has no declared route."""

    def __init__(self, missing_key: str):
        self.missing_key = missing_key
        super().__init__(f"assertion has no {missing_key} route for its outcome")


@dataclass(frozen=True)
class CheckResult:
    check: Check
    passed: bool
    observed: str
    duration: float = 0.0


@dataclass(frozen=True)
class AssertionOutcome:
    verdict: str  # proceed | retried-then-proceed | escalate | timeout
    next_node: Optional[str]
    attempts: int
    per_check: tuple[CheckResult, ...]


CheckExecutor = Callable[[Check], CheckResult]


def match_check(check: Check, observed) -> bool:
    """Decide a single check against its observation.

    command-matches: regular-expression search anywhere in the output;
    command-contains: literal substring; file-exists: boolean flag.
    """
    if check.kind == "command-matches":
        return re.search(check.pattern_or_literal or "", str(observed)) is not None
    if check.kind == "command-contains":
        return (check.pattern_or_literal or "") in str(observed)
    if check.kind == "file-exists":
        return bool(observed)
    raise ValueError(f"unknown check kind {check.kind!r}")


class FixtureExecutor:
    """Replays recorded command outputs and a virtual file listing.

    Fixture shape: ``{"commands": {"<cmd>": {"stdout": ..., "exit_code": ...,
    "duration": ...}}, "files": ["path", ...]}``.  A command may also map to a
    list of such entries, consumed one per invocation (for flaky sequences).
    """

    def __init__(
        self,
        commands: Optional[Mapping[str, object]] = None,
        files: Optional[Sequence[str]] = None,
    ):
        self._commands = dict(commands or {})
        self._files = set(files or ())
        self._cursor: dict[str, int] = {}

    @classmethod
    def from_file(cls, path: str) -> "FixtureExecutor":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(commands=data.get("commands", {}), files=data.get("files", ()))

    def _lookup(self, command: str) -> Optional[dict]:
        entry = self._commands.get(command)
        if entry is None:
            return None
        if isinstance(entry, list):
            idx = min(self._cursor.get(command, 0), len(entry) - 1)
            self._cursor[command] = idx + 1
            return entry[idx]
        return entry

    def __call__(self, check: Check) -> CheckResult:
        if check.kind == "file-exists":
            exists = check.command_or_path in self._files
            return CheckResult(check, exists, observed=str(exists))
        entry = self._lookup(check.command_or_path)
        if entry is None:
            return CheckResult(
                check, False, observed=f"no fixture for command {check.command_or_path!r}"
            )
        stdout = str(entry.get("stdout", ""))
        duration = float(entry.get("duration", 0.0))
        return CheckResult(check, match_check(check, stdout), stdout, duration)


class LiveExecutor:
    """Spawns real commands and inspects the real filesystem.

    Disabled unless constructed with ``enabled=True``; commands are split by
    shlex with no shell interpolation.
    """

    def __init__(self, enabled: bool = False, timeout: float = 60.0):
        self.enabled = enabled
        self.timeout = timeout

    def __call__(self, check: Check) -> CheckResult:
        if not self.enabled:
            raise RuntimeError("LiveExecutor is disabled; construct with enabled=True")
        start = time.monotonic()
        if check.kind == "file-exists":
            exists = os.path.exists(check.command_or_path)
            return CheckResult(check, exists, str(exists), time.monotonic() - start)
        try:
            proc = subprocess.run(
                shlex.split(check.command_or_path),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
            observed = proc.stdout + proc.stderr
        except (OSError, subprocess.SubprocessError) as exc:
            return CheckResult(
                check, False, f"executor error: {exc}", time.monotonic() - start
            )
        return CheckResult(
            check, match_check(check, observed), observed, time.monotonic() - start
        )


def run_assertion(
    spec: AssertionSpec,
    executor: CheckExecutor,
    rerun_trigger: Optional[Callable[[], None]] = None,
) -> AssertionOutcome:
    """Evaluate a spec's checks, retrying the triggering step on failure.

    All checks run in order on every attempt; a failing attempt invokes
    ``rerun_trigger`` and re-evaluates, up to the retry limit.  The timeout
    is a total budget across attempts, measured as the sum of the durations
    the executor reports.  An executor that cannot run a command must report
    a failed check, not raise; raised exceptions are converted regardless.
    """
    limit = spec.max_retries
    budget = spec.timeout
    elapsed = 0.0
    attempts = 0
    history: list[CheckResult] = []

    def escalate_target() -> str:
        route = spec.on_fail_after_retries or spec.on_fail
        if route is None:
            raise RoutingError("on-fail-after-retries")
        return route.target

    while True:
        attempts += 1
        all_passed = True
        for check in spec.checks:
            try:
                result = executor(check)
            except Exception as exc:  # executor failure is a failed check
                result = CheckResult(check, False, f"executor error: {exc}")
            history.append(result)
            elapsed += result.duration
            if budget is not None and elapsed > budget:
                next_node = None
                if spec.on_fail_after_retries or spec.on_fail:
                    next_node = (spec.on_fail_after_retries or spec.on_fail).target
                return AssertionOutcome("timeout", next_node, attempts, tuple(history))
            if not result.passed:
                all_passed = False
        if all_passed:
            if spec.on_pass is None:
                raise RoutingError("on-pass")
            verdict = "proceed" if attempts == 1 else "retried-then-proceed"
            return AssertionOutcome(verdict, spec.on_pass.target, attempts, tuple(history))
        if attempts > limit:
            return AssertionOutcome("escalate", escalate_target(), attempts, tuple(history))
        if rerun_trigger is not None:
            rerun_trigger()

"""Token accounting: heuristic tokenizer, analytic cost formulas, and the
multi-turn compounding simulator.

All headline numbers (per-query cost, savings ratio, session savings,
delta-check cost) are analytic in the model constants, so swapping the
tokenizer never changes them; the tokenizer only feeds measured estimates
for real documents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

Tokenizer = Callable[[str], int]

#: Tokens to read a changelog node during a delta check.
CHANGELOG_READ_TOKENS = 30

#: Mean utilisation observed across production agent executions; shown as a
#: reference point in reports, never asserted.
REFERENCE_MEAN_UTILISATION = 0.063


def estimate_tokens(text: str) -> int:
    """Heuristic token count: whitespace-separated words plus standalone
    punctuation runs, where a word of length L contributes ceil(L / 4).

    Pluggable: any ``str -> int`` callable may replace it where exact model
    tokenizers matter.
    """
    total = 0
    for chunk in text.split():
        if any(c.isalnum() for c in chunk):
            total += max(1, math.ceil(len(chunk) / 4))
        else:
            total += 1
    return total


@dataclass(frozen=True)
class CostParams:
    """Constants of the reading-cost model.

    ``n`` is the full document size in tokens, ``k`` the number of index
    entries, ``m`` the count of nodes read at dense level and ``p <= m`` the
    subset read in full.  ``c_index`` overrides the derived index cost
    (``c_meta + c_entry * k``) when given.
    """

    n: int = 1800
    k: int = 10
    m: int = 2
    p: int = 1
    c_dense: int = 12
    c_full: int = 180
    c_meta: int = 30
    c_entry: int = 6
    c_index: Optional[int] = None
    dense_worst: int = 15
    h0: int = 0
    turns: int = 5
    response_tokens: int = 0
    index_tokens: int = 150
    theta: float = 0.80
    alpha_session: float = 0.3
    mu: float = 2.0
    q: int = 1

    def __post_init__(self) -> None:
        for name in ("n", "k", "m", "p", "c_dense", "c_full", "c_meta", "c_entry",
                     "dense_worst", "h0", "turns", "response_tokens", "index_tokens"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (self.p <= self.m <= self.k):
            raise ValueError(f"need p <= m <= k, got p={self.p} m={self.m} k={self.k}")

    @property
    def index_cost(self) -> int:
        if self.c_index is not None:
            return self.c_index
        return self.c_meta + self.c_entry * self.k


def utilisation(section_tokens: Sequence[int], relevant: set[int]) -> float:
    """Fraction of document tokens that belong to task-relevant sections."""
    total = sum(section_tokens)
    if total <= 0:
        raise ValueError("utilisation needs a non-empty document")
    for i in relevant:
        if not 0 <= i < len(section_tokens):
            raise ValueError(f"relevant index {i} out of range")
    return sum(section_tokens[i] for i in relevant) / total


def og_query_cost(params: CostParams, variant: str = "pdm") -> int:
    """Per-query reading cost under progressive disclosure.

    ``pdm``:      index_cost + m * c_dense + p * c_full
    ``appendix``: (c_meta + c_entry * k) + m * dense_worst + p * c_full
                  (worst-case dense blocks, derived index cost)

    The two agree exactly when c_index is the derived value and
    c_dense == dense_worst.
    """
    if variant == "pdm":
        return params.index_cost + params.m * params.c_dense + params.p * params.c_full
    if variant == "appendix":
        base = params.c_meta + params.c_entry * params.k
        return base + params.m * params.dense_worst + params.p * params.c_full
    raise ValueError(f"unknown cost variant {variant!r}")


def savings(og_cost: int, n: int) -> float:
    """1 - og_cost / n.  May be negative for tiny documents with large
    indexes; reported honestly, never clamped."""
    if n <= 0:
        raise ValueError("baseline document size must be positive")
    return 1.0 - og_cost / n


def session_savings(alpha: float, k: int, turns: int, c_full: int) -> int:
    """Tokens saved by at-most-once delivery: alpha * k * (turns - 1) * c_full
    for a fraction ``alpha`` of skip-flagged nodes over ``k`` distinct nodes."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be within [0, 1]")
    if turns < 1:
        raise ValueError("turns must be >= 1")
    return round(alpha * k * (turns - 1) * c_full)


@dataclass(frozen=True)
class DeltaCheckCost:
    estimate: int
    full_cost: int

    @property
    def profitable(self) -> bool:
        return self.estimate <= self.full_cost


def delta_check_cost(mu: float, c_full: int, n: int) -> DeltaCheckCost:
    """Cost of an update check via the changelog node: ceil(mu) full reads
    plus the changelog read itself, compared against re-reading all n tokens."""
    if mu < 0:
        raise ValueError("update rate must be non-negative")
    estimate = math.ceil(mu) * c_full + CHANGELOG_READ_TOKENS
    return DeltaCheckCost(estimate=estimate, full_cost=n)


@dataclass(frozen=True)
class TurnCost:
    turn: int
    transmitted: int
    cumulative: int


STRATEGIES = ("markdown-inject", "og-arch-a", "og-arch-b")


def simulate_compounding(
    strategy: str,
    params: CostParams,
    per_turn_reads: Sequence[int],
    per_turn_payloads: Optional[Sequence[int]] = None,
) -> list[TurnCost]:
    """Per-turn cumulative token series for a multi-turn agent loop.

    markdown-inject
        Stateless retransmission: every turn sends the whole accumulated
        history plus ``reads * n`` fresh document tokens; the response is
        appended to history.  Super-linear by construction.
    og-arch-a
        The index (``index_tokens``) is injected once at session start;
        turns send history plus resolved payloads only.  Mildly compounding.
    og-arch-b
        Router and executor histories are disjoint: each turn costs the
        router call (``index_tokens``) plus the resolved payload, with no
        carried history.  Near-linear, bounded by payload variance.

    ``per_turn_payloads`` overrides the derived per-read payload size
    (m * c_dense + p * c_full) for the two og strategies.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not per_turn_reads:
        raise ValueError("need at least one turn")

    def payload(turn_idx: int) -> int:
        if per_turn_payloads is not None:
            return per_turn_payloads[turn_idx]
        reads = per_turn_reads[turn_idx]
        return reads * (params.m * params.c_dense + params.p * params.c_full)

    series: list[TurnCost] = []
    cumulative = 0
    if strategy == "markdown-inject":
        history = params.h0
        for t, reads in enumerate(per_turn_reads):
            transmitted = history + reads * params.n
            cumulative += transmitted
            series.append(TurnCost(t + 1, transmitted, cumulative))
            history = transmitted + params.response_tokens
    elif strategy == "og-arch-a":
        history = params.h0 + params.index_tokens
        for t in range(len(per_turn_reads)):
            transmitted = history + payload(t)
            cumulative += transmitted
            series.append(TurnCost(t + 1, transmitted, cumulative))
            history = transmitted + params.response_tokens
    else:  # og-arch-b
        for t in range(len(per_turn_reads)):
            transmitted = params.index_tokens + payload(t)
            cumulative += transmitted
            series.append(TurnCost(t + 1, transmitted, cumulative))
    return series


def compound_closed_form(turns: int, h0: int, reads: int, n: int, t_read: int = 1) -> int:
    """Closed-form total for ``reads`` document injections of ``n`` tokens
    retransmitted from turn ``t_read`` onward: T*h0 + reads*n*(T - t_read + 1).

    The closed form assumes a single read time shared by all reads; the
    simulator instead sums per-read contributions, so the two disagree for
    reads spread across turns.
    """
    return turns * h0 + reads * n * (turns - t_read + 1)


# ---------------------------------------------------------------------------
# Reference five-turn scenario, calibrated against the published compounding
# series.  The source plots cumulative points without disclosing the history
# seed or read/response sizes; the constants below are back-solved so the
# simulator's mechanics reproduce every published point within 2%:
#
#   markdown  per-turn growth 3720 = document (1800) + response (1920)
#   og-arch-b router 150/turn plus the payload schedule below
#
# An exact two-turn back-solve (growth 3800) overshoots the published
# turn-5 point by 2.2%; 3720 is the minimax-fit growth, worst error 1.5%.
# ---------------------------------------------------------------------------

REFERENCE_TURNS = 5
REFERENCE_MARKDOWN_PARAMS = CostParams(n=1800, h0=0, response_tokens=1920)
REFERENCE_ARCH_A_PARAMS = CostParams(n=1800, h0=0, response_tokens=30, index_tokens=150)
REFERENCE_ARCH_B_PARAMS = CostParams(n=1800, h0=0, index_tokens=150)
REFERENCE_READS = (1, 1, 1, 1, 1)
REFERENCE_ARCH_A_PAYLOADS = (60, 80, 80, 80, 80)
REFERENCE_ARCH_B_PAYLOADS = (0, 80, 110, 140, 180)


def reference_series(strategy: str) -> list[TurnCost]:
    """Five-turn series for the calibrated reference scenario."""
    if strategy == "markdown-inject":
        return simulate_compounding(strategy, REFERENCE_MARKDOWN_PARAMS, REFERENCE_READS)
    if strategy == "og-arch-a":
        return simulate_compounding(
            strategy, REFERENCE_ARCH_A_PARAMS, REFERENCE_READS, REFERENCE_ARCH_A_PAYLOADS
        )
    if strategy == "og-arch-b":
        return simulate_compounding(
            strategy, REFERENCE_ARCH_B_PARAMS, REFERENCE_READS, REFERENCE_ARCH_B_PAYLOADS
        )
    raise ValueError(f"unknown strategy {strategy!r}")

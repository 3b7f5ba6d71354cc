"""Adapter conformance checks.

One suite runs against any adapter, in-process or behind the wire
protocol, so an out-of-process sidecar proves protocol compatibility by
passing exactly the checks the reference adapters pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from ..corpus import ScaledHistory, Session, Turn, estimate_tokens
from .base import EmptyIndex, MemoryAdapter, RetrievalState
from .wire import RETRIEVE_RESPONSE_SCHEMA, SCHEMA_VERSION, units_to_wire, validate_payload


def fixture_sessions() -> dict[str, Session]:
    """A small deterministic history: 4 sessions, ~30 chunks worth of text."""
    texts = {
        "conf-a": "alpha beta gamma " * 120,
        "conf-b": "delta epsilon zeta eta " * 90,
        "conf-c": "alpha delta theta iota kappa " * 70,
        "conf-d": "lambda mu nu xi omicron pi rho " * 60,
    }
    sessions = {}
    for sid, text in sorted(texts.items()):
        turns = (Turn("user", text.strip()),)
        sessions[sid] = Session(sid, turns, estimate_tokens(text), "distractor")
    return sessions


def fixture_history(session_ids: tuple[str, ...] | None = None) -> ScaledHistory:
    ids = session_ids or tuple(sorted(fixture_sessions()))
    return ScaledHistory(query_id="conf-q", level_id="s0", session_ids=ids, seed=0)


@dataclass
class ConformanceReport:
    adapter_id: str
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def record(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, ok, detail))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    @property
    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, ok, detail in self.checks if not ok]

    def describe(self) -> str:
        lines = [f"conformance for {self.adapter_id}:"]
        for name, ok, detail in self.checks:
            mark = "ok " if ok else "FAIL"
            lines.append(f"  [{mark}] {name}" + (f" ({detail})" if detail and not ok else ""))
        return "\n".join(lines)


def run_conformance(
    adapter: MemoryAdapter,
    *,
    sessions: Mapping[str, Session] | None = None,
    history: ScaledHistory | None = None,
    check_determinism: bool = True,
    check_reset: bool = True,
) -> ConformanceReport:
    """Exercise the adapter contract end to end.

    Checks: indexing is uncounted and reports q0; retrieval returns
    exactly min(top_k, store) schema-valid units with contiguous unique
    ranks and a truthful counted flag; truncation on small top_k;
    determinism of repeated identical calls; reset empties the store.
    """
    sessions = sessions or fixture_sessions()
    history = history or fixture_history(tuple(sorted(sessions)))
    report = ConformanceReport(adapter.adapter_id)
    query = "alpha delta"
    top_k = adapter.descriptor.top_k

    index = adapter.index_history(history, sessions)
    report.record("index-uncounted-q0", index.q0_tokens >= 0 and index.n_units >= 0,
                  f"n_units={index.n_units} q0={index.q0_tokens}")

    response = adapter.retrieve(index, query, top_k=top_k, state=RetrievalState())
    expected_n = min(top_k, index.n_units)
    report.record(
        "unit-count-parity",
        len(response.units) == expected_n,
        f"got {len(response.units)}, want {expected_n}",
    )

    ranks = [u.rank for u in response.units]
    report.record(
        "ranks-contiguous",
        ranks == list(range(1, len(ranks) + 1)),
        f"ranks={ranks[:16]}",
    )

    counted_expected = adapter.is_counted("retrieve")
    report.record(
        "counted-flag",
        response.counted == counted_expected,
        f"counted={response.counted}, want {counted_expected}",
    )

    wire_form = {
        "schema_version": SCHEMA_VERSION,
        "adapter_id": response.adapter_id,
        "counted": response.counted,
        "units": units_to_wire(response.units),
    }
    try:
        validate_payload(wire_form, RETRIEVE_RESPONSE_SCHEMA, side="response")
        report.record("schema-valid", True)
    except Exception as exc:
        report.record("schema-valid", False, str(exc))

    small = adapter.retrieve(index, query, top_k=2, state=RetrievalState())
    report.record("truncation", len(small.units) == min(2, index.n_units),
                  f"got {len(small.units)}")

    if check_determinism:
        again = adapter.retrieve(index, query, top_k=top_k, state=RetrievalState())
        report.record(
            "determinism",
            again.unit_ids == response.unit_ids,
            "repeated identical call returned different units",
        )

    if check_reset:
        adapter.reset()
        try:
            fresh_index = adapter.index_history(
                ScaledHistory(history.query_id, history.level_id, (), history.seed), sessions
            )
            try:
                adapter.retrieve(fresh_index, query, top_k=top_k)
                report.record("reset-empty", False, "retrieve on empty store did not raise")
            except EmptyIndex:
                report.record("reset-empty", True)
        except EmptyIndex:
            # Adapters may refuse to index an empty history outright.
            report.record("reset-empty", True)

    return report

"""Adapter contract: descriptors, reference adapters, parity, wire protocol."""

from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memscale.corpus import ScaledHistory, Session, Turn, estimate_tokens
from memscale.memiface import (
    AdapterUnavailable,
    Chunk,
    EmptyIndex,
    EvidenceUnit,
    FlatReferenceAdapter,
    HierarchicalReferenceAdapter,
    IndexingFailure,
    MemoryAdapterDescriptor,
    ParityConfig,
    ParityLedger,
    PlanarReferenceAdapter,
    RetrievalResponse,
    RetrievalState,
    WireAdapter,
    WireProtocolError,
    chunk_session,
    check_schema_version,
    enforce_parity,
    fixture_history,
    fixture_sessions,
    make_reference_adapter,
    rank_chunks,
    run_conformance,
    tokenize,
    units_from_wire,
    units_to_wire,
)
from memscale.memiface.wire import SCHEMA_VERSION


def session_of(sid: str, text: str) -> Session:
    return Session(sid, (Turn("user", text),), estimate_tokens(text), "distractor")


def history_of(*sids: str) -> ScaledHistory:
    return ScaledHistory(query_id="q", level_id="s0", session_ids=tuple(sids), seed=0)


@pytest.fixture
def toy():
    sessions = {
        "sess-a": session_of("sess-a", "the kettle is red and lives in the kitchen"),
        "sess-b": session_of("sess-b", "rain again today nothing else happened"),
        "sess-c": session_of("sess-c", "bought a blue kettle stand yesterday"),
    }
    return sessions, history_of("sess-a", "sess-b", "sess-c")


# ---------------------------------------------------------------------------
# Descriptors and value types

def test_descriptor_defaults():
    d = MemoryAdapterDescriptor("x", "flat")
    assert d.counted_methods == frozenset({"retrieve"})
    assert d.top_k == 12


@pytest.mark.parametrize(
    "kwargs",
    [
        {"adapter_id": "x", "family": "cubic"},
        {"adapter_id": "x", "family": "flat", "counted_methods": frozenset()},
        {"adapter_id": "x", "family": "flat", "top_k": 0},
    ],
)
def test_descriptor_rejects(kwargs):
    with pytest.raises(ValueError):
        MemoryAdapterDescriptor(**kwargs)


def test_unit_rank_positive():
    with pytest.raises(ValueError):
        EvidenceUnit("u", "s", "t", 0, 1.0)


def test_response_rejects_duplicate_ranks():
    units = (
        EvidenceUnit("u1", "s", "t", 1, 2.0),
        EvidenceUnit("u2", "s", "t", 1, 1.0),
    )
    with pytest.raises(ValueError):
        RetrievalResponse(units, True, "a")


# ---------------------------------------------------------------------------
# Chunking and ranking

def test_chunk_session_splits_and_ids():
    session = session_of("long", " ".join(f"w{i}" for i in range(600)))
    chunks = chunk_session(session)
    assert [c.unit_id for c in chunks] == ["long#0000", "long#0001", "long#0002"]
    assert len(chunks[0].text.split()) == 256
    assert len(chunks[-1].text.split()) == 600 - 512
    assert all(c.session_id == "long" for c in chunks)


def test_chunk_session_empty():
    session = Session("e", (Turn("user", " "),), 0, "distractor")
    assert chunk_session(session) == []


def test_rank_chunks_tie_break():
    mk = lambda uid, sid: Chunk(uid, sid, "t", frozenset())
    scored = [
        (1.0, mk("b#0001", "b")),
        (1.0, mk("a#0002", "a")),
        (2.0, mk("c#0000", "c")),
        (1.0, mk("a#0001", "a")),
    ]
    units = rank_chunks(scored, top_k=10)
    assert [u.unit_id for u in units] == ["c#0000", "a#0001", "a#0002", "b#0001"]
    assert [u.rank for u in units] == [1, 2, 3, 4]


def test_tokenize_keeps_digits_and_apostrophes():
    assert tokenize("It's 42, isn't it? IT'S") == ["it's", "42", "isn't", "it", "it's"]


# ---------------------------------------------------------------------------
# Reference adapters

FAMILIES = ["flat", "planar", "hierarchical"]


@pytest.mark.parametrize("family", FAMILIES)
def test_reference_adapter_finds_evidence(family, toy):
    sessions, history = toy
    adapter = make_reference_adapter(family)
    index = adapter.index_history(history, sessions)
    response = adapter.retrieve(index, "where does the red kettle live", state=RetrievalState())
    assert response.units[0].source_session_id == "sess-a"
    assert response.counted is True
    assert response.adapter_id == adapter.adapter_id


@pytest.mark.parametrize("family", FAMILIES)
def test_indexing_charges_q0(family, toy):
    sessions, history = toy
    adapter = make_reference_adapter(family)
    index = adapter.index_history(history, sessions)
    base = sum(estimate_tokens(sessions[sid].text) for sid in history.session_ids)
    assert index.n_units == 3
    assert index.q0_tokens >= base


def test_hierarchical_q0_includes_summary_pass(toy):
    sessions, history = toy
    flat = FlatReferenceAdapter().index_history(history, sessions)
    hier = HierarchicalReferenceAdapter().index_history(history, sessions)
    assert hier.q0_tokens > flat.q0_tokens


@pytest.mark.parametrize("family", FAMILIES)
def test_empty_history_raises_on_retrieve(family, toy):
    sessions, _ = toy
    adapter = make_reference_adapter(family)
    index = adapter.index_history(history_of(), sessions)
    assert index.n_units == 0
    with pytest.raises(EmptyIndex):
        adapter.retrieve(index, "anything")


def test_unknown_session_in_history(toy):
    sessions, _ = toy
    with pytest.raises(IndexingFailure) as excinfo:
        FlatReferenceAdapter().index_history(history_of("sess-a", "ghost"), sessions)
    assert excinfo.value.adapter_id == "ref-flat"


def test_unknown_family():
    with pytest.raises(ValueError):
        make_reference_adapter("spherical")


def test_planar_accumulates_terms_across_calls(toy):
    sessions, history = toy
    adapter = PlanarReferenceAdapter()
    index = adapter.index_history(history, sessions)
    state = RetrievalState()
    adapter.retrieve(index, "kettle stand yesterday", top_k=1, state=state)
    second = adapter.retrieve(index, "kitchen", top_k=3, state=state)
    assert state.calls == 2
    assert state.accumulated_terms >= {"kettle", "stand", "kitchen"}
    # "kitchen" alone matches only sess-a; the accumulated union still
    # scores sess-c ahead on three overlapping terms.
    scores = {u.source_session_id: u.score for u in second.units}
    assert scores["sess-c"] > scores["sess-b"]
    fresh = adapter.retrieve(index, "kitchen", top_k=3, state=RetrievalState())
    fresh_scores = {u.source_session_id: u.score for u in fresh.units}
    assert fresh_scores["sess-c"] == 0.0


def test_planar_without_state_is_stateless(toy):
    sessions, history = toy
    adapter = PlanarReferenceAdapter()
    index = adapter.index_history(history, sessions)
    a = adapter.retrieve(index, "kettle")
    adapter.retrieve(index, "rain today")
    b = adapter.retrieve(index, "kettle")
    assert a.unit_ids == b.unit_ids


def test_hierarchical_backfill_keeps_unit_parity():
    # 6 sessions, one chunk each; selection keeps 2 sessions, so a
    # top_k=5 request must back-fill 3 units from outside the selection.
    sessions = {f"s{i}": session_of(f"s{i}", f"topic{i} filler words here") for i in range(6)}
    history = history_of(*sorted(sessions))
    adapter = HierarchicalReferenceAdapter(sessions_per_query=2)
    index = adapter.index_history(history, sessions)
    response = adapter.retrieve(index, "topic0 topic3", top_k=5)
    assert len(response.units) == 5
    assert [u.rank for u in response.units] == [1, 2, 3, 4, 5]
    leaders = {response.units[0].source_session_id, response.units[1].source_session_id}
    assert leaders == {"s0", "s3"}


@pytest.mark.parametrize("family", FAMILIES)
def test_truncation_to_store_size(family, toy):
    sessions, history = toy
    adapter = make_reference_adapter(family)
    index = adapter.index_history(history, sessions)
    response = adapter.retrieve(index, "kettle", top_k=50)
    assert len(response.units) == 3  # store holds 3 chunks


@settings(max_examples=30, deadline=None)
@given(
    texts=st.lists(
        st.text(alphabet="abcde ", min_size=1, max_size=40).filter(str.strip),
        min_size=1,
        max_size=5,
    ),
    query=st.text(alphabet="abcde ", min_size=1, max_size=20),
    family=st.sampled_from(FAMILIES),
    top_k=st.integers(min_value=1, max_value=8),
)
def test_retrieval_contract_property(texts, query, family, top_k):
    sessions = {f"p{i}": session_of(f"p{i}", text) for i, text in enumerate(texts)}
    history = history_of(*sorted(sessions))
    adapter = make_reference_adapter(family)
    index = adapter.index_history(history, sessions)
    response = adapter.retrieve(index, query, top_k=top_k, state=RetrievalState())
    assert len(response.units) == min(top_k, index.n_units)
    assert [u.rank for u in response.units] == list(range(1, len(response.units) + 1))
    ids = [u.unit_id for u in response.units]
    assert len(set(ids)) == len(ids)
    again = adapter.retrieve(index, query, top_k=top_k, state=RetrievalState())
    assert again.unit_ids == response.unit_ids


# ---------------------------------------------------------------------------
# Parity

def resp(adapter_id: str, n_units: int, counted: bool = True) -> RetrievalResponse:
    units = tuple(
        EvidenceUnit(f"{adapter_id}-u{i}", "s", "t", i + 1, 1.0) for i in range(n_units)
    )
    return RetrievalResponse(units, counted, adapter_id)


def test_parity_ok_on_equal_counts():
    verdict = enforce_parity({"a": [resp("a", 12), resp("a", 12)], "b": [resp("b", 12), resp("b", 12)]})
    assert verdict.ok
    assert verdict.describe() == "parity ok"


def test_parity_flags_unit_count_mismatch():
    verdict = enforce_parity({"a": [resp("a", 12)], "b": [resp("b", 7)]})
    assert not verdict.ok
    assert verdict.violations[0].kind == "unit-count"
    assert set(verdict.violations[0].adapter_ids) == {"a", "b"}


def test_parity_tolerates_store_truncation():
    verdict = enforce_parity(
        {"a": [resp("a", 12)], "b": [resp("b", 7)]},
        store_sizes={"a": 40, "b": 7},
    )
    assert verdict.ok
    # but a system returning fewer than its store holds is a violation
    verdict = enforce_parity(
        {"a": [resp("a", 12)], "b": [resp("b", 7)]},
        store_sizes={"a": 40, "b": 30},
    )
    assert not verdict.ok


def test_parity_ignores_extra_call_depth():
    verdict = enforce_parity({"a": [resp("a", 12)] * 5, "b": [resp("b", 12)] * 2})
    assert verdict.ok


def test_parity_ignores_uncounted_steps():
    group = {
        "a": [resp("a", 12)],
        "b": [resp("b", 3, counted=False), resp("b", 12)],
    }
    assert enforce_parity(group).ok


def test_parity_config_mismatch():
    verdict = enforce_parity(
        {"a": [resp("a", 12)], "b": [resp("b", 12)]},
        configs={"a": ParityConfig(top_k=12), "b": ParityConfig(top_k=6)},
    )
    assert not verdict.ok
    assert verdict.violations[0].kind == "config-mismatch"


def test_parity_ledger_groups_and_summary():
    ledger = ParityLedger()
    for level in ("s0", "s1"):
        ledger.record("q1", level, "a", resp("a", 12), store_size=40)
        ledger.record("q1", level, "b", resp("b", 12), store_size=40)
    ledger.record("q2", "s0", "a", resp("a", 12), store_size=40)
    ledger.record("q2", "s0", "b", resp("b", 9), store_size=40)
    summary = ledger.summary()
    assert summary == {"groups": 3, "violations": 1}
    verdicts = ledger.verdicts()
    assert not verdicts[("q2", "s0")].ok
    assert verdicts[("q1", "s0")].ok


# ---------------------------------------------------------------------------
# Wire protocol

def test_units_wire_round_trip():
    units = (
        EvidenceUnit("a#0000", "a", "some text", 1, 3.0),
        EvidenceUnit("b#0001", "b", "other", 2, 1.5),
    )
    wired = units_to_wire(units)
    assert wired[0] == {"id": "a#0000", "session": "a", "text": "some text", "rank": 1, "score": 3.0}
    assert units_from_wire(wired) == units


def test_schema_version_check():
    check_schema_version("1.0")
    check_schema_version("1.7")
    with pytest.raises(WireProtocolError):
        check_schema_version("2.0")


class MockSidecar:
    """In-memory wire peer backed by the flat reference adapter."""

    def __init__(self, adapter_id: str = "mock-side", counted: bool = True):
        self.adapter_id = adapter_id
        self.counted = counted
        self.inner = FlatReferenceAdapter()
        self.index = None
        self.requests: list[tuple[str, dict]] = []

    def handler(self, request: httpx.Request) -> httpx.Response:
        path = request.url.path
        if path == "/health":
            return httpx.Response(200, json={
                "schema_version": SCHEMA_VERSION, "adapter_id": self.adapter_id, "status": "ok",
            })
        payload = json.loads(request.content)
        self.requests.append((path, payload))
        if path == "/index":
            sessions = {}
            ids = []
            for raw in payload["history"]["sessions"]:
                turns = tuple(Turn(t["role"], t["text"]) for t in raw["turns"])
                text = "\n".join(t.text for t in turns)
                sessions[raw["session_id"]] = Session(
                    raw["session_id"], turns or (Turn("user", ""),), estimate_tokens(text), "distractor"
                )
                ids.append(raw["session_id"])
            history = ScaledHistory(
                payload["history"]["query_id"], payload["history"]["level_id"], tuple(ids), 0
            )
            self.index = self.inner.index_history(history, sessions)
            return httpx.Response(200, json={
                "schema_version": SCHEMA_VERSION,
                "adapter_id": self.adapter_id,
                "counted": False,
                "n_units": self.index.n_units,
                "q0_tokens": self.index.q0_tokens,
            })
        if path == "/retrieve":
            if self.index is None or self.index.n_units == 0:
                return httpx.Response(409, json={
                    "schema_version": SCHEMA_VERSION,
                    "error": {"code": "EMPTY_INDEX", "message": "nothing indexed"},
                })
            inner = self.inner.retrieve(self.index, payload["query"], top_k=payload["top_k"])
            return httpx.Response(200, json={
                "schema_version": SCHEMA_VERSION,
                "adapter_id": self.adapter_id,
                "counted": self.counted,
                "units": units_to_wire(inner.units),
            })
        if path == "/reset":
            self.index = None
            return httpx.Response(200, json={
                "schema_version": SCHEMA_VERSION, "adapter_id": self.adapter_id,
                "counted": False, "ok": True,
            })
        return httpx.Response(404, json={
            "schema_version": SCHEMA_VERSION,
            "error": {"code": "BAD_REQUEST", "message": f"no route {path}"},
        })


def wire_adapter(handler) -> WireAdapter:
    client = httpx.Client(transport=httpx.MockTransport(handler), base_url="http://sidecar")
    return WireAdapter("http://sidecar", client=client)


def test_wire_adapter_round_trip(toy):
    sessions, history = toy
    side = MockSidecar()
    adapter = wire_adapter(side.handler)
    index = adapter.index_history(history, sessions)
    assert index.n_units == 3
    state = RetrievalState()
    response = adapter.retrieve(index, "red kettle kitchen", top_k=2, state=state)
    assert len(response.units) == 2
    assert response.units[0].source_session_id == "sess-a"
    assert response.counted is True
    assert response.adapter_id == "mock-side"
    assert state.calls == 1
    assert side.requests[-1] == (
        "/retrieve",
        {"schema_version": "1.0", "query": "red kettle kitchen", "top_k": 2},
    )


def test_wire_adapter_empty_index_maps(toy):
    sessions, history = toy
    side = MockSidecar()
    adapter = wire_adapter(side.handler)
    index = adapter.index_history(history, sessions)
    adapter.reset()
    with pytest.raises(EmptyIndex):
        adapter.retrieve(index, "anything")


def test_wire_adapter_5xx_unavailable(toy):
    sessions, history = toy
    adapter = wire_adapter(lambda request: httpx.Response(503, json={}))
    with pytest.raises(AdapterUnavailable):
        adapter.index_history(history, sessions)


def test_wire_adapter_transport_error_unavailable(toy):
    sessions, history = toy

    def boom(request):
        raise httpx.ConnectError("refused", request=request)

    adapter = wire_adapter(boom)
    with pytest.raises(AdapterUnavailable):
        adapter.index_history(history, sessions)


def test_wire_adapter_rejects_invalid_payload(toy):
    sessions, history = toy
    adapter = wire_adapter(lambda request: httpx.Response(200, json={"schema_version": "1.0"}))
    with pytest.raises(WireProtocolError):
        adapter.index_history(history, sessions)


def test_wire_adapter_rejects_future_major(toy):
    sessions, history = toy
    body = {"schema_version": "2.0", "adapter_id": "x", "counted": False, "n_units": 1, "q0_tokens": 1}
    adapter = wire_adapter(lambda request: httpx.Response(200, json=body))
    with pytest.raises(WireProtocolError):
        adapter.index_history(history, sessions)


def test_wire_adapter_rejects_counted_indexing(toy):
    sessions, history = toy
    body = {"schema_version": "1.0", "adapter_id": "x", "counted": True, "n_units": 1, "q0_tokens": 1}
    adapter = wire_adapter(lambda request: httpx.Response(200, json=body))
    with pytest.raises(WireProtocolError, match="counted"):
        adapter.index_history(history, sessions)


def test_wire_adapter_health():
    side = MockSidecar()
    adapter = wire_adapter(side.handler)
    assert adapter.health()["status"] == "ok"


# ---------------------------------------------------------------------------
# Conformance

@pytest.mark.parametrize("family", FAMILIES)
def test_reference_adapters_conform(family):
    report = run_conformance(make_reference_adapter(family))
    assert report.ok, report.describe()
    names = [name for name, _, _ in report.checks]
    assert "unit-count-parity" in names and "reset-empty" in names


def test_wire_adapter_conforms():
    report = run_conformance(wire_adapter(MockSidecar().handler))
    assert report.ok, report.describe()


def test_conformance_catches_rank_gaps():
    class GappyRanks(FlatReferenceAdapter):
        def retrieve(self, index, query_text, top_k=None, state=None):
            inner = super().retrieve(index, query_text, top_k=top_k, state=state)
            shifted = tuple(
                EvidenceUnit(u.unit_id, u.source_session_id, u.text, u.rank * 2, u.score)
                for u in inner.units
            )
            return RetrievalResponse(shifted, inner.counted, inner.adapter_id)

    report = run_conformance(GappyRanks(), check_reset=False)
    assert not report.ok
    assert any("ranks-contiguous" in failure for failure in report.failures)


def test_conformance_catches_wrong_unit_count():
    class Stingy(FlatReferenceAdapter):
        def retrieve(self, index, query_text, top_k=None, state=None):
            k = top_k if top_k is not None else self.descriptor.top_k
            return super().retrieve(index, query_text, top_k=max(1, k - 6), state=state)

    report = run_conformance(Stingy(), check_reset=False)
    assert not report.ok
    assert any("unit-count-parity" in failure for failure in report.failures)


def test_fixture_history_covers_fixture_sessions():
    history = fixture_history()
    assert set(history.session_ids) == set(fixture_sessions())

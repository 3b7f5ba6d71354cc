"""The harness side drives every check here over real HTTP: the same
WireAdapter and conformance suite the in-process reference adapters
answer to."""

from __future__ import annotations

import socket

import httpx
import pytest

from memscale.corpus import ScaledHistory, Session, Turn, estimate_tokens
from memscale.memiface import (
    EmptyIndex,
    FlatReferenceAdapter,
    MemoryAdapterDescriptor,
    RetrievalState,
    WireAdapter,
    WireProtocolError,
    enforce_parity,
    run_conformance,
    units_to_wire,
)
from memscale.memiface.conformance import fixture_history, fixture_sessions

from memscale_sidecar import REGISTRY, BackendInitError, SidecarConfig, build_app
from memscale_sidecar.app import bind_socket
from memscale_sidecar.config import BindError

BACKENDS = sorted(REGISTRY)


def adapter_for(sidecar, top_k: int = 12) -> WireAdapter:
    spec = REGISTRY[sidecar.config.backend]
    descriptor = MemoryAdapterDescriptor(
        sidecar.config.adapter_id, spec.family, top_k=top_k
    )
    return WireAdapter(sidecar.base_url, descriptor)


def make_store(texts: dict[str, str]):
    sessions = {
        sid: Session(sid, (Turn("user", text),), estimate_tokens(text), "distractor")
        for sid, text in texts.items()
    }
    history = ScaledHistory("q-wire", "s0", tuple(sorted(sessions)), seed=0)
    return sessions, history


@pytest.mark.criterion("sidecar-wire-conformance")
def test_every_backend_passes_reference_conformance(sidecar_factory):
    for name in BACKENDS:
        sidecar = sidecar_factory(backend=name)
        report = run_conformance(adapter_for(sidecar))
        assert report.ok, f"{name}: {report.failures}"


def test_retrieve_returns_full_top_k_with_provenance(sidecar_factory):
    sessions, history = make_store(
        {f"big-{i}": f"topic{i} detail " * 350 for i in range(5)}  # 3 chunks each
    )
    sidecar = sidecar_factory(backend="tfidf")
    adapter = adapter_for(sidecar, top_k=12)
    index = adapter.index_history(history, sessions)
    assert index.n_units == 15

    response = adapter.retrieve(index, "topic2 detail", state=RetrievalState())
    assert len(response.units) == 12
    assert [u.rank for u in response.units] == list(range(1, 13))
    for unit in response.units:
        assert unit.source_session_id in sessions
        assert unit.unit_id.startswith(unit.source_session_id + "#")
        assert isinstance(unit.score, float)
    assert response.units[0].source_session_id == "big-2"


def test_reset_then_retrieve_yields_empty_index_body(sidecar_factory):
    sidecar = sidecar_factory(backend="graph")
    adapter = adapter_for(sidecar)
    index = adapter.index_history(fixture_history(), fixture_sessions())
    assert adapter.retrieve(index, "alpha delta").units
    adapter.reset()

    with pytest.raises(EmptyIndex):
        adapter.retrieve(index, "alpha delta")
    raw = httpx.post(
        f"{sidecar.base_url}/retrieve",
        json={"schema_version": "1.0", "query": "alpha delta", "top_k": 3},
    )
    assert raw.status_code == 409
    assert raw.json()["error"]["code"] == "EMPTY_INDEX"


def test_fresh_process_reports_no_index(sidecar_factory):
    sidecar = sidecar_factory(backend="tfidf")
    raw = httpx.post(
        f"{sidecar.base_url}/retrieve",
        json={"schema_version": "1.0", "query": "anything", "top_k": 3},
    )
    assert raw.status_code == 409
    assert raw.json()["error"]["code"] == "NO_INDEX"
    index = adapter_for(sidecar).index_history(fixture_history(), fixture_sessions())
    # a second client against the same URL shares the process-wide store
    WireAdapter(f"{sidecar.base_url}/").reset()
    with pytest.raises(EmptyIndex):
        adapter_for(sidecar).retrieve(index, "alpha")


def test_post_reset_retrieval_never_returns_old_units(sidecar_factory):
    sidecar = sidecar_factory(backend="lsa")
    adapter = adapter_for(sidecar)
    old_sessions, old_history = make_store({"old-a": "ancient archive entry " * 60})
    index = adapter.index_history(old_history, old_sessions)
    before = adapter.retrieve(index, "archive entry")
    assert {u.source_session_id for u in before.units} == {"old-a"}

    adapter.reset()
    new_sessions, new_history = make_store({"new-b": "fresh material entirely " * 60})
    index = adapter.index_history(new_history, new_sessions)
    after = adapter.retrieve(index, "archive entry")
    assert {u.source_session_id for u in after.units} == {"new-b"}
    assert not {u.unit_id for u in after.units} & {u.unit_id for u in before.units}


def test_malformed_requests_get_bad_request_bodies(sidecar_factory):
    sidecar = sidecar_factory()
    url = f"{sidecar.base_url}/retrieve"
    missing = httpx.post(url, json={"schema_version": "1.0"})
    assert missing.status_code == 400
    assert missing.json()["error"]["code"] == "BAD_REQUEST"

    future = httpx.post(url, json={"schema_version": "2.0", "query": "x", "top_k": 1})
    assert future.status_code == 400
    assert "2.0" in future.json()["error"]["message"]

    garbage = httpx.post(url, content=b"not json", headers={"content-type": "application/json"})
    assert garbage.status_code == 400

    bad_k = httpx.post(url, json={"schema_version": "1.0", "query": "x", "top_k": 0})
    assert bad_k.status_code == 400

    # the client maps non-empty-store 4xx codes to a protocol error
    with pytest.raises(WireProtocolError):
        adapter_for(sidecar).retrieve(
            None, "x", top_k=0  # index unused by the wire adapter
        )


def test_counted_flags_follow_config(sidecar_factory):
    default = sidecar_factory(backend="tfidf")
    adapter = adapter_for(default)
    index = adapter.index_history(fixture_history(), fixture_sessions())
    assert adapter.retrieve(index, "alpha").counted is True

    silent = sidecar_factory(backend="tfidf", counted_methods=())
    raw_index = httpx.post(
        f"{silent.base_url}/index",
        json={
            "schema_version": "1.0",
            "history": {"query_id": "q", "level_id": "s0", "sessions": [
                {"session_id": "a", "turns": [{"role": "user", "text": "hello world"}]},
            ]},
        },
    )
    assert raw_index.json()["counted"] is False
    raw = httpx.post(
        f"{silent.base_url}/retrieve",
        json={"schema_version": "1.0", "query": "hello", "top_k": 1},
    )
    assert raw.json()["counted"] is False

    # a sidecar that marks indexing as counted is refused by the client
    loud = sidecar_factory(backend="tfidf", counted_methods=("index", "retrieve"))
    with pytest.raises(WireProtocolError, match="counted"):
        adapter_for(loud).index_history(fixture_history(), fixture_sessions())


def test_health_endpoint(sidecar_factory):
    sidecar = sidecar_factory(backend="graph")
    body = adapter_for(sidecar).health()
    assert body == {
        "schema_version": "1.0",
        "adapter_id": "sidecar-graph",
        "status": "ok",
    }


def test_response_schema_matches_reference_adapter_shape(sidecar_factory):
    """Schema-diff oracle: identical key structure to an in-process
    reference adapter's wire form on the same store and query."""
    reference = FlatReferenceAdapter()
    ref_index = reference.index_history(fixture_history(), fixture_sessions())
    ref_response = reference.retrieve(ref_index, "alpha delta", top_k=12)
    ref_wire = {
        "schema_version": "1.0",
        "adapter_id": ref_response.adapter_id,
        "counted": ref_response.counted,
        "units": units_to_wire(ref_response.units),
    }

    sidecar = sidecar_factory(backend="tfidf")
    adapter_for(sidecar).index_history(fixture_history(), fixture_sessions())
    body = httpx.post(
        f"{sidecar.base_url}/retrieve",
        json={"schema_version": "1.0", "query": "alpha delta", "top_k": 12},
    ).json()

    assert set(body) == set(ref_wire)
    assert len(body["units"]) == len(ref_wire["units"])
    for got, want in zip(body["units"], ref_wire["units"]):
        assert set(got) == set(want)
        assert got["rank"] == want["rank"]


def test_unit_count_parity_with_reference_adapter(sidecar_factory):
    reference = FlatReferenceAdapter()
    ref_index = reference.index_history(fixture_history(), fixture_sessions())
    ref_response = reference.retrieve(ref_index, "alpha delta", top_k=12)

    sidecar = sidecar_factory(backend="graph")
    adapter = adapter_for(sidecar)
    wire_index = adapter.index_history(fixture_history(), fixture_sessions())
    wire_response = adapter.retrieve(wire_index, "alpha delta", top_k=12)

    verdict = enforce_parity(
        {"reference": [ref_response], "sidecar": [wire_response]},
        store_sizes={"reference": ref_index.n_units, "sidecar": wire_index.n_units},
    )
    assert verdict.ok, verdict.describe()


def test_unknown_backend_fails_at_startup():
    with pytest.raises(BackendInitError):
        build_app(SidecarConfig(backend="holographic"))


def test_busy_port_raises_bind_error():
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        with pytest.raises(BindError):
            bind_socket(SidecarConfig(backend="tfidf", bind_address=f"127.0.0.1:{port}"))
    finally:
        blocker.close()

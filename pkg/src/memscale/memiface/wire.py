"""Adapter wire protocol: JSON over HTTP for out-of-process systems.

Endpoints (all relative to the sidecar base URL):

    POST /index     {"schema_version", "history": {"query_id", "level_id",
                     "sessions": [{"session_id", "turns": [{"role", "text"}]}]}}
                    -> {"schema_version", "adapter_id", "counted": false,
                        "n_units", "q0_tokens"}
    POST /retrieve  {"schema_version", "query", "top_k"}
                    -> {"schema_version", "adapter_id", "counted",
                        "units": [{"id", "session", "text", "rank", "score"}]}
    POST /reset     {"schema_version"}
                    -> {"schema_version", "adapter_id", "counted": false,
                        "ok": true}
    GET  /health    -> {"schema_version", "adapter_id", "status": "ok"}

Every response echoes the adapter_id and a counted flag. Errors use
HTTP 4xx/5xx with body {"schema_version", "error": {"code", "message"}};
code EMPTY_INDEX maps to the EmptyIndex exception client-side, all
transport failures and 5xx map to AdapterUnavailable.
"""

from __future__ import annotations

import logging
from typing import Mapping

import httpx
import jsonschema

from ..corpus import ScaledHistory, Session
from ..errors import DataError
from .base import (
    AdapterUnavailable,
    EmptyIndex,
    EvidenceUnit,
    MemoryAdapter,
    MemoryAdapterDescriptor,
    MemoryIndex,
    RetrievalResponse,
    RetrievalState,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

ERROR_EMPTY_INDEX = "EMPTY_INDEX"
ERROR_NO_INDEX = "NO_INDEX"
ERROR_BAD_REQUEST = "BAD_REQUEST"
ERROR_BACKEND_INIT = "BACKEND_INIT"


class WireProtocolError(DataError):
    """The remote peer answered with a schema-invalid payload."""


_UNIT_SCHEMA = {
    "type": "object",
    "required": ["id", "session", "text", "rank", "score"],
    "properties": {
        "id": {"type": "string"},
        "session": {"type": "string"},
        "text": {"type": "string"},
        "rank": {"type": "integer", "minimum": 1},
        "score": {"type": "number"},
    },
    "additionalProperties": False,
}

INDEX_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "history"],
    "properties": {
        "schema_version": {"type": "string"},
        "history": {
            "type": "object",
            "required": ["query_id", "level_id", "sessions"],
            "properties": {
                "query_id": {"type": "string"},
                "level_id": {"type": "string"},
                "sessions": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["session_id", "turns"],
                        "properties": {
                            "session_id": {"type": "string"},
                            "turns": {
                                "type": "array",
                                "items": {
                                    "type": "object",
                                    "required": ["role", "text"],
                                    "properties": {
                                        "role": {"type": "string"},
                                        "text": {"type": "string"},
                                    },
                                },
                            },
                        },
                    },
                },
            },
        },
    },
}

INDEX_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "adapter_id", "counted", "n_units", "q0_tokens"],
    "properties": {
        "schema_version": {"type": "string"},
        "adapter_id": {"type": "string"},
        "counted": {"type": "boolean"},
        "n_units": {"type": "integer", "minimum": 0},
        "q0_tokens": {"type": "integer", "minimum": 0},
    },
}

RETRIEVE_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "query", "top_k"],
    "properties": {
        "schema_version": {"type": "string"},
        "query": {"type": "string"},
        "top_k": {"type": "integer", "minimum": 1},
    },
}

RETRIEVE_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "adapter_id", "counted", "units"],
    "properties": {
        "schema_version": {"type": "string"},
        "adapter_id": {"type": "string"},
        "counted": {"type": "boolean"},
        "units": {"type": "array", "items": _UNIT_SCHEMA},
    },
}

RESET_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "adapter_id", "counted", "ok"],
    "properties": {
        "schema_version": {"type": "string"},
        "adapter_id": {"type": "string"},
        "counted": {"type": "boolean"},
        "ok": {"type": "boolean"},
    },
}

ERROR_BODY_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "error"],
    "properties": {
        "schema_version": {"type": "string"},
        "error": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {
                "code": {"type": "string"},
                "message": {"type": "string"},
            },
        },
    },
}


def check_schema_version(version: str) -> None:
    """Reject payloads from an incompatible protocol major version."""
    major = str(version).split(".", 1)[0]
    if major != SCHEMA_VERSION.split(".", 1)[0]:
        raise WireProtocolError(f"unsupported wire schema version {version!r}")


def units_to_wire(units: tuple[EvidenceUnit, ...] | list[EvidenceUnit]) -> list[dict]:
    return [
        {
            "id": u.unit_id,
            "session": u.source_session_id,
            "text": u.text,
            "rank": u.rank,
            "score": u.score,
        }
        for u in units
    ]


def units_from_wire(raw_units: list[Mapping]) -> tuple[EvidenceUnit, ...]:
    return tuple(
        EvidenceUnit(
            unit_id=str(u["id"]),
            source_session_id=str(u["session"]),
            text=str(u["text"]),
            rank=int(u["rank"]),
            score=float(u["score"]),
        )
        for u in raw_units
    )


def history_to_wire(history: ScaledHistory, sessions: Mapping[str, Session]) -> dict:
    return {
        "query_id": history.query_id,
        "level_id": history.level_id,
        "sessions": [
            {
                "session_id": sid,
                "turns": [{"role": t.role, "text": t.text} for t in sessions[sid].turns],
            }
            for sid in history.session_ids
        ],
    }


def validate_payload(payload: Mapping, schema: Mapping, *, side: str) -> None:
    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as exc:
        raise WireProtocolError(f"invalid {side} payload: {exc.message}") from exc


class WireAdapter(MemoryAdapter):
    """Client-side adapter speaking the wire protocol to a sidecar.

    An injected httpx client (e.g. one with a MockTransport) replaces
    real network access in tests.
    """

    def __init__(
        self,
        base_url: str,
        descriptor: MemoryAdapterDescriptor | None = None,
        client: httpx.Client | None = None,
        timeout: float = 30.0,
    ):
        if descriptor is None:
            descriptor = MemoryAdapterDescriptor(f"wire:{base_url}", "flat")
        super().__init__(descriptor)
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _post(self, endpoint: str, payload: dict, response_schema: Mapping) -> dict:
        url = f"{self.base_url}/{endpoint}"
        try:
            response = self._client.post(url, json=payload)
        except httpx.HTTPError as exc:
            raise AdapterUnavailable(f"{url}: {exc!r}") from exc
        if response.status_code >= 500:
            raise AdapterUnavailable(f"{url}: HTTP {response.status_code}")
        try:
            body = response.json()
        except ValueError as exc:
            raise WireProtocolError(f"{url}: non-JSON response body") from exc
        if response.status_code >= 400:
            validate_payload(body, ERROR_BODY_SCHEMA, side="error")
            code = body["error"]["code"]
            message = body["error"]["message"]
            if code in (ERROR_EMPTY_INDEX, ERROR_NO_INDEX):
                raise EmptyIndex(f"[{self.adapter_id}] {message}")
            raise WireProtocolError(f"[{self.adapter_id}] {code}: {message}")
        validate_payload(body, response_schema, side="response")
        check_schema_version(body["schema_version"])
        return body

    def index_history(self, history: ScaledHistory, sessions: Mapping[str, Session]) -> MemoryIndex:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "history": history_to_wire(history, sessions),
        }
        body = self._post("index", payload, INDEX_RESPONSE_SCHEMA)
        if body["counted"]:
            raise WireProtocolError(f"[{self.adapter_id}] indexing reported as counted")
        return MemoryIndex(
            adapter_id=body["adapter_id"],
            query_id=history.query_id,
            level_id=history.level_id,
            n_units=body["n_units"],
            q0_tokens=body["q0_tokens"],
            payload=None,
        )

    def retrieve(
        self,
        index: MemoryIndex,
        query_text: str,
        top_k: int | None = None,
        state: RetrievalState | None = None,
    ) -> RetrievalResponse:
        k = top_k if top_k is not None else self.descriptor.top_k
        payload = {"schema_version": SCHEMA_VERSION, "query": query_text, "top_k": k}
        body = self._post("retrieve", payload, RETRIEVE_RESPONSE_SCHEMA)
        if state is not None:
            state.calls += 1
        return RetrievalResponse(
            units=units_from_wire(body["units"]),
            counted=bool(body["counted"]),
            adapter_id=str(body["adapter_id"]),
        )

    def reset(self) -> None:
        self._post("reset", {"schema_version": SCHEMA_VERSION}, RESET_RESPONSE_SCHEMA)

    def health(self) -> dict:
        url = f"{self.base_url}/health"
        try:
            response = self._client.get(url)
        except httpx.HTTPError as exc:
            raise AdapterUnavailable(f"{url}: {exc!r}") from exc
        if response.status_code != 200:
            raise AdapterUnavailable(f"{url}: HTTP {response.status_code}")
        return response.json()

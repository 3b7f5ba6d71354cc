"""Wire-protocol HTTP server.

Endpoints and payload shapes follow the harness adapter protocol:

    POST /index     {"schema_version", "history": {...}} -> counts
    POST /retrieve  {"schema_version", "query", "top_k"} -> units
    POST /reset     {"schema_version"}                   -> ok
    GET  /health                                         -> status

Errors are HTTP 4xx/5xx with {"schema_version", "error": {"code",
"message"}}. Codes EMPTY_INDEX and NO_INDEX tell the client the store
holds nothing to retrieve; BAD_REQUEST covers malformed payloads and
incompatible protocol versions. Backend work runs in a worker thread
under a process-wide lock, so indexing never overlaps retrieval.
"""

from __future__ import annotations

import logging
import socket
import threading

import jsonschema
import uvicorn
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .backends import REGISTRY, make_backend
from .config import BindError, SidecarConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

ERROR_EMPTY_INDEX = "EMPTY_INDEX"
ERROR_NO_INDEX = "NO_INDEX"
ERROR_BAD_REQUEST = "BAD_REQUEST"
ERROR_INTERNAL = "INTERNAL"

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

RETRIEVE_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "query", "top_k"],
    "properties": {
        "schema_version": {"type": "string"},
        "query": {"type": "string"},
        "top_k": {"type": "integer", "minimum": 1},
    },
}

RESET_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "properties": {"schema_version": {"type": "string"}},
}


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"schema_version": SCHEMA_VERSION, "error": {"code": code, "message": message}},
    )


def _bad_request(message: str) -> JSONResponse:
    return _error(400, ERROR_BAD_REQUEST, message)


async def _read_payload(request: Request, schema: dict):
    """Parse and validate a request body; returns (payload, error_response)."""
    try:
        payload = await request.json()
    except Exception:
        return None, _bad_request("request body is not valid JSON")
    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as exc:
        return None, _bad_request(f"invalid request payload: {exc.message}")
    major = str(payload["schema_version"]).split(".", 1)[0]
    if major != SCHEMA_VERSION.split(".", 1)[0]:
        return None, _bad_request(f"unsupported wire schema version {payload['schema_version']!r}")
    return payload, None


def build_app(config: SidecarConfig) -> FastAPI:
    """Construct the server for one backend; raises BackendInitError."""
    backend = make_backend(config.backend)
    spec = REGISTRY[config.backend]
    lock = threading.Lock()
    # fresh: nothing ever indexed; reset: store explicitly emptied
    state = {"phase": "fresh"}

    app = FastAPI(title=f"memscale sidecar [{config.backend}]", docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.backend = backend
    app.state.backend_spec = spec

    def counted(method: str) -> bool:
        return method in config.counted_methods

    def do_index(sessions: list[dict]) -> dict:
        with lock:
            n_units, q0_tokens = backend.index(sessions)
            state["phase"] = "ready"
        return {
            "schema_version": SCHEMA_VERSION,
            "adapter_id": config.adapter_id,
            "counted": counted("index"),
            "n_units": n_units,
            "q0_tokens": q0_tokens,
        }

    def do_retrieve(query: str, top_k: int):
        with lock:
            if state["phase"] == "fresh":
                return _error(409, ERROR_NO_INDEX, "no history has been indexed")
            if backend.n_units == 0:
                return _error(409, ERROR_EMPTY_INDEX, "the indexed store is empty")
            units = backend.retrieve(query, top_k)
        return {
            "schema_version": SCHEMA_VERSION,
            "adapter_id": config.adapter_id,
            "counted": counted("retrieve"),
            "units": units,
        }

    def do_reset() -> dict:
        with lock:
            backend.reset()
            state["phase"] = "reset"
        return {
            "schema_version": SCHEMA_VERSION,
            "adapter_id": config.adapter_id,
            "counted": False,
            "ok": True,
        }

    @app.post("/index")
    async def index(request: Request):
        payload, failure = await _read_payload(request, INDEX_REQUEST_SCHEMA)
        if failure is not None:
            return failure
        try:
            return await run_in_threadpool(do_index, payload["history"]["sessions"])
        except Exception as exc:
            logger.exception("indexing failed")
            return _error(500, ERROR_INTERNAL, f"indexing failed: {exc}")

    @app.post("/retrieve")
    async def retrieve(request: Request):
        payload, failure = await _read_payload(request, RETRIEVE_REQUEST_SCHEMA)
        if failure is not None:
            return failure
        try:
            return await run_in_threadpool(do_retrieve, payload["query"], payload["top_k"])
        except Exception as exc:
            logger.exception("retrieval failed")
            return _error(500, ERROR_INTERNAL, f"retrieval failed: {exc}")

    @app.post("/reset")
    async def reset(request: Request):
        _, failure = await _read_payload(request, RESET_REQUEST_SCHEMA)
        if failure is not None:
            return failure
        return await run_in_threadpool(do_reset)

    @app.get("/health")
    async def health():
        return {
            "schema_version": SCHEMA_VERSION,
            "adapter_id": config.adapter_id,
            "status": "ok",
        }

    return app


def bind_socket(config: SidecarConfig) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((config.host, config.port))
        sock.listen(128)
    except OSError as exc:
        sock.close()
        raise BindError(f"cannot bind {config.bind_address}: {exc}") from exc
    return sock


def serve(config: SidecarConfig, log_level: str = "info") -> None:
    """Run the sidecar until interrupted. Blocks the calling thread."""
    app = build_app(config)
    sock = bind_socket(config)
    logger.info("serving %s backend on %s", config.backend, config.bind_address)
    server = uvicorn.Server(uvicorn.Config(app, log_level=log_level))
    try:
        server.run(sockets=[sock])
    finally:
        sock.close()

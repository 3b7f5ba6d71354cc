"""Live-server fixtures; every wire test talks real HTTP to uvicorn."""

from __future__ import annotations

import socket
import threading
import time

import pytest
import uvicorn

from memscale_sidecar import SidecarConfig, build_app

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): label a test as one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        _ACCEPTANCE_RESULTS.append((marker.args[0], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name}")


class LiveSidecar:
    """One uvicorn server on an ephemeral loopback port."""

    def __init__(self, config: SidecarConfig):
        self.config = config
        self.app = build_app(config)
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(("127.0.0.1", 0))
        sock.listen(128)
        self.port = sock.getsockname()[1]
        self._server = uvicorn.Server(uvicorn.Config(self.app, log_level="warning"))
        self._thread = threading.Thread(
            target=self._server.run, kwargs={"sockets": [sock]}, daemon=True
        )
        self._thread.start()
        deadline = time.monotonic() + 15
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("sidecar server did not start in time")
            time.sleep(0.01)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=15)


@pytest.fixture
def sidecar_factory():
    """Start servers on demand; everything started is torn down after."""
    running: list[LiveSidecar] = []

    def start(**kwargs) -> LiveSidecar:
        kwargs.setdefault("backend", "tfidf")
        kwargs.setdefault("bind_address", "127.0.0.1:0")
        sidecar = LiveSidecar(SidecarConfig(**kwargs))
        running.append(sidecar)
        return sidecar

    yield start
    for sidecar in running:
        sidecar.stop()

import json
import threading
import time

import httpx
import pytest
import uvicorn

from turnwise.backend import BackendClient, BackendConfig
from turnwise.config import ServiceConfig
from turnwise.controller import SessionConfig
from turnwise.gateway import TERMINAL_EVENTS, create_app
from turnwise.testing.mock_backend import MockBackendServer


ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion verified by this test"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and report.when == "call":
        name = marker.args[0]
        status = "PASS" if report.passed else "FAIL"
        if ACCEPTANCE_RESULTS.get(name) != "FAIL":
            ACCEPTANCE_RESULTS[name] = status


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, status in ACCEPTANCE_RESULTS.items():
            terminalreporter.write_line(f"[{status}] {name}")


@pytest.fixture
def mock_server():
    """Factory: start a mock backend with the given rules, stop it after."""
    servers = []

    def start(rules, **kwargs):
        server = MockBackendServer(rules, **kwargs).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()


@pytest.fixture
def make_client():
    """Factory: a BackendClient against a base_url, closed after the test."""
    clients = []

    def build(base_url, **overrides):
        defaults = dict(model="mock-model", timeout_s=5.0, max_retries=2, backoff_base_s=0.01)
        defaults.update(overrides)
        client = BackendClient(BackendConfig(base_url=base_url, **defaults))
        clients.append(client)
        return client

    yield build
    for client in clients:
        client.close()


class GatewayHarness:
    """Real uvicorn server on an ephemeral port, run in a daemon thread."""

    def __init__(self, service_config: ServiceConfig):
        self.config = service_config
        self.app = create_app(service_config)
        self._server = uvicorn.Server(
            uvicorn.Config(self.app, host="127.0.0.1", port=0, log_level="warning")
        )
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.base_url = ""

    def start(self) -> "GatewayHarness":
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("gateway did not start within 10s")
            if not self._thread.is_alive():
                raise RuntimeError("gateway thread died during startup")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)


@pytest.fixture
def gateway(mock_server):
    """Factory: mock backend + gateway wired together, torn down after."""
    harnesses = []
    clients = []

    def start(rules, session=None, service=None, backend_base_url=None, **mock_kwargs):
        base_url = backend_base_url
        backend = None
        if base_url is None:
            backend = mock_server(rules, **mock_kwargs)
            base_url = backend.base_url
        svc = ServiceConfig(
            backend=BackendConfig(
                base_url=base_url,
                model="mock-model",
                timeout_s=5.0,
                max_retries=1,
                backoff_base_s=0.01,
            ),
            session=session or SessionConfig(max_turns=8),
            **(service or {}),
        )
        harness = GatewayHarness(svc).start()
        harnesses.append(harness)
        http = httpx.Client(base_url=harness.base_url, timeout=30.0)
        clients.append(http)
        return harness, http, backend

    yield start
    for http in clients:
        http.close()
    for harness in harnesses:
        harness.stop()


def read_sse(http: httpx.Client, url: str, headers=None, limit=None, until=None,
             timeout=30.0):
    """Collect SSE events from url until a terminal event, stream close,
    `limit` events, or an event named `until`. Returns {id, event, data} dicts."""
    events = []
    current = {}
    with http.stream("GET", url, headers=headers, timeout=timeout) as resp:
        assert resp.status_code == 200, resp.read().decode()
        for line in resp.iter_lines():
            if line == "":
                if current:
                    events.append(current)
                    name = current.get("event")
                    if name in TERMINAL_EVENTS or name == until:
                        break
                    if limit is not None and len(events) >= limit:
                        break
                current = {}
            elif line.startswith("id: "):
                current["id"] = int(line[len("id: "):])
            elif line.startswith("event: "):
                current["event"] = line[len("event: "):]
            elif line.startswith("data: "):
                current["data"] = json.loads(line[len("data: "):])
    return events


def wait_for(predicate, timeout=10.0, interval=0.02, message="condition"):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval)
    raise AssertionError(f"timed out waiting for {message}")

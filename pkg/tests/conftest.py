from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class MockChatServer:
    """Local chat-completions endpoint answering from a scripted queue.

    Each queued item is ``(status, text)``; success bodies are wrapped in the
    standard response envelope. A callable item receives the request JSON and
    returns ``(status, text)``. A ``bytes`` text is sent verbatim. When the queue is empty ``default`` is used.
    """

    def __init__(self):
        self.queue: list = []
        self.default = (200, "~[1]~")
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                outer.requests.append(body)
                outer.headers.append(dict(self.headers))
                item = outer.queue.pop(0) if outer.queue else outer.default
                status, text = item(body) if callable(item) else item
                if isinstance(text, bytes):
                    payload = text.decode()
                elif status == 200:
                    payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]})
                else:
                    payload = text
                data = payload.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_llm():
    srv = MockChatServer()
    yield srv
    srv.close()


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


class CriterionReport:
    def __init__(self, number: int):
        self.number = number
        self.done = False

    def __call__(self, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {self.number}: {detail}"
        ACCEPTANCE[self.number] = line
        self.done = True
        print(line)
        assert ok, line


@pytest.fixture
def criterion(request):
    """Reporter for ``test_criterion_<n>_...`` tests; a test that raises is reported as FAIL."""
    number = int(request.node.name.split("_")[2])
    report = CriterionReport(number)
    yield report
    if not report.done:
        ACCEPTANCE[number] = f"FAIL criterion {number}: {request.node.name} raised before reporting"


def pytest_runtest_makereport(item, call):
    if call.when == "call" and call.excinfo is not None and item.name.startswith("test_criterion_"):
        number = int(item.name.split("_")[2])
        if not ACCEPTANCE.get(number, "").startswith("FAIL"):
            ACCEPTANCE[number] = f"FAIL criterion {number}: {call.excinfo.typename}: {call.excinfo.value}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

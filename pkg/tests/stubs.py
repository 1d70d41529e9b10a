"""In-process HTTP stubs for exercising the remote embedding/chat clients."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class RecordingServer:
    """A JSON POST endpoint whose behavior is a per-test callable.

    behavior(payload, index) receives the parsed request body and the
    0-based request index and returns (status_code, response_object).
    The server records every payload, every Authorization header, and the
    maximum number of simultaneously in-flight requests (for concurrency
    assertions). Optional per-request delay makes overlap observable.
    """

    def __init__(self, behavior, delay_s: float = 0.0):
        self.behavior = behavior
        self.delay_s = delay_s
        self.payloads: list[dict] = []
        self.auth_headers: list[str | None] = []
        self.max_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                with stub._lock:
                    stub._in_flight += 1
                    stub.max_in_flight = max(stub.max_in_flight, stub._in_flight)
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    payload = json.loads(self.rfile.read(length) or b"{}")
                    with stub._lock:
                        index = len(stub.payloads)
                        stub.payloads.append(payload)
                        stub.auth_headers.append(self.headers.get("Authorization"))
                    if stub.delay_s:
                        time.sleep(stub.delay_s)
                    status, body = stub.behavior(payload, index)
                    data = (
                        body.encode("utf-8")
                        if isinstance(body, str)
                        else json.dumps(body).encode("utf-8")
                    )
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                finally:
                    with stub._lock:
                        stub._in_flight -= 1

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True
        )
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "RecordingServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def embedding_behavior(dim: int):
    """Happy-path embedding endpoint: vector i is index-tagged but fixed."""

    def behavior(payload, index):
        vectors = []
        for label in payload["inputs"]:
            base = float(len(label) % 7 + 1)
            vectors.append([base] + [0.0] * (dim - 1))
        return 200, {"vectors": vectors}

    return behavior


def chat_behavior(replies):
    """Chat endpoint answering from a fixed reply list by request index."""

    def behavior(payload, index):
        reply = replies[index % len(replies)]
        return 200, {"choices": [{"message": {"content": reply}}]}

    return behavior

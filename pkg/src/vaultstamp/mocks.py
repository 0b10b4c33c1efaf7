"""Bundled in-process mock servers for hermetic integration testing.

``MockAnchorServer`` implements the notarisation wire contract bit-for-bit
(``POST /hashes`` -> ``{"link", "timestamp"}``; ``GET /proofs/{id}`` ->
``{"digest", "timestamp"}``) and can be told to fail the next N submissions
to exercise client retry paths.

``MockRepositoryServer`` implements the storage contract (multipart upload
returning a JSON file id, raw download by id, delete, dataset listing) and
can simulate a server that refuses parallel uploads while it ingests the
previous one, returning 503 with Retry-After for a configurable window.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from http.server import ThreadingHTTPServer

from .anchors import utc_now_iso
from .errors import FormatError
from .httputil import JsonRequestHandler, parse_multipart


class _MockServerBase:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        handler = self._make_handler()
        self._server = ThreadingHTTPServer((host, port), handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "_MockServerBase":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _make_handler(self):
        raise NotImplementedError


class MockAnchorServer(_MockServerBase):
    """Notarisation provider double with an in-memory proof table."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.proofs: dict[str, tuple[str, str]] = {}  # id -> (digest_hex, ts)
        self.fail_next_submissions = 0
        self.submission_count = 0
        self._lock = threading.Lock()
        super().__init__(host, port)

    def _make_handler(self):
        mock = self

        class Handler(JsonRequestHandler):
            def do_POST(self):
                body = self.read_body()  # always drain: keep-alive hygiene
                if self.path != "/hashes":
                    return self.send_error_json(404, "unknown endpoint")
                with mock._lock:
                    if mock.fail_next_submissions > 0:
                        mock.fail_next_submissions -= 1
                        return self.send_error_json(503, "temporarily unavailable")
                    try:
                        digest_hex = json.loads(body)["digest"]
                    except Exception:
                        return self.send_error_json(400, "bad submission body")
                    mock.submission_count += 1
                    proof_id = str(mock.submission_count)
                    ts = utc_now_iso()
                    mock.proofs[proof_id] = (digest_hex, ts)
                self.send_json(
                    200, {"link": f"mock://proof/{proof_id}", "timestamp": ts}
                )

            def do_GET(self):
                if not self.path.startswith("/proofs/"):
                    return self.send_error_json(404, "unknown endpoint")
                proof_id = self.path[len("/proofs/"):]
                entry = mock.proofs.get(proof_id)
                if entry is None:
                    return self.send_error_json(404, "unknown proof")
                digest_hex, ts = entry
                self.send_json(200, {"digest": digest_hex, "timestamp": ts})

        return Handler


class MockRepositoryServer(_MockServerBase):
    """Storage backend double keeping everything in memory.

    ``ingest_delay`` > 0 makes the server reject uploads with 503 for that
    many seconds after each accepted upload, mirroring platforms that stall
    while ingesting, so clients must poll and retry.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 ingest_delay: float = 0.0, api_token: str | None = None):
        self.ingest_delay = ingest_delay
        self.api_token = api_token
        self.files: dict[str, tuple[str, str, bytes]] = {}  # id -> (dataset, label, data)
        self.datasets: dict[str, list[str]] = {}
        self.rejected_uploads = 0
        self._busy_until = 0.0
        self._lock = threading.Lock()
        super().__init__(host, port)

    def _authorized(self, handler) -> bool:
        if self.api_token is None:
            return True
        return handler.headers.get("Authorization") == f"Bearer {self.api_token}"

    def _make_handler(self):
        mock = self

        class Handler(JsonRequestHandler):
            def do_POST(self):
                body = self.read_body()  # always drain: keep-alive hygiene
                if not mock._authorized(self):
                    return self.send_error_json(401, "missing or bad token")
                if self.path == "/datasets":
                    try:
                        dataset_id = json.loads(body)["dataset_id"]
                    except Exception:
                        return self.send_error_json(400, "bad dataset body")
                    with mock._lock:
                        mock.datasets.setdefault(dataset_id, [])
                    return self.send_json(201, {"dataset_id": dataset_id})
                if self.path.startswith("/datasets/") and self.path.endswith("/files"):
                    dataset_id = self.path[len("/datasets/"):-len("/files")]
                    now = time.monotonic()
                    with mock._lock:
                        if now < mock._busy_until:
                            mock.rejected_uploads += 1
                            self.send_response(503)
                            retry = max(mock._busy_until - now, 0.01)
                            self.send_header("Retry-After", f"{retry:.2f}")
                            self.send_header("Content-Length", "0")
                            self.end_headers()
                            return
                    try:
                        parts = parse_multipart(body, self.headers.get("Content-Type", ""))
                    except FormatError as exc:
                        return self.send_error_json(400, str(exc))
                    name, filename, data = parts[0]
                    file_id = uuid.uuid4().hex
                    with mock._lock:
                        mock.files[file_id] = (dataset_id, filename or name, data)
                        mock.datasets.setdefault(dataset_id, []).append(file_id)
                        if mock.ingest_delay > 0:
                            mock._busy_until = time.monotonic() + mock.ingest_delay
                    return self.send_json(
                        201, {"file_id": file_id, "byte_length": len(data)}
                    )
                self.send_error_json(404, "unknown endpoint")

            def do_GET(self):
                if self.path.startswith("/files/"):
                    file_id = self.path[len("/files/"):]
                    entry = mock.files.get(file_id)
                    if entry is None:
                        return self.send_error_json(404, "unknown file")
                    return self.send_bytes(200, entry[2])
                if self.path.startswith("/datasets/"):
                    dataset_id = self.path[len("/datasets/"):]
                    ids = mock.datasets.get(dataset_id)
                    if ids is None:
                        return self.send_error_json(404, "unknown dataset")
                    files = [
                        {
                            "file_id": fid,
                            "label": mock.files[fid][1],
                            "byte_length": len(mock.files[fid][2]),
                        }
                        for fid in ids
                    ]
                    return self.send_json(200, {"files": files})
                self.send_error_json(404, "unknown endpoint")

            def do_DELETE(self):
                if not mock._authorized(self):
                    return self.send_error_json(401, "missing or bad token")
                if self.path.startswith("/files/"):
                    file_id = self.path[len("/files/"):]
                    with mock._lock:
                        entry = mock.files.pop(file_id, None)
                        if entry is None:
                            return self.send_error_json(404, "unknown file")
                        dataset_id = entry[0]
                        if file_id in mock.datasets.get(dataset_id, []):
                            mock.datasets[dataset_id].remove(file_id)
                    return self.send_json(200, {"deleted": file_id})
                self.send_error_json(404, "unknown endpoint")

        return Handler

"""JSON-over-HTTP service exposing the engine protocols.

Endpoints::

    POST /datasets/{id}/files?escrow=1   multipart files + X-Archive-Password
    GET  /files/{id}?mode=password       X-Archive-Password header
    GET  /files/{id}?mode=shares         X-Share-A / X-Share-B headers (hex)
    GET  /files/{id}/verify              auditor path, no credentials
    GET  /records/{id}                   record JSON (reads are open)
    POST /anchors/flush                  drain the pending anchor queue
    GET  /healthz

Trust boundary: passwords and shares travel in request headers, so the
service must only be reached over loopback or TLS termination you control.
Write endpoints (POST) require ``Authorization: Bearer <token>`` when a
token is configured; reads are unauthenticated by design, since records
hold only salts and digests.

Escrow shares appear once, in the upload response, and are never stored.
"""

from __future__ import annotations

import io
import threading
from http.server import ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .engine import ArchiveEngine
from .errors import (
    AuthenticationError,
    ConflictError,
    FormatError,
    IntegrityAlarmError,
    NotFoundError,
    ValidationError,
)
from .httputil import JsonRequestHandler, parse_multipart
from .repository import DatasetRef

PASSWORD_HEADER = "X-Archive-Password"
SHARE_A_HEADER = "X-Share-A"
SHARE_B_HEADER = "X-Share-B"


class ArchiveService:
    """HTTP front over one engine; optionally auto-flushes batch anchors."""

    def __init__(
        self,
        engine: ArchiveEngine,
        host: str = "127.0.0.1",
        port: int = 0,
        api_token: str | None = None,
        flush_interval: float = 0.0,
    ):
        self.engine = engine
        self.api_token = api_token
        self.flush_interval = flush_interval
        self._server = ThreadingHTTPServer((host, port), self._make_handler())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None
        self._flusher: threading.Thread | None = None
        self._stop_flush = threading.Event()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ArchiveService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        if self.flush_interval > 0:
            self._flusher = threading.Thread(target=self._flush_loop, daemon=True)
            self._flusher.start()
        return self

    def stop(self) -> None:
        self._stop_flush.set()
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        if self._flusher:
            self._flusher.join(timeout=5)

    def serve_forever(self) -> None:
        """Run in the foreground (CLI ``serve`` command)."""
        if self.flush_interval > 0:
            self._flusher = threading.Thread(target=self._flush_loop, daemon=True)
            self._flusher.start()
        try:
            self._server.serve_forever()
        finally:
            self._stop_flush.set()
            self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _flush_loop(self) -> None:
        while not self._stop_flush.wait(self.flush_interval):
            try:
                self.engine.flush_anchors()
            except Exception:
                pass  # outage: digests stay queued, next tick retries

    def _make_handler(self):
        service = self

        class Handler(JsonRequestHandler):
            def _write_authorized(self) -> bool:
                if service.api_token is None:
                    return True
                return (
                    self.headers.get("Authorization")
                    == f"Bearer {service.api_token}"
                )

            def do_GET(self):
                try:
                    self._route_get()
                except NotFoundError as exc:
                    self.send_error_json(404, str(exc))
                except AuthenticationError as exc:
                    self.send_error_json(403, str(exc))
                except IntegrityAlarmError as exc:
                    self.send_error_json(409, str(exc))
                except (ValidationError, FormatError) as exc:
                    self.send_error_json(400, str(exc))
                except Exception as exc:
                    self.send_error_json(500, f"internal error: {exc}")

            def do_POST(self):
                body = self.read_body()  # drain before any early response
                try:
                    self._route_post(body)
                except NotFoundError as exc:
                    self.send_error_json(404, str(exc))
                except (ValidationError, FormatError) as exc:
                    self.send_error_json(400, str(exc))
                except ConflictError as exc:
                    self.send_error_json(409, str(exc))
                except Exception as exc:
                    self.send_error_json(500, f"internal error: {exc}")

            def _route_get(self):
                parsed = urlparse(self.path)
                query = parse_qs(parsed.query)
                path = parsed.path

                if path == "/healthz":
                    return self.send_json(200, {"status": "ok"})

                if path.startswith("/records/"):
                    file_id = path[len("/records/"):]
                    record = service.engine.records.get(file_id)
                    return self.send_json(200, record.to_json_obj())

                if path.startswith("/files/") and path.endswith("/verify"):
                    file_id = path[len("/files/"):-len("/verify")]
                    report = service.engine.verify(file_id)
                    return self.send_json(200, report.to_json_obj())

                if path.startswith("/files/"):
                    file_id = path[len("/files/"):]
                    mode = query.get("mode", ["password"])[0]
                    if mode == "password":
                        password = self.headers.get(PASSWORD_HEADER)
                        if not password:
                            raise ValidationError(
                                f"{PASSWORD_HEADER} header required for mode=password"
                            )
                        plaintext = service.engine.download_with_password(
                            file_id, password
                        )
                    elif mode == "shares":
                        share_a = self.headers.get(SHARE_A_HEADER)
                        share_b = self.headers.get(SHARE_B_HEADER)
                        if not share_a or not share_b:
                            raise ValidationError(
                                f"{SHARE_A_HEADER} and {SHARE_B_HEADER} headers "
                                "required for mode=shares"
                            )
                        plaintext = service.engine.download_with_shares(
                            file_id,
                            bytes.fromhex(share_a),
                            bytes.fromhex(share_b),
                        )
                    else:
                        raise ValidationError("mode must be 'password' or 'shares'")
                    with plaintext:
                        data = plaintext.read()
                    return self.send_bytes(200, data)

                raise NotFoundError(f"unknown endpoint {path!r}")

            def _route_post(self, body: bytes):
                parsed = urlparse(self.path)
                query = parse_qs(parsed.query)
                path = parsed.path

                if not self._write_authorized():
                    return self.send_error_json(401, "missing or bad bearer token")

                if path == "/anchors/flush":
                    result = service.engine.flush_anchors()
                    return self.send_json(
                        200,
                        {
                            "flushed": result.flushed,
                            "batch_link": (
                                result.batch_receipt.verification_link
                                if result.batch_receipt
                                else None
                            ),
                        },
                    )

                if path.startswith("/datasets/") and path.endswith("/files"):
                    dataset_id = path[len("/datasets/"):-len("/files")]
                    password = self.headers.get(PASSWORD_HEADER)
                    if not password:
                        raise ValidationError(f"{PASSWORD_HEADER} header required")
                    escrow = query.get("escrow", ["0"])[0] in ("1", "true", "yes")
                    parts = parse_multipart(
                        body, self.headers.get("Content-Type", "")
                    )
                    files = [
                        (filename or name or "unnamed", io.BytesIO(data))
                        for name, filename, data in parts
                    ]
                    result = service.engine.upload(
                        DatasetRef(dataset_id=dataset_id), files, password, escrow=escrow
                    )
                    body = {
                        "receipt_state": result.receipt_state,
                        "failures": [
                            {"label": label, "error": message}
                            for label, message in result.failures
                        ],
                        "files": [],
                    }
                    for ref, record in result.refs:
                        entry = record.to_json_obj()
                        entry["byte_length"] = ref.byte_length
                        if result.shares and record.file_id in result.shares:
                            pair = result.shares[record.file_id]
                            entry["shares"] = {
                                "share_a": pair.share_a.hex(),
                                "share_b": pair.share_b.hex(),
                            }
                        body["files"].append(entry)
                    status = 201 if not result.failures else 207
                    return self.send_json(status, body)

                raise NotFoundError(f"unknown endpoint {path!r}")

        return Handler

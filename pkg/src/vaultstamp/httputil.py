"""Minimal HTTP plumbing shared by the service and the bundled mock servers."""

from __future__ import annotations

import json
import re
from http.server import BaseHTTPRequestHandler

from .errors import FormatError


def parse_multipart(body: bytes, content_type: str) -> list[tuple[str, str, bytes]]:
    """Parse a multipart/form-data body into (field_name, filename, data).

    Supports the subset emitted by requests/browsers: one boundary, CRLF
    line endings, Content-Disposition with quoted name/filename parameters.
    """
    match = re.search(r'boundary="?([^";]+)"?', content_type)
    if not match:
        raise FormatError("multipart content-type lacks a boundary")
    boundary = b"--" + match.group(1).encode("ascii")
    parts: list[tuple[str, str, bytes]] = []
    # body: --b\r\n<part>\r\n--b\r\n<part>\r\n--b--\r\n
    segments = body.split(boundary)
    for segment in segments:
        if segment in (b"", b"--", b"--\r\n") or segment == b"\r\n":
            continue
        segment = segment.removeprefix(b"\r\n")
        if segment.startswith(b"--"):
            continue
        try:
            header_blob, data = segment.split(b"\r\n\r\n", 1)
        except ValueError:
            raise FormatError("multipart part lacks a header/body separator")
        data = data.removesuffix(b"\r\n")
        name, filename = "", ""
        for line in header_blob.split(b"\r\n"):
            text = line.decode("utf-8", "replace")
            if text.lower().startswith("content-disposition"):
                name_match = re.search(r'name="([^"]*)"', text)
                file_match = re.search(r'filename="([^"]*)"', text)
                if name_match:
                    name = name_match.group(1)
                if file_match:
                    filename = file_match.group(1)
        parts.append((name, filename, data))
    if not parts:
        raise FormatError("multipart body contains no parts")
    return parts


class JsonRequestHandler(BaseHTTPRequestHandler):
    """Base handler with JSON/bytes response helpers and quiet logging."""

    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output clean
        pass

    def read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length) if length else b""

    def send_json(self, status: int, obj) -> None:
        payload = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def send_bytes(self, status: int, payload: bytes,
                   content_type: str = "application/octet-stream") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def send_error_json(self, status: int, message: str, **extra) -> None:
        self.send_json(status, {"error": message, **extra})

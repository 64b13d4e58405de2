"""Minimal JSON inference endpoint over one loaded model.

    POST /sentiment   {"text": "..."} -> {"label": ..., "probabilities": {...}}
    GET  /health      -> {"status": "ok"}
"""

from __future__ import annotations

import json
import logging
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..model import Classifier
from ..textpipe import LABEL_NAMES

log = logging.getLogger(__name__)

MAX_BODY = 64 * 1024


def sentiment_response(model: Classifier, text: str) -> dict:
    label, probs = model.predict(text)
    return {
        "label": label.label,
        "probabilities": {name: float(p) for name, p in zip(LABEL_NAMES, probs)},
    }


def make_handler(model: Classifier):
    class Handler(BaseHTTPRequestHandler):
        server_version = "selfsent"

        def _send(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status: int, message: str) -> None:
            self._send(status, {"error": message})

        def do_GET(self):
            if self.path == "/health":
                self._send(HTTPStatus.OK, {"status": "ok"})
            else:
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")

        def do_POST(self):
            if self.path != "/sentiment":
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                self._error(HTTPStatus.BAD_REQUEST, "invalid Content-Length")
                return
            if length > MAX_BODY:
                self.close_connection = True
                self._error(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, f"body exceeds {MAX_BODY} bytes")
                return
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._error(HTTPStatus.BAD_REQUEST, "body is not valid JSON")
                return
            if not isinstance(payload, dict) or "text" not in payload:
                self._error(HTTPStatus.BAD_REQUEST, "missing field: text")
                return
            if not isinstance(payload["text"], str):
                self._error(HTTPStatus.BAD_REQUEST, "invalid field: text must be a string")
                return
            self._send(HTTPStatus.OK, sentiment_response(model, payload["text"]))

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

    return Handler


def make_server(model: Classifier, host: str = "127.0.0.1", port: int = 8000) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), make_handler(model))
    server.daemon_threads = True
    return server


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def serve(model: Classifier, addr: str = "127.0.0.1:8000") -> None:
    host, port = parse_addr(addr)
    server = make_server(model, host, port)
    log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    finally:
        server.server_close()

"""HTTP surface: ``POST /v1/troubleshoot`` and ``GET /healthz``."""

from __future__ import annotations

import json
import logging
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .core import PipelineConfig, TelebridgeError, UserQuery
from .gateway import Resources, handle_query

logger = logging.getLogger(__name__)

MAX_BODY = 1 << 20
STATUS_BY_OUTCOME = {"answered": 200, "clarification": 200, "error": 500}


class TroubleshootServer(ThreadingHTTPServer):
    # non-daemon workers so server_close() joins in-flight requests
    daemon_threads = False
    block_on_close = True

    def __init__(self, address: tuple[str, int], res: Resources, cfg: PipelineConfig = PipelineConfig(), timeout_s: float = 60.0):
        self.res = res
        self.cfg = cfg
        self.timeout_s = timeout_s
        super().__init__(address, Handler)


class Handler(BaseHTTPRequestHandler):
    server: TroubleshootServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.info("%s %s", self.address_string(), fmt % args)

    def setup(self):
        super().setup()
        self.request.settimeout(self.server.timeout_s)

    def _send(self, status: int, body: str, content_type: str = "application/json", close: bool = False) -> None:
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        if close:
            self.send_header("Connection", "close")
            self.close_connection = True
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, message: str, close: bool = False) -> None:
        self._send(status, json.dumps({"error": message}, sort_keys=True), close=close)

    def do_GET(self):
        if self.path == "/healthz":
            self._send(200, "ok", "text/plain")
        else:
            self._error(404, f"no route {self.path}")

    def do_POST(self):
        if self.path != "/v1/troubleshoot":
            self._error(404, f"no route {self.path}", close=True)
            return
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            self._error(400, "invalid Content-Length", close=True)
            return
        if length > MAX_BODY:
            # the body is left unread, so the connection cannot be reused
            self._error(413, "request body too large", close=True)
            return
        try:
            body = json.loads(self.rfile.read(length) or b"null")
        except (json.JSONDecodeError, UnicodeDecodeError):
            self._error(400, "body is not valid JSON")
            return
        if not isinstance(body, dict) or not isinstance(body.get("query"), str):
            self._error(400, "body must be an object with a string 'query'")
            return
        hint = body.get("vertical_hint")
        if hint is not None and not isinstance(hint, str):
            self._error(400, "'vertical_hint' must be a string")
            return
        try:
            q = UserQuery(body["query"], hint)
        except TelebridgeError as exc:
            self._error(400, str(exc))
            return
        resp = handle_query(q, self.server.res, self.server.cfg)
        self._send(STATUS_BY_OUTCOME[resp.outcome], resp.to_json(bool(body.get("include_trace"))))


def make_server(host: str, port: int, res: Resources, cfg: PipelineConfig = PipelineConfig()) -> TroubleshootServer:
    """Bind now so a bad address fails at startup rather than on first request."""
    try:
        return TroubleshootServer((host, port), res, cfg)
    except OSError as exc:
        raise TelebridgeError(f"cannot bind {host}:{port}: {exc}") from exc


def serve(host: str, port: int, res: Resources, cfg: PipelineConfig = PipelineConfig(), ready: Optional[threading.Event] = None) -> None:
    """Run until SIGINT/SIGTERM, then stop accepting and drain in-flight requests."""
    httpd = make_server(host, port, res, cfg)

    def stop(signum, frame):
        logger.info("signal %d: shutting down", signum)
        threading.Thread(target=httpd.shutdown, daemon=True).start()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, stop)
        signal.signal(signal.SIGINT, stop)
    logger.info("listening on %s:%d", *httpd.server_address[:2])
    if ready is not None:
        ready.set()
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()

"""Local HTTP adapter over the CLI.

``POST /`` with a JSON body ``{"args": ["fn", "submit", ...]}`` runs the
same command the CLI would and answers ``{"exit": code, "stdout": ...,
"stderr": ...}``.  Requests are handled one at a time.
"""

from __future__ import annotations

import contextlib
import io
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

from . import cli

log = logging.getLogger(__name__)

_lock = threading.Lock()


def handle(home: str, args: list[str]) -> dict:
    out, err = io.StringIO(), io.StringIO()
    with _lock, contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = cli.main(["--home", home, *args])
        except SystemExit as exc:  # argparse usage errors
            code = exc.code if isinstance(exc.code, int) else 2
    return {"exit": code, "stdout": out.getvalue(), "stderr": err.getvalue()}


def make_handler(home: str):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                args = body["args"]
                if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
                    raise ValueError("args must be a list of strings")
                if args and args[0] == "serve":
                    raise ValueError("cannot serve from a request")
            except (ValueError, KeyError, TypeError) as exc:
                self._reply(400, {"error": str(exc)})
                return
            self._reply(200, handle(home, args))

        def _reply(self, status: int, payload: dict) -> None:
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            log.info(fmt, *args)

    return Handler


def serve(home: str, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = HTTPServer((host, port), make_handler(home))
    log.warning("serving %s on http://%s:%d", home, host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()

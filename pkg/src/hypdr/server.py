"""HTTP session server: the machine side of the interactive oracle protocol.

Endpoints (all JSON, UTF-8):

* ``GET /status``      run state, frame digest, step count
* ``GET /query``       pending generalization query, or 204 when none
* ``POST /answer``     ``{"id": n, "psi": "<formula>"}``; 422 carries the
  violated side condition verbatim, 409 flags a stale query id
* ``GET /trajectory?query=N``  backward-simulation samples for plotting
* ``GET /result``      final verdict, or 204 while the engine is running

The engine runs in the caller's thread and blocks inside the interactive
oracle while a query is pending; this server merely exposes that rendezvous.
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, List, Optional
from urllib.parse import parse_qs, urlparse

from .formulas import ParseError, format_formula, parse_formula
from .oracle import GeneralizationQuery, InteractiveOracle


class SessionState:
    """Shared state between the engine thread and the HTTP handlers."""

    def __init__(self, oracle: InteractiveOracle):
        self.oracle = oracle
        self._lock = threading.Lock()
        self._engine = None
        self._result_doc: Optional[dict] = None
        self.trajectories: Dict[int, List[dict]] = {}

    def attach_engine(self, engine):
        with self._lock:
            self._engine = engine

    def publish_result(self, result_doc: dict):
        with self._lock:
            self._result_doc = result_doc

    def result(self) -> Optional[dict]:
        with self._lock:
            return self._result_doc

    def status(self) -> dict:
        with self._lock:
            engine = self._engine
            done = self._result_doc is not None
        doc = {"state": "done" if done else "running"}
        if engine is not None:
            doc["frames_digest"] = engine.frames.digest()
            doc["n"] = engine.frames.n
            doc["steps"] = len(engine.log)
            doc["mode"] = "hybrid" if engine.hybrid else "discrete"
            doc["variables"] = list(engine.ha.variables)
        if done:
            doc["result_status"] = self._result_doc.get("status")
        return doc

    def record_trajectory(self, query: GeneralizationQuery):
        samples = [
            {str(v): s[v] for v in sorted(s, key=lambda u: u.name)}
            for s in query.trajectory
        ]
        with self._lock:
            self.trajectories[query.id] = samples
            # keep the map small; old queries are never asked again
            for key in sorted(self.trajectories)[:-8]:
                del self.trajectories[key]


def query_to_doc(query: GeneralizationQuery) -> dict:
    doc = {
        "id": query.id,
        "kind": query.kind,
        "location": query.location,
        "level": query.level,
        "fields": query.fields_text(),
        "pre": format_formula(query.pre),
        "stay": format_formula(query.stay) if query.stay is not None else None,
        "guard": format_formula(query.guard) if query.guard is not None else None,
        "cmd": [str(c) for c in query.cmd] if query.cmd else None,
        "init": format_formula(query.init),
        "ce": {str(v): query.ce[v] for v in sorted(query.ce, key=lambda u: u.name)},
    }
    if query.flow is not None:
        doc["flow"] = str(query.flow)
    return doc


class _Handler(BaseHTTPRequestHandler):
    state: SessionState = None  # set by make_server
    static_dir: Optional[str] = None

    def log_message(self, *args):  # quiet by default
        pass

    # -- plumbing -----------------------------------------------------------
    def _send(self, code: int, payload: Optional[dict] = None,
              raw: Optional[bytes] = None, content_type: str = "application/json"):
        self.send_response(code)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        if payload is not None:
            raw = json.dumps(payload).encode()
        if raw is not None:
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)
        else:
            self.send_header("Content-Length", "0")
            self.end_headers()

    def do_OPTIONS(self):
        self._send(204)

    # -- routes --------------------------------------------------------------
    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/status":
            self._send(200, self.state.status())
        elif url.path == "/query":
            pending = self.state.oracle.pending()
            if pending is None:
                self._send(204)
            else:
                self.state.record_trajectory(pending)
                self._send(200, query_to_doc(pending))
        elif url.path == "/trajectory":
            qs = parse_qs(url.query)
            try:
                qid = int(qs.get("query", ["-1"])[0])
            except ValueError:
                self._send(400, {"error": "bad query id"})
                return
            samples = self.state.trajectories.get(qid)
            if samples is None:
                self._send(404, {"error": f"no trajectory for query {qid}"})
            else:
                self._send(200, {"query": qid, "samples": samples})
        elif url.path == "/result":
            doc = self.state.result()
            if doc is None:
                self._send(204)
            else:
                self._send(200, doc)
        else:
            self._serve_static(url.path)

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/answer":
            self._send(404, {"error": "unknown endpoint"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            doc = json.loads(self.rfile.read(length).decode())
            qid = int(doc["id"])
            psi = parse_formula(doc["psi"])
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            self._send(400, {"error": f"bad request: {exc}"})
            return
        except ParseError as exc:
            self._send(400, {"error": f"formula does not parse: {exc}"})
            return
        code, reason = self.state.oracle.submit(qid, psi)
        self._send(code, {"status": code, "reason": reason})

    def _serve_static(self, path: str):
        if self.static_dir is None:
            self._send(404, {"error": "not found"})
            return
        rel = "index.html" if path in ("", "/") else path.lstrip("/")
        full = os.path.normpath(os.path.join(self.static_dir, rel))
        if not full.startswith(os.path.abspath(self.static_dir)) or not os.path.isfile(full):
            self._send(404, {"error": "not found"})
            return
        ctype = {
            ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
            ".map": "application/json",
        }.get(os.path.splitext(full)[1], "application/octet-stream")
        with open(full, "rb") as fh:
            self._send(200, raw=fh.read(), content_type=ctype)


def make_server(state: SessionState, address: str = "127.0.0.1:8750",
                static_dir: Optional[str] = None) -> ThreadingHTTPServer:
    host, _, port = address.partition(":")
    handler = type("Handler", (_Handler,), {
        "state": state,
        "static_dir": os.path.abspath(static_dir) if static_dir else None,
    })
    return ThreadingHTTPServer((host or "127.0.0.1", int(port or "8750")), handler)


def serve_in_background(state: SessionState, address: str,
                        static_dir: Optional[str] = None) -> ThreadingHTTPServer:
    server = make_server(state, address, static_dir)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server

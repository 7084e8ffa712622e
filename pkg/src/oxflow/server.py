"""HTTP/JSON service backing the slice-exploration frontend.

Endpoints:
    GET  /programs          -> list of loaded programs
    GET  /program/{id}      -> source, functions, locations with spans
    POST /slice             -> {program, fn, criterion, direction, mode}
    POST /ifc               -> {program, [mode]}
Static frontend assets are served from a configurable directory.
"""

from __future__ import annotations

import json
import mimetypes
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .apps import (
    IfcPolicy,
    SliceCriterion,
    UnresolvedCriterion,
    compute_slice,
    ifc_check,
    policy_from_annotations,
    resolve_span_criterion,
)
from .checker import TypedProgram, typecheck
from .infoflow import Mode, analyze_fn
from .ownership import OxError
from .parser import load_program
from .syntax import Program


def canonical_json(data: object) -> bytes:
    """One serializer for CLI and HTTP so both produce identical bytes."""
    return (json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n").encode()


@dataclass
class LoadedProgram:
    id: str
    path: str
    program: Program
    typed: TypedProgram


class AnalysisService:
    """Loads programs once and serves analyses from immutable results."""

    def __init__(self, paths: list[str | Path]):
        self.programs: dict[str, LoadedProgram] = {}
        self._cache: dict = {}
        self._lock = threading.Lock()
        for p in paths:
            path = Path(p)
            program = load_program(path.read_text())
            typed = typecheck(program)
            pid = path.stem
            self.programs[pid] = LoadedProgram(pid, str(path), program, typed)

    def _result(self, pid: str, fn: str, mode: Mode):
        key = (pid, fn, mode)
        with self._lock:
            if key not in self._cache:
                lp = self.programs[pid]
                self._cache[key] = analyze_fn(lp.program, fn, mode, facts=lp.typed)
            return self._cache[key]

    def list_programs(self) -> object:
        return {
            "programs": [
                {"id": lp.id, "path": lp.path, "functions": sorted(lp.program.functions)}
                for lp in self.programs.values()
            ]
        }

    def program_payload(self, pid: str) -> object:
        lp = self.programs[pid]
        functions = []
        locations = []
        for fn in lp.program.functions.values():
            entry = {
                "name": fn.name,
                "extern": fn.body is None,
                "param": fn.param,
                "locations": [],
            }
            if fn.body is not None:
                facts = lp.typed.functions[fn.name]
                for lid, loc in sorted(facts.loc_table.items()):
                    item = {"id": lid, "span": loc.span.to_json()}
                    entry["locations"].append(item)
                    locations.append({"fn": fn.name, **item})
            functions.append(entry)
        return {"id": pid, "source": lp.program.source, "functions": functions,
                "locations": locations}

    def slice_payload(self, pid: str, body: dict) -> object:
        lp = self.programs[pid]
        fn = body.get("fn")
        if fn not in lp.program.functions:
            raise UnresolvedCriterion(f"unknown function {fn!r}")
        criterion = body.get("criterion") or {}
        direction = {"back": "back", "backward": "back", "fwd": "fwd",
                     "forward": "fwd"}.get(body.get("direction", "back"))
        if direction is None:
            raise UnresolvedCriterion(f"bad direction {body.get('direction')!r}")
        mode = Mode(body.get("mode", "modular"))
        loc_id = None
        var = criterion.get("var")
        if var is None:
            span = criterion.get("span") or {}
            if "line" not in span or "col" not in span:
                raise UnresolvedCriterion("criterion needs a var or a span{line,col}")
            loc_id = resolve_span_criterion(lp.program, fn, span["line"], span["col"])
        crit = SliceCriterion(fn, var=var, loc_id=loc_id, direction=direction)
        result = compute_slice(
            lp.program, crit, mode, typed=lp.typed, result=self._result(pid, fn, mode)
        )
        return result.to_json()

    def ifc_payload(self, pid: str, body: dict) -> object:
        lp = self.programs[pid]
        mode = Mode(body.get("mode", "modular"))
        violations = ifc_check(lp.program, None, mode, typed=lp.typed)
        return {"violations": [v.to_json() for v in violations]}


def make_handler(service: AnalysisService, static_dir: Optional[Path]):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code: int, payload: bytes, ctype: str = "application/json") -> None:
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(payload)

        def _json(self, code: int, data: object) -> None:
            self._send(code, canonical_json(data))

        def _error(self, code: int, message: str) -> None:
            self._json(code, {"error": message})

        def do_GET(self) -> None:
            path = self.path.split("?", 1)[0]
            if path == "/programs":
                self._json(200, service.list_programs())
                return
            if path.startswith("/program/"):
                pid = path[len("/program/"):]
                if pid not in service.programs:
                    self._error(404, f"unknown program {pid!r}")
                    return
                self._json(200, service.program_payload(pid))
                return
            self._serve_static(path)

        def _serve_static(self, path: str) -> None:
            if static_dir is None:
                self._error(404, "no static assets configured")
                return
            rel = "index.html" if path in ("", "/") else path.lstrip("/")
            target = (static_dir / rel).resolve()
            if not str(target).startswith(str(static_dir.resolve())) or not target.is_file():
                self._error(404, "not found")
                return
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self._send(200, target.read_bytes(), ctype)

        def do_POST(self) -> None:
            length = int(self.headers.get("Content-Length", "0"))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                self._error(400, "request body is not valid JSON")
                return
            pid = body.get("program")
            if pid not in service.programs:
                self._error(404, f"unknown program {pid!r}")
                return
            try:
                if self.path == "/slice":
                    self._json(200, service.slice_payload(pid, body))
                elif self.path == "/ifc":
                    self._json(200, service.ifc_payload(pid, body))
                else:
                    self._error(404, "not found")
            except (UnresolvedCriterion, ValueError) as exc:
                self._error(400, str(exc))
            except OxError as exc:
                self._error(400, str(exc))

    return Handler


def serve(
    paths: list[str | Path],
    port: int = 8675,
    *,
    static_dir: Optional[str | Path] = None,
    host: str = "127.0.0.1",
) -> ThreadingHTTPServer:
    """Create (but do not start) the HTTP server; callers drive
    serve_forever, tests use ephemeral ports via port=0."""
    service = AnalysisService(paths)
    static = Path(static_dir) if static_dir else None
    handler = make_handler(service, static)
    return ThreadingHTTPServer((host, port), handler)

"""Rewriting gateway: one request handler, two transports.

Newline-delimited JSON over TCP, or JSON bodies POSTed over HTTP. Budget
charges go through a single lock, so concurrent requests cannot overspend.
"""
from __future__ import annotations

import json
import logging
import socketserver
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .budget import BudgetExhausted, LedgerStore, fingerprint
from .catalog import Catalog
from .mechanisms import MECHANISMS, RewriteConfig
from .pipeline import ERROR_CODES, analyze_sql, classify, rewrite_sql

log = logging.getLogger(__name__)

_REQUEST_KEYS = {"op", "sql", "epsilon", "delta", "mechanism", "bins", "dialect", "dbSize",
                 "subsamples", "id"}


class BadRequest(Exception):
    pass


def error(code: str, message: str, exit_code: int | None = None, **extra) -> dict:
    e = {"code": code, "message": message}
    if exit_code is not None:
        e["exitCode"] = exit_code
    e.update(extra)
    return {"error": e}


def _number(req, key, required=False):
    v = req.get(key)
    if v is None:
        if required:
            raise BadRequest(f"missing field {key!r}")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise BadRequest(f"field {key!r} must be a number")
    return v


def config_from_request(req: dict) -> RewriteConfig:
    unknown = set(req) - _REQUEST_KEYS
    if unknown:
        raise BadRequest(f"unknown fields {sorted(unknown)}")
    if not isinstance(req.get("sql"), str):
        raise BadRequest("field 'sql' must be a string")
    eps = _number(req, "epsilon", required=True)
    if not eps > 0:
        raise BadRequest("epsilon must be positive")
    mech = req.get("mechanism") or "auto"
    if mech not in MECHANISMS + ("auto",):
        raise BadRequest(f"unknown mechanism {mech!r}")
    bins = req.get("bins")
    if bins is not None and not isinstance(bins, list):
        raise BadRequest("field 'bins' must be a list")
    dialect = req.get("dialect") or "ansi"
    if dialect not in ("ansi", "postgres"):
        raise BadRequest(f"unknown dialect {dialect!r}")
    sub = _number(req, "subsamples")
    n = _number(req, "dbSize")
    try:
        return RewriteConfig(float(eps), _number(req, "delta"), mech,
                             int(sub) if sub is not None else None, dialect,
                             tuple(bins) if bins is not None else None,
                             int(n) if n is not None else None)
    except ValueError as e:
        raise BadRequest(str(e)) from None


@dataclass
class GatewayService:
    catalog: Catalog
    ledger: LedgerStore
    rules: list | None = None
    _charge_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def handle(self, req) -> dict:
        if not isinstance(req, dict):
            return error("bad_request", "request must be a JSON object")
        rid = req.get("id")
        resp = self._handle(req)
        if rid is not None:
            resp["id"] = rid
        return resp

    def _handle(self, req: dict) -> dict:
        try:
            config = config_from_request(req)
        except BadRequest as e:
            return error("bad_request", str(e))
        op = req.get("op", "rewrite")
        try:
            if op == "analyze":
                return analyze_sql(req["sql"], self.catalog, config, self.rules)
            if op != "rewrite":
                return error("bad_request", f"unknown op {op!r}")
            out = rewrite_sql(req["sql"], self.catalog, config, self.rules)
            with self._charge_lock:
                ledger = self.ledger.charge(out.plan.epsilon, out.plan.delta, fingerprint(out.sql))
        except BudgetExhausted as e:
            log.info("rejected: %s", e)
            return error("budget_exhausted", str(e), 4, requested=e.requested,
                         remaining=e.remaining)
        except Exception as e:  # every failure becomes a structured error
            code = classify(e)
            if code == 1:
                log.exception("internal error")
                return error("internal", f"{type(e).__name__}: {e}", 1)
            return error(ERROR_CODES[code], f"{type(e).__name__}: {e}", code)
        meta = out.metadata()
        return {
            "rewrittenSql": out.sql,
            **meta,
            "receipt": {"epsilon": out.plan.epsilon, "delta": out.plan.delta,
                        "remaining": ledger.remaining(),
                        "remainingDelta": ledger.remaining_delta(),
                        "version": ledger.version},
            "warnings": [],
        }

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as e:
            return json.dumps(error("bad_request", f"malformed JSON: {e}"))
        return json.dumps(self.handle(req))


class _NdjsonHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: GatewayService = self.server.service
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((service.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class NdjsonServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, service: GatewayService):
        super().__init__(addr, _NdjsonHandler)
        self.service = service


class _HttpHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        n = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(n).decode("utf-8", errors="replace")
        text = self.server.service.handle_line(body)
        status = 200
        if '"error"' in text[:12]:
            status = 400 if '"bad_request"' in text else 422
        data = text.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)


class HttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, service: GatewayService):
        super().__init__(addr, _HttpHandler)
        self.service = service


def parse_listen(addr: str):
    """``tcp://host:port`` or ``http://host:port`` -> (transport, (host, port))."""
    scheme, sep, rest = addr.partition("://")
    if not sep:
        scheme, rest = "tcp", addr
    if scheme not in ("tcp", "http"):
        raise ValueError(f"unknown transport {scheme!r}")
    host, _, port = rest.rpartition(":")
    return scheme, (host or "127.0.0.1", int(port))


def make_server(addr: str, service: GatewayService):
    scheme, hostport = parse_listen(addr)
    cls = NdjsonServer if scheme == "tcp" else HttpServer
    return cls(hostport, service)

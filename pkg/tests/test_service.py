import json
import socket
import threading
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest

from dpsql.budget import BudgetLedger, LedgerStore
from dpsql.fixtures import bundled_catalog
from dpsql.service import GatewayService, make_server, parse_listen

COUNT = {"sql": "SELECT COUNT(*) FROM trips", "epsilon": 0.1}


@pytest.fixture()
def service(tmp_path):
    store = LedgerStore(tmp_path / "ledger.json")
    store.init(BudgetLedger(1.0))
    return GatewayService(bundled_catalog(), store)


def test_valid_request_charges(service):
    before = service.ledger.load().remaining()
    resp = service.handle(dict(COUNT, id=7))
    assert "LN(1-2*ABS(" in resp["rewrittenSql"]
    assert resp["receipt"]["remaining"] == pytest.approx(before - 0.1)
    assert resp["id"] == 7 and resp["mechanism"] == "restricted"


@pytest.mark.parametrize("req,code", [
    ({"sql": "SELECT COUNT(*) FROM trips"}, "bad_request"),
    ({"sql": "SELECT COUNT(*) FROM trips", "epsilon": -1}, "bad_request"),
    ({"sql": "SELECT COUNT(*) FROM trips", "epsilon": 0.1, "mechanism": "x"}, "bad_request"),
    ({"sql": 3, "epsilon": 0.1}, "bad_request"),
    ({"sql": "SELECT fare FROM trips", "epsilon": 0.1}, "invalid_query"),
    ({"sql": "SELECT COUNT(*) FROM nope", "epsilon": 0.1}, "catalog_error"),
    ({"sql": "SELECT AVG(fare) FROM trips JOIN drivers ON trips.driver_id = drivers.id",
      "epsilon": 0.1}, "no_mechanism"),
])
def test_structured_errors(service, req, code):
    resp = service.handle(req)
    assert resp["error"]["code"] == code
    assert service.ledger.load().version == 0


def test_budget_exhausted_returns_no_sql(service):
    assert "rewrittenSql" in service.handle(dict(COUNT, epsilon=0.9))
    resp = service.handle(dict(COUNT, epsilon=0.2))
    assert resp["error"]["code"] == "budget_exhausted" and resp["error"]["exitCode"] == 4
    assert "rewrittenSql" not in resp


def test_analyze_op_does_not_charge(service):
    resp = service.handle(dict(COUNT, op="analyze"))
    assert resp["selected"] == "restricted"
    assert service.ledger.load().version == 0


def test_malformed_json(service):
    assert json.loads(service.handle_line("{nope"))["error"]["code"] == "bad_request"


def test_concurrent_requests_one_winner(service):
    service.handle(dict(COUNT, epsilon=0.7))
    with ThreadPoolExecutor(8) as pool:
        results = list(pool.map(lambda _: service.handle(dict(COUNT, epsilon=0.2)), range(8)))
    assert sum("rewrittenSql" in r for r in results) == 1


def _serve(server):
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return t


def test_tcp_transport(service):
    server = make_server("tcp://127.0.0.1:0", service)
    _serve(server)
    try:
        with socket.create_connection(server.server_address, timeout=10) as s:
            f = s.makefile("rw", encoding="utf-8")
            f.write("this is not json\n")
            f.write(json.dumps(COUNT) + "\n")
            f.flush()
            first = json.loads(f.readline())
            second = json.loads(f.readline())
        assert first["error"]["code"] == "bad_request"
        assert second["receipt"]["remaining"] == pytest.approx(0.9)
    finally:
        server.shutdown()
        server.server_close()


def test_http_transport(service):
    server = make_server("http://127.0.0.1:0", service)
    _serve(server)
    try:
        host, port = server.server_address
        req = urllib.request.Request(f"http://{host}:{port}/rewrite",
                                     data=json.dumps(COUNT).encode(), method="POST")
        with urllib.request.urlopen(req, timeout=10) as r:
            body = json.loads(r.read())
        assert body["mechanism"] == "restricted"
    finally:
        server.shutdown()
        server.server_close()


def test_parse_listen():
    assert parse_listen("http://0.0.0.0:80") == ("http", ("0.0.0.0", 80))
    assert parse_listen("127.0.0.1:9") == ("tcp", ("127.0.0.1", 9))
    with pytest.raises(ValueError):
        parse_listen("udp://x:1")

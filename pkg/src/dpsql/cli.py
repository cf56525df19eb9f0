"""Command-line entry point: rewrite, analyze, run, serve, budget."""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

from .budget import BudgetLedger, LedgerStore, fingerprint
from .catalog import load_catalog
from .evaluator import RandomSource, evaluate, load_database
from .mechanisms import MECHANISMS, RewriteConfig, load_rules
from .pipeline import EXIT_BUDGET, EXIT_INVALID, EXIT_OK, analyze_sql, classify, rewrite_sql
from .sql import parse_sql

log = logging.getLogger("dpsql")


def _read_query(args) -> str:
    if args.query:
        return Path(args.query).read_text(encoding="utf-8")
    return sys.stdin.read()


def _config(args) -> RewriteConfig:
    bins = None
    if getattr(args, "bins", None):
        bins = tuple(b.strip() for b in args.bins.split(",") if b.strip())
    return RewriteConfig(args.epsilon, args.delta, args.mechanism, args.subsamples,
                         args.dialect, bins, args.db_size)


def _fail(exc: BaseException) -> int:
    code = classify(exc)
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exitCode": code}),
          file=sys.stderr)
    return code


def _rules(args):
    return load_rules(args.rules) if args.rules else None


def cmd_rewrite(args) -> int:
    try:
        catalog = load_catalog(args.catalog)
        config = _config(args)
        out = rewrite_sql(_read_query(args), catalog, config, _rules(args))
        store = LedgerStore(args.ledger)
        ledger = store.charge(out.plan.epsilon, out.plan.delta, fingerprint(out.sql))
    except Exception as e:
        return _fail(e)
    meta = out.metadata()
    meta["receipt"] = {"epsilon": out.plan.epsilon, "delta": out.plan.delta,
                       "remaining": ledger.remaining(), "version": ledger.version}
    print(json.dumps(meta), file=sys.stderr)
    print(out.sql)
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        catalog = load_catalog(args.catalog)
        report = analyze_sql(_read_query(args), catalog, _config(args), _rules(args))
    except Exception as e:
        return _fail(e)
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"features: {', '.join(report['features'])}")
        for mech, v in report["mechanisms"].items():
            score = "-" if v["score"] is None else f"{v['score']:g}"
            verdict = "supported" if v["supported"] else f"excluded: {v['reason']}"
            print(f"{mech:<11} score {score:<3} {verdict}")
            for line in v.get("trace", []):
                print(f"    {line}")
        print(f"selected: {report['selected'] or 'none'}")
    return EXIT_OK if report["selected"] else 3


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_run(args) -> int:
    try:
        catalog = load_catalog(args.catalog)
        db = load_database(args.data, catalog)
        config = _config(args)
        if config.db_size is None and catalog.db_size() is None:
            from dataclasses import replace

            config = replace(config, db_size=len(db[catalog.protected_table].rows))
        text = _read_query(args)
        out = rewrite_sql(text, catalog, config, _rules(args))
        rng = RandomSource.seeded(args.seed)
        results = [evaluate(out.plan.query, db, rng) for _ in range(args.trials)]
    except Exception as e:
        return _fail(e)
    print(json.dumps({"mechanism": out.plan.mechanism, "gamma": out.plan.gamma,
                      "trials": args.trials, "note": "local simulation, no budget charged"}),
          file=sys.stderr)
    first = results[0]
    names = first.schema.names
    if args.trials == 1:
        print(",".join(names))
        for row in first.rows:
            print(",".join(_fmt(v) for v in row))
        return EXIT_OK
    q = parse_sql(text, config.dialect, catalog)
    from .algebra import group_keys

    keys = set(group_keys(q.top))
    header = []
    for n in names:
        header += [n] if n in keys else [f"{n}_mean", f"{n}_std"]
    print(",".join(header))
    for i, row in enumerate(first.rows):
        cells = []
        for j, n in enumerate(names):
            if n in keys:
                cells.append(_fmt(row[j]))
            else:
                vals = [r.rows[i][j] for r in results]
                cells += [_fmt(statistics.fmean(vals)), _fmt(statistics.stdev(vals))]
        print(",".join(cells))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import GatewayService, make_server

    try:
        catalog = load_catalog(args.catalog)
        store = LedgerStore(args.ledger)
        store.load()
        server = make_server(args.listen, GatewayService(catalog, store, _rules(args)))
    except Exception as e:
        return _fail(e)
    log.info("listening on %s", args.listen)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_budget(args) -> int:
    store = LedgerStore(args.ledger)
    try:
        if args.action == "init":
            ledger = BudgetLedger(args.total_epsilon, args.total_delta, args.mode,
                                  args.delta_prime if args.mode == "advanced" else None)
            store.init(ledger, overwrite=args.force)
        ledger = store.load()
    except ValueError as e:
        print(json.dumps({"error": "ValueError", "message": str(e)}), file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_BUDGET
    eps, dlt = ledger.spent()
    print(json.dumps({"totalEpsilon": ledger.total_epsilon, "totalDelta": ledger.total_delta,
                      "mode": ledger.mode, "spentEpsilon": eps, "spentDelta": dlt,
                      "remaining": ledger.remaining(), "charges": len(ledger.entries),
                      "version": ledger.version}))
    return EXIT_OK


def _query_args(p, need_ledger=False):
    p.add_argument("--catalog", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--mechanism", choices=("auto",) + MECHANISMS, default="auto")
    p.add_argument("--dialect", choices=("ansi", "postgres"), default="ansi")
    p.add_argument("--bins", help="comma-separated histogram bins")
    p.add_argument("--query", help="file with the SQL query (default: stdin)")
    p.add_argument("--db-size", type=int, help="row count of the protected table")
    p.add_argument("--subsamples", type=int)
    p.add_argument("--rules", help="JSON file with selection rules")
    p.add_argument("--ledger", required=need_ledger)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpsql", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rewrite", help="rewrite a query into private SQL and charge the budget")
    _query_args(p, need_ledger=True)
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("analyze", help="show mechanism support and selection (no budget)")
    _query_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="rewrite and evaluate on local CSV data")
    _query_args(p)
    p.add_argument("--data", required=True, help="directory with <table>.csv files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="run the rewriting gateway")
    p.add_argument("--catalog", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--listen", default="tcp://127.0.0.1:7878")
    p.add_argument("--rules")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("budget", help="create or inspect a budget ledger")
    p.add_argument("action", choices=("init", "show"))
    p.add_argument("--ledger", required=True)
    p.add_argument("--total-epsilon", type=float, default=1.0)
    p.add_argument("--total-delta", type=float, default=1e-3)
    p.add_argument("--mode", choices=("standard", "advanced"), default="standard")
    p.add_argument("--delta-prime", type=float, default=1e-6)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_budget)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", 1) < 1:
        print("--trials must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

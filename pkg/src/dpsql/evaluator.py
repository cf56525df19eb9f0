"""In-memory reference executor for the algebra (bag semantics).

Randomness comes from a ``RandomSource``; draws happen row by row, and
within a row left to right over the projection list, so a seeded run is
reproducible. ``RandomSource.stubbed(0.5)`` is the zero-noise point: every
Laplace sample collapses to exactly 0.
"""
from __future__ import annotations

import csv
import math
import random
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from . import algebra as ra
from .algebra import Schema, join_output, value_type


class EvalError(Exception):
    def __init__(self, message: str, row=None, node=None):
        if row is not None:
            message = f"{message} (row {row!r})"
        super().__init__(message)
        self.row = row
        self.node = node


class CsvTypeError(Exception):
    def __init__(self, message: str, row: int | None = None, col: str | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class RandomSource:
    """Seeded (``random.Random``) or stubbed (constant) uniform draws."""

    def __init__(self, seed=None, constant: float | None = None):
        if constant is not None and not 0.0 < constant < 1.0:
            raise ValueError("stubbed constant must lie in (0, 1)")
        self.constant = constant
        self.seed = seed
        self._rng = random.Random(seed)

    @classmethod
    def seeded(cls, seed) -> "RandomSource":
        return cls(seed=seed)

    @classmethod
    def stubbed(cls, constant: float = 0.5) -> "RandomSource":
        return cls(constant=constant)

    def draw(self) -> float:
        if self.constant is not None:
            return self.constant
        return self._rng.random()

    def draw_int(self, n: int) -> int:
        if self.constant is not None:
            return min(int(self.constant * n), n - 1)
        return self._rng.randrange(n)


@dataclass
class Table:
    schema: Schema
    rows: list

    def __post_init__(self):
        if not isinstance(self.schema, Schema):
            self.schema = Schema(self.schema)
        width = len(self.schema)
        for r in self.rows:
            if len(r) != width:
                raise ValueError(f"row {r!r} does not match schema arity {width}")

    @property
    def columns(self) -> list[str]:
        return self.schema.names

    def column(self, name: str) -> list:
        i = self.schema.index(name)
        return [r[i] for r in self.rows]

    def as_dicts(self) -> list[dict]:
        names = self.schema.names
        return [dict(zip(names, r)) for r in self.rows]


class _Ctx:
    __slots__ = ("rng", "rownum")

    def __init__(self, rng):
        self.rng = rng
        self.rownum = 0


def _null(row):
    raise EvalError("null value used outside coalesce", row)


def _compile(v, idx: dict):
    if isinstance(v, ra.Col):
        i = idx[v.name]
        return lambda row, ctx: row[i]
    if isinstance(v, ra.Lit):
        c = v.value
        return lambda row, ctx: c
    if isinstance(v, ra.Rand):
        return lambda row, ctx: ctx.rng.draw()
    if isinstance(v, ra.RandInt):
        n = v.n
        return lambda row, ctx: ctx.rng.draw_int(n)
    if isinstance(v, ra.RowNum):
        return lambda row, ctx: ctx.rownum
    if isinstance(v, ra.BinOp):
        f, g, op = _compile(v.left, idx), _compile(v.right, idx), v.op

        def binop(row, ctx):
            a = f(row, ctx)
            b = g(row, ctx)
            if a is None or b is None:
                _null(row)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if b == 0:
                raise EvalError(f"division by zero in {op!r}", row)
            if op == "/":
                return a / b
            return a % b

        return binop
    if isinstance(v, ra.Func):
        f, name = _compile(v.arg, idx), v.name

        def func(row, ctx):
            a = f(row, ctx)
            if a is None:
                _null(row)
            if name == "ln":
                if a <= 0:
                    raise EvalError(f"ln of non-positive value {a!r}", row)
                return math.log(a)
            if name == "abs":
                return abs(a)
            return (a > 0) - (a < 0)

        return func
    if isinstance(v, ra.Coalesce):
        f, d = _compile(v.expr, idx), v.default.value

        def coalesce(row, ctx):
            a = f(row, ctx)
            return d if a is None else a

        return coalesce
    raise EvalError(f"cannot evaluate {v!r}")


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "=": lambda a, b: a == b,
    "<>": lambda a, b: a != b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def _sum(values):
    if any(isinstance(v, float) for v in values):
        return math.fsum(values)
    return sum(values)


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile, the same rule as PERCENTILE_CONT."""
    return float(np.percentile(np.asarray(values, dtype=float), q * 100.0))


def _groups(rows, key_idx):
    groups: dict = {}
    for r in rows:
        k = tuple(r[i] for i in key_idx)
        groups.setdefault(k, []).append(r)
    return groups


class _Evaluator:
    def __init__(self, db, rng):
        self.db = db
        self.rng = rng

    def run(self, node) -> Table:
        m = getattr(self, "_" + type(node).__name__)
        return m(node)

    def _Table(self, node):
        try:
            return self.db[node.name]
        except KeyError:
            raise ra.UnknownTable(f"unknown table {node.name!r}", node) from None

    def _Values(self, node):
        return Table(Schema([(node.column, node.type)]), [(v,) for v in node.values])

    def _Select(self, node):
        t = self.run(node.input)
        idx = {n: i for i, n in enumerate(t.schema.names)}
        lf, rf = _compile(node.pred.left, idx), _compile(node.pred.right, idx)
        cmp = _CMP[node.pred.op]
        ctx = _Ctx(self.rng)
        out = []
        for i, row in enumerate(t.rows):
            ctx.rownum = i + 1
            a, b = lf(row, ctx), rf(row, ctx)
            if a is None or b is None:
                _null(row)
            if cmp(a, b):
                out.append(row)
        return Table(t.schema, out)

    def _Project(self, node):
        t = self.run(node.input)
        idx = {n: i for i, n in enumerate(t.schema.names)}
        attrs, fns = [], []
        for a in node.attrs:
            if isinstance(a, ra.Star):
                for n, ty in t.schema:
                    attrs.append((n, ty))
                    fns.append(_compile(ra.Col(n), idx))
            elif isinstance(a, ra.Col):
                attrs.append((a.name, value_type(a, t.schema, node)))
                fns.append(_compile(a, idx))
            else:
                attrs.append((a.name, value_type(a.value, t.schema, node)))
                fns.append(_compile(a.value, idx))
        schema = Schema(attrs)
        ctx = _Ctx(self.rng)
        out = []
        for i, row in enumerate(t.rows):
            ctx.rownum = i + 1
            vals = tuple(f(row, ctx) for f in fns)
            if any(v is None for v in vals):
                _null(row)
            out.append(vals)
        return Table(schema, out)

    def _Join(self, node):
        lt, rt = self.run(node.left), self.run(node.right)
        schema = join_output(lt.schema, rt.schema, node)
        li, ri = lt.schema.index(node.left_key), rt.schema.index(node.right_key)
        merged = node.left_key == node.right_key
        keep = [j for j in range(len(rt.schema)) if not (merged and j == ri)]
        out = []
        if node.kind == "inner":
            index: dict = {}
            for r in rt.rows:
                if r[ri] is not None:
                    index.setdefault(r[ri], []).append(r)
            for l in lt.rows:
                for r in index.get(l[li], ()) if l[li] is not None else ():
                    out.append(l + tuple(r[j] for j in keep))
        else:
            index = {}
            for l in lt.rows:
                if l[li] is not None:
                    index.setdefault(l[li], []).append(l)
            width = len(lt.schema)
            for r in rt.rows:
                tail = tuple(r[j] for j in keep)
                matches = index.get(r[ri], ())
                if not matches:
                    left = [None] * width
                    if merged:
                        left[li] = r[ri]
                    out.append(tuple(left) + tail)
                for l in matches:
                    if merged:
                        l = l[:li] + (r[ri],) + l[li + 1:]
                    out.append(l + tail)
        return Table(schema, out)

    def _Count(self, node):
        t = self.run(node.input)
        schema = _node_schema(node, t)
        key_idx = [t.schema.index(g) for g in node.group_by]
        groups = _groups(t.rows, key_idx)
        if not node.group_by and not groups:
            groups = {(): []}
        di = t.schema.index(node.distinct) if node.distinct else None
        out = []
        for k, rows in groups.items():
            if di is None:
                c = len(rows)
            else:
                c = len({r[di] for r in rows if r[di] is not None})
            out.append(k + (c,))
        return Table(schema, out)

    def _Sum(self, node):
        t = self.run(node.input)
        schema = _node_schema(node, t)
        key_idx = [t.schema.index(g) for g in node.group_by]
        ci = t.schema.index(node.column)
        groups = _groups(t.rows, key_idx)
        if not node.group_by and not groups:
            groups = {(): []}
        out = []
        for k, rows in groups.items():
            vals = [r[ci] for r in rows]
            if any(v is None for v in vals):
                _null(rows[0])
            if node.func == "sum":
                v = _sum(vals)
            elif not vals:
                raise EvalError(f"{node.func} of empty input", node=node)
            elif node.func == "avg":
                v = _sum(vals) / len(vals)
            else:
                v = float(statistics.median(vals))
            out.append(k + (v,))
        return Table(schema, out)

    def _WinsorizedMean(self, node):
        t = self.run(node.input)
        schema = _node_schema(node, t)
        key_idx = [t.schema.index(g) for g in node.group_by]
        si, vi = t.schema.index(node.sample_attr), t.schema.index(node.value)
        groups = _groups(t.rows, key_idx)
        if not node.group_by and not groups:
            groups = {(): []}
        ell, eps = node.subsamples, node.epsilon
        out = []
        for k, rows in groups.items():
            vals = [r[vi] for r in sorted(rows, key=lambda r: r[si])]
            if node.extensive:
                vals = vals + [0] * (ell - len(vals))
            if not vals:
                raise EvalError("no subsample results to aggregate", node=node)
            if node.mode == "mean":
                est, scale = _sum(vals) / len(vals), 0.0
            else:
                est, scale = winsorized_mean(vals, eps)
            if node.extensive:
                est, scale = est * ell, scale * ell
            out.append(k + (est, scale))
        return Table(schema, out)


def winsorized_mean(values, epsilon: float) -> tuple[float, float]:
    """Widened Winsorized mean of ``values``; returns (estimate, Laplace scale).

    The interquartile range [q25, q75] is widened by its own width on both
    sides, values are clamped into it and averaged. The mean of m clamped
    values moves by at most (hi - lo) / m when one of them changes.
    """
    m = len(values)
    q25, q75 = percentile(values, 0.25), percentile(values, 0.75)
    lo, hi = q25 - (q75 - q25), q75 + (q75 - q25)
    clamped = [min(max(v, lo), hi) for v in values]
    est = math.fsum(clamped) / m
    width = hi - lo if hi > lo else 1.0
    return est, width / (m * epsilon)


_PLACEHOLDER = "__input__"


def _node_schema(node, input_table: Table) -> Schema:
    """Schema of a unary node whose input has already been evaluated."""
    stub = replace(node, input=ra.Table(_PLACEHOLDER))
    return ra.schema_of(stub, {_PLACEHOLDER: input_table})


def evaluate(q, db: dict, rng: RandomSource | None = None) -> Table:
    """Evaluate a QueryExpr or RelExpr against ``db`` (table name -> Table)."""
    node = q.top if isinstance(q, ra.QueryExpr) else q
    return _Evaluator(db, rng or RandomSource.seeded(0)).run(node)


# ---------------------------------------------------------------------------
# fixtures


_CASTS = {
    "int": int,
    "real": float,
    "string": str,
    "boolean": lambda s: {"true": True, "false": False, "1": True, "0": False}[s.strip().lower()],
}


def load_csv(path, schema: Schema) -> Table:
    """Read an RFC-4180 style CSV whose header matches ``schema`` exactly."""
    if not isinstance(schema, Schema):
        schema = Schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvTypeError(f"{path}: missing header row") from None
        if [h.strip() for h in header] != schema.names:
            raise CsvTypeError(f"{path}: header {header} does not match schema {schema.names}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(schema):
                raise CsvTypeError(f"{path}:{lineno}: expected {len(schema)} fields", lineno)
            row = []
            for (name, ty), raw in zip(schema, rec):
                try:
                    row.append(_CASTS[ty](raw))
                except (ValueError, KeyError):
                    raise CsvTypeError(
                        f"{path}:{lineno}: column {name!r} expects {ty}, got {raw!r}",
                        lineno, name) from None
            rows.append(tuple(row))
    return Table(schema, rows)


def write_csv(path, table: Table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(table.schema.names)
        for r in table.rows:
            w.writerow(["true" if v is True else "false" if v is False else v for v in r])


def load_database(directory, catalog) -> dict:
    """One ``<table>.csv`` per catalog table."""
    db = {}
    for name in catalog.tables:
        path = Path(directory) / f"{name}.csv"
        if path.exists():
            db[name] = load_csv(path, catalog.table_schema(name))
    return db


def neighbors(db: dict, protected: str, pool=()) -> Iterator[dict]:
    """Databases at distance 1: each protected row removed, then each pool row added."""
    base = db[protected]
    for i in range(len(base.rows)):
        d = dict(db)
        d[protected] = Table(base.schema, base.rows[:i] + base.rows[i + 1:])
        yield d
    for row in pool:
        d = dict(db)
        d[protected] = Table(base.schema, base.rows + [tuple(row)])
        yield d

"""SQL text generation.

Every relational node either folds into the ``SELECT`` block of its parent
(selections become ``WHERE`` conjuncts, inner joins become a ``JOIN``
chain) or becomes a ``WITH`` clause. Identical subtrees share one clause,
so the metadata projection a weighted join reads twice is computed once.
"""
from __future__ import annotations

from .. import algebra as ra
from ..algebra import (
    BinOp,
    Binding,
    Coalesce,
    Col,
    Count,
    Func,
    Join,
    Lit,
    Project,
    Rand,
    RandInt,
    RowNum,
    Select,
    Star,
    Sum,
    Table,
    Values,
    WinsorizedMean,
)

DIALECTS = ("ansi", "postgres")


class EmitError(Exception):
    pass


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "%": 2}


def _lit(v) -> str:
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, int):
        return str(v) if v >= 0 else f"({v})"
    if isinstance(v, float):
        s = repr(v)
        return s if v >= 0 else f"({s})"
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    raise EmitError(f"cannot emit literal {v!r}")


class _Emitter:
    def __init__(self, dialect: str, catalog, empty_sum_zero: bool = False):
        if dialect not in DIALECTS:
            raise EmitError(f"unknown dialect {dialect!r}")
        self.dialect = dialect
        self.catalog = catalog
        # SQL's SUM of no rows is NULL; the algebra's is 0
        self.empty_sum_zero = empty_sum_zero
        self.ctes: list[tuple[str, str]] = []
        self.memo: dict = {}
        self.used: set = set()
        self.counter = 0

    # -- names ------------------------------------------------------------

    def _fresh(self, wanted: str | None) -> str:
        if wanted and wanted not in self.used and not self._is_table(wanted):
            self.used.add(wanted)
            return wanted
        base = wanted or "q"
        while True:
            self.counter += 1
            name = f"{base}{self.counter}" if wanted else f"q{self.counter}"
            if name not in self.used and not self._is_table(name):
                self.used.add(name)
                return name

    def _is_table(self, name: str) -> bool:
        return self.catalog is not None and name in getattr(self.catalog, "tables", {})

    def _schema(self, node):
        if self.catalog is None:
            raise EmitError("emitting this query needs the catalog (column lists of joins)")
        return ra.schema_of(node, self.catalog)

    def ref(self, node) -> str:
        """Name under which ``node`` can appear in a FROM clause."""
        if isinstance(node, Table):
            return node.name
        if node in self.memo:
            return self.memo[node]
        if isinstance(node, WinsorizedMean):
            sql = self._winsorized(node)
        else:
            sql = self.block(node)
        name = self._fresh(node.label)
        self.memo[node] = name
        self.ctes.append((name, sql))
        return name

    def add_cte(self, wanted: str, sql: str) -> str:
        name = self._fresh(wanted)
        self.ctes.append((name, sql))
        return name

    # -- value expressions ------------------------------------------------

    def expr(self, v, q) -> str:
        if isinstance(v, Col):
            return q(v.name)
        if isinstance(v, Lit):
            return _lit(v.value)
        if isinstance(v, Rand):
            return "RANDOM()"
        if isinstance(v, RandInt):
            return f"CAST(FLOOR(RANDOM()*{v.n}) AS INTEGER)"
        if isinstance(v, RowNum):
            return "ROW_NUMBER() OVER ()"
        if isinstance(v, Func):
            return f"{v.name.upper()}({self.expr(v.arg, q)})"
        if isinstance(v, Coalesce):
            x = self.expr(v.expr, q)
            return f"CASE WHEN {x} IS NULL THEN {_lit(v.default.value)} ELSE {x} END"
        if isinstance(v, BinOp):
            if v.op == "%" and self.dialect == "ansi":
                return f"MOD({self.expr(v.left, q)}, {self.expr(v.right, q)})"
            p = _PREC[v.op]
            left = self.expr(v.left, q)
            right = self.expr(v.right, q)
            if isinstance(v.left, BinOp) and _PREC[v.left.op] < p:
                left = f"({left})"
            if isinstance(v.right, BinOp) and _PREC[v.right.op] <= p:
                right = f"({right})"
            return f"{left}{v.op}{right}"
        raise EmitError(f"cannot emit value expression {v!r}")

    def pred(self, p, q) -> str:
        return f"{self.expr(p.left, q)} {p.op} {self.expr(p.right, q)}"

    # -- blocks -------------------------------------------------------------

    def _from(self, body):
        """FROM clause for ``body``; returns (sql, qualifier function, column names or None)."""
        if not isinstance(body, Join):
            name = self.ref(body)
            return name, (lambda c: c), None
        # index the join tree's leaves; inner joins flatten into a chain
        leaves: list = []

        def index(node):
            if isinstance(node, Join) and (node.kind == "inner" or node is body):
                return (node, index(node.left), index(node.right))
            leaves.append(node)
            return len(leaves) - 1

        tree = index(body)
        names = [self.ref(leaf) for leaf in leaves]
        aliases, seen = [], {}
        for n in names:
            seen[n] = seen.get(n, 0) + 1
            aliases.append(n if seen[n] == 1 else f"{n}_{seen[n]}")

        def resolve(t, attr):
            if isinstance(t, int):
                return t
            join = t[0]
            side = ra.attr_side(join, attr, self._require_catalog())
            return resolve(t[1] if side == "left" else t[2], attr)

        def qual(c):
            return f"{aliases[resolve(tree, c)]}.{c}"

        conds = []

        def collect(t):
            if isinstance(t, int):
                return
            join = t[0]
            # inner conditions first, so a left-deep tree re-emits in source order
            collect(t[1])
            collect(t[2])
            a, b = resolve(t[1], join.left_key), resolve(t[2], join.right_key)
            conds.append((a, b, f"{aliases[a]}.{join.left_key} = {aliases[b]}.{join.right_key}"))

        collect(tree)

        def item(i):
            return names[i] if aliases[i] == names[i] else f"{names[i]} AS {aliases[i]}"

        if body.kind == "right":
            a, b, on = conds[0]
            sql = f"{item(0)} RIGHT JOIN {item(1)} ON {on}"
        else:
            added = [0]
            parts = [item(0)]
            pending = list(conds)
            while pending:
                for k, (a, b, on) in enumerate(pending):
                    if (a in added) != (b in added):
                        new = b if a in added else a
                        parts.append(f"JOIN {item(new)} ON {on}")
                        added.append(new)
                        pending.pop(k)
                        break
                else:
                    raise EmitError("join graph is not connected")
        sql = sql if body.kind == "right" else " ".join(parts)
        return sql, qual, self._schema(body).names

    def _require_catalog(self):
        if self.catalog is None:
            raise EmitError("emitting a join needs the catalog")
        return self.catalog

    def block(self, node) -> str:
        head = node if isinstance(node, (Count, Sum, Project)) else None
        body = node.input if head is not None else node
        preds = []
        while isinstance(body, Select):
            preds.append(body.pred)
            body = body.input
        preds.reverse()
        if isinstance(body, Values):
            src = self._values(body)
            qual, cols = (lambda c: c), None
        else:
            src, qual, cols = self._from(body)
        items = self._select_list(head, qual, cols)
        sql = f"SELECT {', '.join(items)} FROM {src}"
        if preds:
            sql += " WHERE " + " AND ".join(self.pred(p, qual) for p in preds)
        if isinstance(head, (Count, Sum)) and head.group_by:
            sql += " GROUP BY " + ", ".join(qual(g) for g in head.group_by)
        return sql

    def _values(self, node: Values) -> str:
        rows = ", ".join(f"({_lit(v)})" for v in node.values)
        return f"(VALUES {rows}) AS {node.label or 'v'}({node.column})"

    def _star(self, qual, cols):
        return ["*"] if cols is None else [qual(c) for c in cols]

    def _select_list(self, head, qual, cols) -> list[str]:
        if head is None:
            return self._star(qual, cols)
        if isinstance(head, Project):
            out = []
            for a in head.attrs:
                if isinstance(a, Star):
                    out.extend(self._star(qual, cols))
                elif isinstance(a, Col):
                    out.append(qual(a.name))
                else:
                    out.append(f"{self.expr(a.value, qual)} AS {a.name}")
            return out
        out = [qual(g) for g in head.group_by]
        if isinstance(head, Count):
            arg = f"DISTINCT {qual(head.distinct)}" if head.distinct else "*"
            out.append(f"COUNT({arg}) AS {head.out_name}")
        else:
            col = qual(head.column)
            if head.func == "median":
                agg = (f"MEDIAN({col})" if self.dialect == "ansi"
                       else f"PERCENTILE_CONT(0.5) WITHIN GROUP (ORDER BY {col})")
            else:
                agg = f"{head.func.upper()}({col})"
                if head.func == "sum" and not head.group_by and self.empty_sum_zero:
                    agg = f"COALESCE({agg}, 0)"
            out.append(f"{agg} AS {head.out_name}")
        return out

    # -- Sample & Aggregate combiner ----------------------------------------

    def _winsorized(self, node: WinsorizedMean) -> str:
        src = self.ref(node.input)
        g = list(node.group_by)
        v, s, ell = node.value, node.sample_attr, node.subsamples
        if node.extensive:
            ids = ", ".join(f"({i})" for i in range(ell))
            if g:
                keys = ", ".join(g)
                grid_sql = (f"SELECT {', '.join('k.' + c for c in g)}, ids.{s} FROM "
                            f"(SELECT DISTINCT {keys} FROM {src}) AS k CROSS JOIN "
                            f"(VALUES {ids}) AS ids({s})")
            else:
                grid_sql = f"SELECT ids.{s} FROM (VALUES {ids}) AS ids({s})"
            grid = self.add_cte("saa_grid", grid_sql)
            on = " AND ".join(f"{src}.{c} = {grid}.{c}" for c in g + [s])
            filled_sql = (f"SELECT {', '.join(f'{grid}.{c}' for c in g + [s])}, "
                          f"CASE WHEN {src}.{v} IS NULL THEN 0 ELSE {src}.{v} END AS {v} "
                          f"FROM {src} RIGHT JOIN {grid} ON {on}")
            filled = self.add_cte("saa_filled", filled_sql)
        else:
            filled = src
        gsel = "".join(f"{c}, " for c in g)
        gby = f" GROUP BY {', '.join(g)}" if g else ""
        scale_mult = f"*{ell}" if node.extensive else ""
        if node.mode == "mean":
            return (f"SELECT {gsel}AVG({v}){scale_mult} AS {v}, 0.0 AS {node.scale_name} "
                    f"FROM {filled}{gby}")
        bounds = self.add_cte(
            "saa_bounds",
            f"SELECT {gsel}PERCENTILE_CONT(0.25) WITHIN GROUP (ORDER BY {v}) AS q1, "
            f"PERCENTILE_CONT(0.75) WITHIN GROUP (ORDER BY {v}) AS q3, COUNT(*) AS m "
            f"FROM {filled}{gby}")
        if g:
            join = f"JOIN {bounds} ON " + " AND ".join(f"{filled}.{c} = {bounds}.{c}" for c in g)
        else:
            join = f"CROSS JOIN {bounds}"
        lo, hi = f"2*{bounds}.q1-{bounds}.q3", f"2*{bounds}.q3-{bounds}.q1"
        clamped = self.add_cte(
            "saa_clamped",
            f"SELECT {''.join(f'{filled}.{c}, ' for c in g)}"
            f"CASE WHEN {filled}.{v} < {lo} THEN {lo} WHEN {filled}.{v} > {hi} THEN {hi} "
            f"ELSE {filled}.{v} END AS {v}, {lo} AS lo, {hi} AS hi, {bounds}.m AS m "
            f"FROM {filled} {join}")
        eps = _lit(float(node.epsilon))
        return (f"SELECT {gsel}AVG({v}){scale_mult} AS {v}, "
                f"CASE WHEN MAX(hi) > MAX(lo) THEN MAX(hi)-MAX(lo) ELSE 1.0 END"
                f"/(MAX(m)*{eps}){scale_mult} AS {node.scale_name} FROM {clamped}{gby}")


def emit_sql(q, dialect: str = "ansi", catalog=None) -> str:
    """Deterministic SQL text for ``q``.

    ``catalog`` is needed only when a join's column list has to be spelled
    out or qualified. In rewritten queries an ungrouped SUM is wrapped in
    COALESCE so that no input rows give 0, as in the evaluator.
    """
    top = q.top if isinstance(q, ra.QueryExpr) else q
    rewritten = isinstance(q, ra.QueryExpr) and q.provenance != "original"
    em = _Emitter(dialect, catalog, empty_sum_zero=rewritten)
    if isinstance(top, Table):
        main = f"SELECT * FROM {top.name}"
    elif isinstance(top, WinsorizedMean):
        main = em._winsorized(top)
    else:
        main = em.block(top)
    if not em.ctes:
        return main
    withs = ",\n".join(f"{n} AS ({sql})" for n, sql in em.ctes)
    return f"WITH {withs}\n{main}"

"""Independent reference implementations used to check the package.

They share no code with the evaluator or the rewriters: rows are plain
dicts, joins are nested loops, weights are computed pair by pair.
"""
from __future__ import annotations

import math
import operator
from collections import defaultdict

from dpsql import algebra as ra

_CMP = {"<": operator.lt, "<=": operator.le, "=": operator.eq, "<>": operator.ne,
        ">=": operator.ge, ">": operator.gt}
_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv,
          "%": operator.mod}


def _value(v, row):
    if isinstance(v, ra.Col):
        return row[v.name]
    if isinstance(v, ra.Lit):
        return v.value
    if isinstance(v, ra.BinOp):
        return _ARITH[v.op](_value(v.left, row), _value(v.right, row))
    raise NotImplementedError(type(v).__name__)


def naive_rows(node, db) -> list[dict]:
    """Rows of a join/filter/projection tree as dicts, by nested loops."""
    if isinstance(node, ra.Table):
        t = db[node.name]
        names = t.schema.names
        return [dict(zip(names, r)) for r in t.rows]
    if isinstance(node, ra.Select):
        p = node.pred
        return [r for r in naive_rows(node.input, db)
                if _CMP[p.op](_value(p.left, r), _value(p.right, r))]
    if isinstance(node, ra.Project):
        out = []
        for r in naive_rows(node.input, db):
            new = {}
            for a in node.attrs:
                if isinstance(a, ra.Star):
                    new.update(r)
                elif isinstance(a, ra.Col):
                    new[a.name] = r[a.name]
                else:
                    new[a.name] = _value(a.value, r)
            out.append(new)
        return out
    if isinstance(node, ra.Join):
        assert node.kind == "inner"
        left, right = naive_rows(node.left, db), naive_rows(node.right, db)
        out = []
        for a in left:
            for b in right:
                if a[node.left_key] == b[node.right_key]:
                    merged = dict(a)
                    merged.update(b)
                    out.append(merged)
        return out
    raise NotImplementedError(type(node).__name__)


def naive_aggregate(q, db) -> dict:
    """group tuple -> aggregate value for a Count or Sum(sum) query."""
    top = q.top if isinstance(q, ra.QueryExpr) else q
    rows = naive_rows(top.input, db)
    groups = defaultdict(list)
    for r in rows:
        groups[tuple(r[k] for k in top.group_by)].append(r)
    if not top.group_by and not groups:
        groups[()] = []
    out = {}
    for k, rs in groups.items():
        if isinstance(top, ra.Count):
            out[k] = len({r[top.distinct] for r in rs}) if top.distinct else len(rs)
        elif top.func == "sum":
            out[k] = math.fsum(r[top.column] for r in rs)
        else:
            raise NotImplementedError(top.func)
    return out


def weighted_join_mass(left_keys, right_keys) -> dict:
    """Per-key weight mass of a weighted join, pair by pair.

    Each side is a list of (key, weight). A pair (a, b) with equal keys
    contributes w_a * w_b / (||A_k|| + ||B_k||).
    """
    norm_l, norm_r = defaultdict(float), defaultdict(float)
    for k, w in left_keys:
        norm_l[k] += w
    for k, w in right_keys:
        norm_r[k] += w
    mass = defaultdict(float)
    for ka, wa in left_keys:
        for kb, wb in right_keys:
            if ka == kb:
                mass[ka] += wa * wb / (norm_l[ka] + norm_r[kb])
    return dict(mass)


def max_neighbor_change(q, db, protected, pool, evaluate_fn) -> float:
    """Largest per-cell change of ``q`` over all distance-1 neighbors (missing cells read 0)."""
    from dpsql.evaluator import neighbors

    base = evaluate_fn(q, db)
    worst = 0.0
    for nb in neighbors(db, protected, pool):
        other = evaluate_fn(q, nb)
        for k in set(base) | set(other):
            worst = max(worst, abs(base.get(k, 0) - other.get(k, 0)))
    return worst

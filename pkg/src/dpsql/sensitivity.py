"""Sensitivity analyses for counting queries.

Elastic sensitivity is computed as a polynomial in the distance ``k``
(non-negative coefficients), which makes monotonicity obvious and gives
the degree bound the smooth-sensitivity scan needs for its early exit.
Restricted sensitivity multiplies declared join multiplicity caps.

Only one table is protected; a neighbouring database adds or removes one
of its rows. Public tables never change, so their max frequencies do not
grow with ``k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .algebra import (
    Binding,
    Col,
    Count,
    Join,
    Project,
    QueryExpr,
    Select,
    Star,
    Sum,
    Table,
    Values,
    WinsorizedMean,
    attr_side,
    schema_of,
)
from .catalog import MANY, Catalog


class Unsupported(Exception):
    def __init__(self, reason: str, node=None):
        super().__init__(reason)
        self.reason = reason
        self.node = node


class ManyToManyJoin(Unsupported):
    pass


@dataclass(frozen=True)
class SensitivityResult:
    s: float
    kind: str  # "elastic-smooth" | "restricted"
    trace: tuple
    beta: float | None = None
    k_max: int | None = None
    argmax_k: int | None = None


# -- tiny polynomial helpers (coefficient lists, lowest degree first) -------


def _padd(a, b):
    n = max(len(a), len(b))
    return [(a[i] if i < len(a) else 0.0) + (b[i] if i < len(b) else 0.0) for i in range(n)]


def _pmul(a, b):
    out = [0.0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def _peval(p, k: float) -> float:
    acc = 0.0
    for c in reversed(p):
        acc = acc * k + c
    return acc


def _pdegree(p) -> int:
    d = 0
    for i, c in enumerate(p):
        if c != 0:
            d = i
    return d


def _pfmt(p) -> str:
    terms = []
    for i, c in enumerate(p):
        if c == 0:
            continue
        c = int(c) if float(c).is_integer() else c
        terms.append(f"{c}" if i == 0 else (f"{c}k" if i == 1 else f"{c}k^{i}"))
    return " + ".join(terms) or "0"


# -- elastic ----------------------------------------------------------------


def _top_count(q, kind: str):
    top = q.top if isinstance(q, QueryExpr) else q
    if isinstance(top, Sum):
        raise Unsupported(f"{kind} sensitivity supports counting queries only, not {top.func}", top)
    if not isinstance(top, Count):
        raise Unsupported(f"{kind} sensitivity needs a top-level count", top)
    return top


def _max_freq(attr: str, node, cat: Catalog, trace, depth):
    if isinstance(node, Table):
        info = cat.column(node.name, attr)
        if info.max_frequency is None:
            raise Unsupported(f"no maxFrequency declared for {node.name}.{attr}", node)
        if node.name == cat.protected_table:
            return [float(info.max_frequency), 1.0]
        return [float(info.max_frequency)]
    if isinstance(node, Select):
        return _max_freq(attr, node.input, cat, trace, depth)
    if isinstance(node, Project):
        for a in node.attrs:
            if isinstance(a, Col) and a.name == attr:
                return _max_freq(attr, node.input, cat, trace, depth)
            if isinstance(a, Binding) and a.name == attr:
                if isinstance(a.value, Col):
                    return _max_freq(a.value.name, node.input, cat, trace, depth)
                raise Unsupported(f"join key {attr!r} is computed; max frequency unknown", node)
            if isinstance(a, Star) and attr in schema_of(node.input, cat):
                return _max_freq(attr, node.input, cat, trace, depth)
        raise Unsupported(f"unknown column {attr!r}", node)
    if isinstance(node, Join):
        if attr_side(node, attr, cat) == "left":
            return _pmul(_max_freq(attr, node.left, cat, trace, depth),
                         _max_freq(node.right_key, node.right, cat, trace, depth))
        return _pmul(_max_freq(attr, node.right, cat, trace, depth),
                     _max_freq(node.left_key, node.left, cat, trace, depth))
    raise Unsupported("max frequency through a subquery aggregation is not supported", node)


def _stability(node, cat: Catalog, trace: list, depth: int):
    pad = "  " * depth
    if isinstance(node, Table):
        prot = node.name == cat.protected_table
        trace.append(f"{pad}table {node.name}: stability {1 if prot else 0}"
                     f"{' (protected)' if prot else ''}")
        return ([1.0] if prot else [0.0]), prot
    if isinstance(node, (Select, Project)):
        trace.append(f"{pad}{type(node).__name__.lower()}: pass-through")
        return _stability(node.input, cat, trace, depth + 1)
    if isinstance(node, Join):
        if node.kind != "inner":
            raise Unsupported("only inner equijoins are supported", node)
        trace.append(f"{pad}join {node.left_key} = {node.right_key}")
        s1, p1 = _stability(node.left, cat, trace, depth + 1)
        s2, p2 = _stability(node.right, cat, trace, depth + 1)
        if p1 and p2:
            ml = _max_freq(node.left_key, node.left, cat, trace, depth)
            mr = _max_freq(node.right_key, node.right, cat, trace, depth)
            s = _padd(_padd(_pmul(ml, s2), _pmul(mr, s1)), _pmul(s1, s2))
            why = f"self-join: mf_k({node.left_key})={_pfmt(ml)}, mf_k({node.right_key})={_pfmt(mr)}"
        elif p1:
            mr = _max_freq(node.right_key, node.right, cat, trace, depth)
            s = _pmul(s1, mr)
            why = f"mf_k({node.right_key}) on public side = {_pfmt(mr)}"
        elif p2:
            ml = _max_freq(node.left_key, node.left, cat, trace, depth)
            s = _pmul(s2, ml)
            why = f"mf_k({node.left_key}) on public side = {_pfmt(ml)}"
        else:
            s, why = [0.0], "no protected input"
        trace.append(f"{pad}  => stability {_pfmt(s)} ({why})")
        return s, p1 or p2
    if isinstance(node, (Count, Sum, WinsorizedMean)):
        raise Unsupported("subquery aggregation", node)
    if isinstance(node, Values):
        return [0.0], False
    raise Unsupported(f"unsupported node {type(node).__name__}", node)


def elastic_polynomial(q, catalog: Catalog):
    """Coefficients of E(q, k) in k, plus the per-node trace."""
    top = _top_count(q, "elastic")
    trace = [f"count{' distinct ' + top.distinct if top.distinct else ''}"
             f"{' grouped by ' + ', '.join(top.group_by) if top.group_by else ''}"]
    poly, prot = _stability(top.input, catalog, trace, 1)
    if not prot:
        raise Unsupported("query does not reference the protected table", top)
    return poly, trace


def elastic_sensitivity_at_k(q, catalog: Catalog, k: int) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    poly, _ = elastic_polynomial(q, catalog)
    return _peval(poly, k)


def smoothing_beta(epsilon: float, delta: float) -> float:
    if epsilon <= 0 or not 0 < delta < 1:
        raise ValueError("need epsilon > 0 and 0 < delta < 1")
    return epsilon / (2.0 * math.log(2.0 / delta))


def smooth_elastic_sensitivity(q, catalog: Catalog, epsilon: float, delta: float,
                               n: int) -> SensitivityResult:
    """max over k in [0, n] of exp(-beta k) E(q, k).

    The scan stops at the first k >= max(1, d / beta), d the degree of E:
    past that point exp(-beta k) k^d decreases, and E(k) <= E(k0) (k/k0)^d
    for non-negative coefficients, so no later term can beat term k0.
    """
    poly, trace = elastic_polynomial(q, catalog)
    beta = smoothing_beta(epsilon, delta)
    d = _pdegree(poly)
    stop = max(1.0, d / beta)
    best, arg = -1.0, 0
    k = 0
    while k <= n:
        v = math.exp(-beta * k) * _peval(poly, k)
        if v > best:
            best, arg = v, k
        if k >= stop:
            break
        k += 1
    trace = list(trace) + [
        f"E(q,k) = {_pfmt(poly)}",
        f"smoothing: beta = {beta:.6g}, max at k = {arg} -> s = {best:.6g}",
    ]
    return SensitivityResult(best, "elastic-smooth", tuple(trace), beta, n, arg)


# -- restricted -------------------------------------------------------------


def _cap(attr: str, node, cat: Catalog) -> float:
    if isinstance(node, Table):
        return cat.column(node.name, attr).join_cap
    if isinstance(node, Select):
        return _cap(attr, node.input, cat)
    if isinstance(node, Project):
        for a in node.attrs:
            if isinstance(a, Col) and a.name == attr:
                return _cap(attr, node.input, cat)
            if isinstance(a, Binding) and a.name == attr:
                return _cap(a.value.name, node.input, cat) if isinstance(a.value, Col) else MANY
            if isinstance(a, Star) and attr in schema_of(node.input, cat):
                return _cap(attr, node.input, cat)
        return MANY
    if isinstance(node, Join):
        if attr_side(node, attr, cat) == "left":
            return _cap(attr, node.left, cat) * _cap(node.right_key, node.right, cat)
        return _cap(attr, node.right, cat) * _cap(node.left_key, node.left, cat)
    if isinstance(node, (Count, Sum, WinsorizedMean)):
        return 1 if attr in node.group_by else MANY
    return MANY


def join_caps(join: Join, catalog: Catalog) -> tuple[float, float]:
    """Effective multiplicity caps of the left and right join keys."""
    return _cap(join.left_key, join.left, catalog), _cap(join.right_key, join.right, catalog)


def _fmt_cap(c) -> str:
    return "many" if c == MANY else ("one" if c == 1 else f"capped({int(c)})")


def _restricted(node, cat: Catalog, trace: list, depth: int):
    pad = "  " * depth
    if isinstance(node, Table):
        prot = node.name == cat.protected_table
        trace.append(f"{pad}table {node.name}: {'protected, s = 1' if prot else 'public, s = 0'}")
        return (1.0 if prot else 0.0), prot
    if isinstance(node, (Select, Project)):
        return _restricted(node.input, cat, trace, depth)
    if isinstance(node, Join):
        if node.kind != "inner":
            raise Unsupported("only inner equijoins are supported", node)
        trace.append(f"{pad}join {node.left_key} = {node.right_key}")
        s1, p1 = _restricted(node.left, cat, trace, depth + 1)
        s2, p2 = _restricted(node.right, cat, trace, depth + 1)
        cl, cr = join_caps(node, cat)
        if cl == MANY and cr == MANY:
            raise ManyToManyJoin(
                f"many-to-many join {node.left_key} = {node.right_key}", node)
        if p1 and p2:
            raise Unsupported("restricted sensitivity does not handle self-joins", node)
        if p1:
            factor, s = cr, s1 * cr
        elif p2:
            factor, s = cl, s2 * cl
        else:
            factor, s = 0, 0.0
        if s == MANY:
            raise ManyToManyJoin(
                f"join {node.left_key} = {node.right_key}: protected rows can match "
                f"unboundedly many partners", node)
        trace.append(f"{pad}  => cap {_fmt_cap(factor)} on partner side, s = {s:g}")
        return s, p1 or p2
    if isinstance(node, (Count, Sum, WinsorizedMean)):
        raise Unsupported("subquery aggregation", node)
    if isinstance(node, Values):
        return 0.0, False
    raise Unsupported(f"unsupported node {type(node).__name__}", node)


def restricted_sensitivity(q, catalog: Catalog) -> SensitivityResult:
    top = _top_count(q, "restricted")
    trace = ["count" + (f" grouped by {', '.join(top.group_by)}" if top.group_by else "")]
    s, prot = _restricted(top.input, catalog, trace, 1)
    if not prot:
        raise Unsupported("query does not reference the protected table", top)
    trace.append(f"restricted sensitivity s = {s:g}")
    return SensitivityResult(s, "restricted", tuple(trace))

"""Query transformation rules.

Each rule maps a query AST to a query AST. Mechanisms are built by
chaining them: Laplace noise, metadata propagation, aggregation
replacement, subsampling, and histogram bin completion.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .algebra import (
    NUMERIC,
    BinOp,
    Binding,
    Coalesce,
    Col,
    Count,
    Func,
    Join,
    Lit,
    Project,
    QueryExpr,
    Rand,
    RandInt,
    RowNum,
    Select,
    Star,
    Sum,
    Table,
    Values,
    WinsorizedMean,
    column_origin,
    group_keys,
    is_aggregation,
    schema_of,
    walk,
)


class RewriteError(Exception):
    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class UnsupportedConstruct(RewriteError):
    pass


class NonNumericOutput(RewriteError):
    pass


class AggregationMismatch(RewriteError):
    pass


class NoDomainSource(RewriteError):
    def __init__(self, column, node=None):
        super().__init__(f"no domain source for grouping column(s) {column!r}", node)
        self.column = column


# keeps 1 - 2|u| strictly positive even when the DBMS returns exactly 0 or 1
CONTRACTION = 0.999999999998


def _top(q):
    return q.top if isinstance(q, QueryExpr) else q


def _wrap(q, node, provenance: str | None = None):
    if isinstance(q, QueryExpr):
        return QueryExpr(node, provenance or "rewritten")
    return node


def output_attrs(node, catalog=None) -> list[tuple[str, str | None]]:
    """(name, type) of the output; structural when no catalog is given."""
    if catalog is not None:
        return list(schema_of(node, catalog).attrs)
    if isinstance(node, Count):
        return [(g, None) for g in node.group_by] + [(node.out_name, "int")]
    if isinstance(node, Sum):
        return [(g, None) for g in node.group_by] + [(node.out_name, "real")]
    if isinstance(node, WinsorizedMean):
        return [(g, None) for g in node.group_by] + [(node.value, "real"), (node.scale_name, "real")]
    if isinstance(node, Project) and not any(isinstance(a, Star) for a in node.attrs):
        inner = dict(output_attrs(node.input))
        out = []
        for a in node.attrs:
            if isinstance(a, Col):
                out.append((a.name, inner.get(a.name)))
            elif isinstance(a.value, Coalesce) and isinstance(a.value.expr, Col):
                out.append((a.name, inner.get(a.value.expr.name)))
            else:
                out.append((a.name, None))
        return out
    raise RewriteError("cannot determine output attributes without a catalog", node)


# ---------------------------------------------------------------------------
# Laplace noise


def laplace_sample(gamma_expr, u):
    """gamma * sign(u) * ln(1 - 2|u|): a Laplace(gamma) draw (negated) from u ~ U(-1/2, 1/2)."""
    return BinOp("*", BinOp("*", gamma_expr, Func("sign", u)),
                 Func("ln", BinOp("-", Lit(1), BinOp("*", Lit(2), Func("abs", u)))))


def _gamma_lit(gamma):
    if isinstance(gamma, (Col, Lit)):
        return gamma
    g = float(gamma)
    if not g > 0 or g == float("inf"):
        raise ValueError(f"noise scale must be positive and finite, got {gamma!r}")
    return Lit(int(g)) if g.is_integer() else Lit(g)


def laplace_rewrite(q, gamma, catalog=None, *, scale_column: str | None = None):
    """Add Laplace(gamma) noise to every aggregate output attribute.

    ``gamma`` is a positive number, or a column name given via
    ``scale_column`` holding a per-row scale (used by Sample & Aggregate).
    Group keys pass through untouched. Two projections are added: one
    drawing a centred uniform per noised attribute, one applying the
    inverse-CDF transform.
    """
    top = _top(q)
    attrs = output_attrs(top, catalog)
    keys = set(group_keys(top))
    if scale_column is not None:
        gexpr = Col(scale_column)
    else:
        gexpr = _gamma_lit(gamma)
    noised = [n for n, _ in attrs if n not in keys and n != scale_column]
    for n, t in attrs:
        if n in noised and t is not None and t not in NUMERIC:
            raise NonNumericOutput(f"aggregate attribute {n!r} has type {t}", top)
    if not noised:
        raise NonNumericOutput("no aggregate attribute to perturb", top)
    u_names = {n: "u" if len(noised) == 1 else f"u_{n}" for n in noised}
    unif = BinOp("*", BinOp("-", Rand(), Lit(0.5)), Lit(CONTRACTION))
    if top.label is None:
        top = replace(top, label="orig")
    uniform = Project((Star(),) + tuple(Binding(u_names[n], unif) for n in noised), top,
                      label="uniform")
    out = []
    for n, _ in attrs:
        if n in noised:
            out.append(Binding(n, BinOp("-", Col(n), laplace_sample(gexpr, Col(u_names[n])))))
        else:
            out.append(Col(n))
    return _wrap(q, Project(tuple(out), uniform))


# ---------------------------------------------------------------------------
# metadata propagation


@dataclass(frozen=True)
class MetadataFns:
    """How a metadata column ``name`` is created and carried through a query.

    ``join_update(left, right, join, name, catalog)`` rebuilds a join whose
    inputs both carry the column so the result carries exactly one.
    ``count_update(agg)`` gives the column's value after a subquery
    aggregation. ``None`` marks the construct as unsupported.
    """

    name: str
    init: Callable[[], object]
    join_update: Callable | None = None
    count_update: Callable | None = None


def _table_label(node, suffix: str) -> str | None:
    tables = [n.name for n in walk(node) if isinstance(n, Table)]
    return f"{tables[0]}_{suffix}" if len(set(tables)) == 1 else None


def _meta(node, fns: MetadataFns, catalog):
    m = fns.name
    if isinstance(node, (Table, Values)):
        return Project((Star(), Binding(m, fns.init())), node,
                       label=_table_label(node, m) if isinstance(node, Table) else None)
    if isinstance(node, Select):
        return replace(node, input=_meta(node.input, fns, catalog))
    if isinstance(node, Project):
        attrs = node.attrs
        if not any(isinstance(a, Star) for a in attrs):
            attrs = attrs + (Col(m),)
        return replace(node, attrs=attrs, input=_meta(node.input, fns, catalog))
    if isinstance(node, Join):
        if fns.join_update is None:
            raise UnsupportedConstruct(f"{m}: joins are not supported", node)
        left = _meta(node.left, fns, catalog)
        right = _meta(node.right, fns, catalog)
        return fns.join_update(left, right, node, m, catalog)
    if is_aggregation(node) or isinstance(node, WinsorizedMean):
        if fns.count_update is None:
            raise UnsupportedConstruct(f"{m}: subquery aggregation is not supported", node)
        inner = replace(node, input=_meta(node.input, fns, catalog))
        return Project((Star(), Binding(m, fns.count_update(inner))), inner)
    raise UnsupportedConstruct(f"unsupported node {type(node).__name__}", node)


def metadata_rewrite(r, fns: MetadataFns, catalog=None):
    """Attach metadata column ``fns.name`` to every row of every base table.

    At a top-level aggregation the column is consumed and does not appear
    in the output, so the query's schema is unchanged.
    """
    top = _top(r)
    if is_aggregation(top):
        out = replace(top, input=_meta(top.input, fns, catalog))
    else:
        out = _meta(top, fns, catalog)
    return _wrap(r, out, "rewritten") if isinstance(r, QueryExpr) else out


def _without(schema_names, drop):
    return tuple(Col(n) for n in schema_names if n not in drop)


def wpinq_join_update(left, right, join: Join, m: str, catalog):
    """Rescale joined weights: w = w_l * w_r / (norm_l(k) + norm_r(k)).

    norm_x(k) is the total weight on side x with join key k.
    """
    if catalog is None:
        raise RewriteError("weighted join rewriting needs the catalog")
    lk, rk = join.left_key, join.right_key
    lnames = schema_of(left, catalog).names
    rnames = schema_of(right, catalog).names
    wl, wr, nl, nr = f"{m}_l", f"{m}_r", "norm_l", "norm_r"
    lw = Project(_without(lnames, {m}) + (Binding(wl, Col(m)),), left,
                 label=_table_label(left, "left"))
    rw = Project(_without(rnames, {m}) + (Binding(wr, Col(m)),), right,
                 label=_table_label(right, "right"))
    lnorm = Sum(m, left, (lk,), alias=nl, label=_table_label(left, "norms"))
    rnorm = Sum(m, right, (rk,), alias=nr, label=_table_label(right, "norms"))
    joined = Join(Join(lw, lnorm, lk, lk), Join(rw, rnorm, rk, rk), lk, rk)
    names = schema_of(joined, catalog).names
    weight = BinOp("/", BinOp("*", Col(wl), Col(wr)), BinOp("+", Col(nl), Col(nr)))
    return Project(_without(names, {wl, wr, nl, nr}) + (Binding(m, weight),), joined,
                   label="joined")


def wpinq_fns() -> MetadataFns:
    return MetadataFns("weight", lambda: Lit(1.0), wpinq_join_update, None)


# ---------------------------------------------------------------------------
# aggregation replacement


def _agg_kind(node):
    if isinstance(node, Count):
        return ("count-distinct", node.distinct) if node.distinct else "count"
    if isinstance(node, Sum):
        return (node.func, node.column)
    return None


def replace_aggregation(q, frm, to):
    """Swap the outermost aggregation; grouping and output name are kept.

    ``frm``/``to`` are ``"count"`` or ``("sum", column)``.
    """
    top = _top(q)
    kind = _agg_kind(top)
    if kind != frm and not (frm == "count" and kind == "count"):
        raise AggregationMismatch(f"outermost aggregation is {kind!r}, expected {frm!r}", top)
    name = top.out_name
    if to == "count":
        new = Count(top.input, top.group_by, alias=name, label=top.label)
    else:
        func, col = to
        new = Sum(col, top.input, top.group_by, func=func, alias=name, label=top.label)
    return _wrap(q, new)


# ---------------------------------------------------------------------------
# subsampling


@dataclass(frozen=True)
class AggregatorPlan:
    """How per-subsample answers are combined.

    ``mode`` ``"winsorized"`` clamps to the widened interquartile range and
    adds Laplace noise scaled to that range; ``"mean"`` is a plain average
    with no noise (useful for checking shape restoration).
    """

    epsilon: float = 1.0
    mode: str = "winsorized"


SAMPLE_ATTR = "samp"


def subsample_rewrite(q, n: int, aggregator: AggregatorPlan, catalog=None, *,
                      assignment: str = "row_number_mod", bins=None, complete: bool = False):
    """Answer the query on ``n`` disjoint subsamples and combine the answers.

    Returns a query with the original output schema. With
    ``complete=True`` (or explicit ``bins``) absent groups are filled in
    before noise is added.
    """
    top = _top(q)
    if not is_aggregation(top):
        raise UnsupportedConstruct("subsampling needs an aggregation at the top", top)
    if not isinstance(n, int) or n < 1:
        raise ValueError("number of subsamples must be a positive integer")
    for node in list(walk(top))[1:]:
        if isinstance(node, Join):
            raise UnsupportedConstruct("join: subsampling changes the meaning of joins", node)
        if is_aggregation(node):
            raise UnsupportedConstruct("subsampling does not support subquery aggregation", node)
    if isinstance(top, Count) and top.distinct:
        raise UnsupportedConstruct("count distinct is not additive over subsamples", top)
    if assignment == "row_number_mod":
        init = lambda: BinOp("%", RowNum(), Lit(n))  # noqa: E731
    elif assignment == "rand_int":
        init = lambda: RandInt(n)  # noqa: E731
    else:
        raise ValueError(f"unknown subsample assignment {assignment!r}")
    fns = MetadataFns(SAMPLE_ATTR, init)
    inner = replace(top, input=_meta(top.input, fns, catalog),
                    group_by=top.group_by + (SAMPLE_ATTR,), label="subsamples")
    extensive = isinstance(top, Count) or top.func == "sum"
    agg = WinsorizedMean(inner, top.group_by, top.out_name, SAMPLE_ATTR, n,
                         aggregator.epsilon, extensive, aggregator.mode, label="orig")
    body = agg
    if aggregator.mode != "mean":
        if complete or bins is not None:
            floor = 1.0 / aggregator.epsilon if extensive else 1.0 / (n * aggregator.epsilon)
            body = complete_histogram_bins(
                body, catalog, bins=bins,
                defaults={top.out_name: Lit(0.0), agg.scale_name: Lit(floor)})
        body = _top(laplace_rewrite(body, None, catalog, scale_column=agg.scale_name))
    if isinstance(body, Project):
        body = replace(body, label="noised")
    out = Project(tuple(Col(a) for a in top.group_by) + (Col(top.out_name),), body)
    return _wrap(q, out, "rewritten:saa")


# ---------------------------------------------------------------------------
# histogram bin completion


def domain_of(q, catalog, column: str):
    """(table, column) holding every value of grouping column ``column``."""
    origin = column_origin(_top(q), column, catalog)
    if origin is None:
        return None
    table, col = origin
    try:
        return catalog.column(table, col).domain_source
    except KeyError:
        return None


def complete_histogram_bins(q, catalog, bins=None, defaults=None):
    """Right-join the grouped result to its value domain so every bin appears once.

    Absent bins get ``defaults[attr]`` (0 when unspecified). ``bins`` is an
    explicit list of bin values used instead of a catalog domain.
    """
    top = _top(q)
    keys = group_keys(top)
    if len(keys) != 1:
        raise NoDomainSource(list(keys) or None, top)
    g = keys[0]
    attrs = output_attrs(top, catalog)
    gtype = dict(attrs).get(g)
    if bins is not None:
        values = tuple(_coerce_bin(b, gtype) for b in bins)
        domain, dc = Values(g, gtype or "int", values, label="bins"), g
    else:
        src = domain_of(top, catalog, g)
        if src is None:
            raise NoDomainSource(g, top)
        domain, dc = Table(src[0]), src[1]
    defaults = dict(defaults or {})
    if top.label is None:
        top = replace(top, label="orig")
    joined = Join(top, domain, g, dc, kind="right", completion=True)
    out = []
    for n, _ in attrs:
        if n == g:
            out.append(Col(g) if g == dc else Binding(g, Col(dc)))
        else:
            out.append(Binding(n, Coalesce(Col(n), defaults.get(n, Lit(0)))))
    return _wrap(q, Project(tuple(out), joined, label="completed"))


def _coerce_bin(v, t):
    if t == "int":
        return int(v)
    if t == "real":
        return float(v)
    if t == "boolean":
        return v if isinstance(v, bool) else str(v).lower() in ("true", "1")
    return str(v)

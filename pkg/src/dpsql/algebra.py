"""Core relational algebra for statistical queries.

Value expressions, relational operators and the aggregation-rooted
``QueryExpr``. Every node is a frozen dataclass so trees can be hashed,
compared structurally and shared between threads.

Relational nodes carry an optional ``label``. Labels never take part in
equality; the SQL emitter uses them to name the ``WITH`` clause a node
ends up in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

SCALAR_TYPES = ("int", "real", "string", "boolean")
NUMERIC = ("int", "real")
COMPARISONS = ("<", "<=", "=", "<>", ">=", ">")
ARITH = ("+", "-", "*", "/", "%")
FUNCS = ("ln", "abs", "sign")
AGG_FUNCS = ("sum", "avg", "median")


class AlgebraError(Exception):
    """Base class for type-checking failures. ``node`` is the offending node."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class UnknownTable(AlgebraError):
    pass


class UnknownColumn(AlgebraError):
    pass


class TypeMismatch(AlgebraError):
    pass


class NotStatistical(AlgebraError):
    pass


# ---------------------------------------------------------------------------
# value expressions


@dataclass(frozen=True)
class Col:
    name: str


@dataclass(frozen=True)
class Lit:
    value: Union[int, float, str, bool]


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ValueExpr"
    right: "ValueExpr"

    def __post_init__(self):
        if self.op not in ARITH:
            raise ValueError(f"unknown arithmetic operator {self.op!r}")


@dataclass(frozen=True)
class Rand:
    """Uniform draw from [0, 1)."""


@dataclass(frozen=True)
class RandInt:
    n: int

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ValueError("randInt needs a positive integer bound")


@dataclass(frozen=True)
class RowNum:
    """1-based position of the row in its input (``ROW_NUMBER() OVER ()``)."""


@dataclass(frozen=True)
class Func:
    name: str
    arg: "ValueExpr"

    def __post_init__(self):
        if self.name not in FUNCS:
            raise ValueError(f"unknown function {self.name!r}")


@dataclass(frozen=True)
class Coalesce:
    """Replace an outer-join null with ``default``."""

    expr: "ValueExpr"
    default: Lit


ValueExpr = Union[Col, Lit, BinOp, Rand, RandInt, RowNum, Func, Coalesce]


@dataclass(frozen=True)
class Star:
    """All input attributes, in input order."""


@dataclass(frozen=True)
class Binding:
    name: str
    value: ValueExpr


AttrExpr = Union[Col, Binding, Star]


@dataclass(frozen=True)
class Predicate:
    op: str
    left: ValueExpr
    right: ValueExpr

    def __post_init__(self):
        if self.op not in COMPARISONS:
            raise ValueError(f"unknown comparison {self.op!r}")


# ---------------------------------------------------------------------------
# relational expressions


@dataclass(frozen=True)
class Table:
    name: str
    label: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Join:
    left: "RelExpr"
    right: "RelExpr"
    left_key: str
    right_key: str
    kind: str = "inner"
    completion: bool = False
    label: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("inner", "right"):
            raise ValueError(f"unknown join kind {self.kind!r}")
        if self.kind == "right" and not self.completion:
            raise TypeMismatch("right-outer joins are reserved for histogram completion", self)


@dataclass(frozen=True)
class Project:
    attrs: tuple
    input: "RelExpr"
    label: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(self.attrs))


@dataclass(frozen=True)
class Select:
    pred: Predicate
    input: "RelExpr"
    label: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Count:
    input: "RelExpr"
    group_by: tuple = ()
    distinct: str | None = None
    alias: str | None = None
    label: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "group_by", tuple(self.group_by))
        if len(set(self.group_by)) != len(self.group_by):
            raise TypeMismatch("groupBy columns must be distinct", self)

    @property
    def out_name(self) -> str:
        return self.alias or "count"


@dataclass(frozen=True)
class Sum:
    """Sum over ``column``; ``func`` may also be avg or median.

    avg and median are estimator markers only reachable through
    Sample & Aggregate.
    """

    column: str
    input: "RelExpr"
    group_by: tuple = ()
    func: str = "sum"
    alias: str | None = None
    label: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "group_by", tuple(self.group_by))
        if self.func not in AGG_FUNCS:
            raise ValueError(f"unknown aggregation {self.func!r}")
        if len(set(self.group_by)) != len(self.group_by):
            raise TypeMismatch("groupBy columns must be distinct", self)

    @property
    def out_name(self) -> str:
        return self.alias or f"{self.func}_{self.column}"


@dataclass(frozen=True)
class Values:
    """Inline single-column relation; used for analyst-supplied histogram bins."""

    column: str
    type: str
    values: tuple
    label: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class WinsorizedMean:
    """Private aggregation of per-subsample results (Sample & Aggregate).

    ``input`` has one row per (group, subsample) with the estimate in
    ``value``. Output: ``group_by + (value, scale_name)`` where
    ``scale_name`` is the Laplace scale the caller still has to apply.
    ``mode`` is ``"winsorized"`` (clamp to the widened interquartile
    range) or ``"mean"`` (plain average, scale 0). ``extensive`` marks
    count/sum estimates: missing subsamples count as 0 and the mean is
    multiplied back by the number of subsamples.
    """

    input: "RelExpr"
    group_by: tuple
    value: str
    sample_attr: str
    subsamples: int
    epsilon: float
    extensive: bool
    mode: str = "winsorized"
    scale_name: str = "noise_scale"
    label: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "group_by", tuple(self.group_by))
        if self.mode not in ("winsorized", "mean"):
            raise ValueError(f"unknown aggregator mode {self.mode!r}")


RelExpr = Union[Table, Join, Project, Select, Count, Sum, Values, WinsorizedMean]
AGGREGATIONS = (Count, Sum)


def is_aggregation(node) -> bool:
    return isinstance(node, AGGREGATIONS)


@dataclass(frozen=True)
class QueryExpr:
    """A statistical query. Original queries must be rooted at Count or Sum."""

    top: RelExpr
    provenance: str = "original"

    def __post_init__(self):
        if self.provenance == "original" and not is_aggregation(self.top):
            raise NotStatistical(
                "query must end in an aggregation; raw-row queries are not statistical", self.top
            )


# ---------------------------------------------------------------------------
# schemas


@dataclass(frozen=True)
class Schema:
    attrs: tuple  # of (name, type)

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(tuple(a) for a in self.attrs))
        names = [a[0] for a in self.attrs]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise TypeMismatch(f"duplicate attribute names {dup}")

    @property
    def names(self) -> list[str]:
        return [a[0] for a in self.attrs]

    def type_of(self, name: str) -> str:
        for n, t in self.attrs:
            if n == name:
                return t
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __contains__(self, name) -> bool:
        return any(a[0] == name for a in self.attrs)

    def __iter__(self) -> Iterator:
        return iter(self.attrs)

    def __len__(self) -> int:
        return len(self.attrs)


def _resolve_table(source, name: str, node) -> Schema:
    # source: Catalog, or mapping of table name -> object with a .schema
    if hasattr(source, "table_schema"):
        try:
            return source.table_schema(name)
        except KeyError:
            raise UnknownTable(f"unknown table {name!r}", node) from None
    try:
        return source[name].schema
    except KeyError:
        raise UnknownTable(f"unknown table {name!r}", node) from None


def value_type(v: ValueExpr, schema: Schema, node=None) -> str:
    """Static type of a value expression under ``schema``."""
    if isinstance(v, Col):
        if v.name not in schema:
            raise UnknownColumn(f"unknown column {v.name!r}", node)
        return schema.type_of(v.name)
    if isinstance(v, Lit):
        if isinstance(v.value, bool):
            return "boolean"
        if isinstance(v.value, int):
            return "int"
        if isinstance(v.value, float):
            return "real"
        if isinstance(v.value, str):
            return "string"
        raise TypeMismatch(f"unsupported literal {v.value!r}", node)
    if isinstance(v, (Rand,)):
        return "real"
    if isinstance(v, (RandInt, RowNum)):
        return "int"
    if isinstance(v, BinOp):
        lt, rt = value_type(v.left, schema, node), value_type(v.right, schema, node)
        if lt not in NUMERIC or rt not in NUMERIC:
            raise TypeMismatch(f"arithmetic {v.op!r} on non-numeric operands", node)
        if v.op == "/":
            return "real"
        if v.op == "%":
            if lt != "int" or rt != "int":
                raise TypeMismatch("modulo needs integer operands", node)
            return "int"
        return "int" if lt == rt == "int" else "real"
    if isinstance(v, Func):
        t = value_type(v.arg, schema, node)
        if t not in NUMERIC:
            raise TypeMismatch(f"{v.name} of non-numeric value", node)
        return "real" if v.name == "ln" else t
    if isinstance(v, Coalesce):
        t = value_type(v.expr, schema, node)
        d = value_type(v.default, schema, node)
        if t != d and not (t in NUMERIC and d in NUMERIC):
            raise TypeMismatch("coalesce default type differs from expression", node)
        return t
    raise TypeMismatch(f"not a value expression: {v!r}", node)


def _comparable(a: str, b: str) -> bool:
    return a == b or (a in NUMERIC and b in NUMERIC)


def join_output(left: Schema, right: Schema, node: Join) -> Schema:
    """Left attributes then right ones; a same-named key pair collapses to one column."""
    merged = node.left_key == node.right_key
    attrs = list(left.attrs)
    if merged and node.kind == "right":
        i = left.index(node.left_key)
        attrs[i] = (node.left_key, right.type_of(node.right_key))
    for a in right.attrs:
        if merged and a[0] == node.right_key:
            continue
        attrs.append(a)
    try:
        return Schema(attrs)
    except TypeMismatch as e:
        raise TypeMismatch(f"ambiguous columns in join: {e}", node) from None


def schema_of(expr, catalog) -> Schema:
    """Output schema of ``expr``; ``catalog`` is a Catalog or a name->Table mapping."""
    if isinstance(expr, QueryExpr):
        expr = expr.top
    if isinstance(expr, Table):
        return _resolve_table(catalog, expr.name, expr)
    if isinstance(expr, Values):
        if expr.type not in SCALAR_TYPES:
            raise TypeMismatch(f"unknown type {expr.type!r}", expr)
        return Schema([(expr.column, expr.type)])
    if isinstance(expr, Select):
        s = schema_of(expr.input, catalog)
        lt = value_type(expr.pred.left, s, expr)
        rt = value_type(expr.pred.right, s, expr)
        if not _comparable(lt, rt):
            raise TypeMismatch(f"cannot compare {lt} with {rt}", expr)
        return s
    if isinstance(expr, Project):
        s = schema_of(expr.input, catalog)
        out = []
        for a in expr.attrs:
            if isinstance(a, Star):
                out.extend(s.attrs)
            elif isinstance(a, Col):
                out.append((a.name, value_type(a, s, expr)))
            elif isinstance(a, Binding):
                out.append((a.name, value_type(a.value, s, expr)))
            else:
                raise TypeMismatch(f"not an attribute expression: {a!r}", expr)
        try:
            return Schema(out)
        except TypeMismatch as e:
            raise TypeMismatch(f"projection: {e}", expr) from None
    if isinstance(expr, Join):
        ls = schema_of(expr.left, catalog)
        rs = schema_of(expr.right, catalog)
        if expr.left_key not in ls:
            raise UnknownColumn(f"unknown join key {expr.left_key!r}", expr)
        if expr.right_key not in rs:
            raise UnknownColumn(f"unknown join key {expr.right_key!r}", expr)
        if not _comparable(ls.type_of(expr.left_key), rs.type_of(expr.right_key)):
            raise TypeMismatch("join keys have incomparable types", expr)
        return join_output(ls, rs, expr)
    if isinstance(expr, Count):
        s = schema_of(expr.input, catalog)
        out = [(g, _need(s, g, expr)) for g in expr.group_by]
        if expr.distinct is not None:
            _need(s, expr.distinct, expr)
        out.append((expr.out_name, "int"))
        try:
            return Schema(out)
        except TypeMismatch as e:
            raise TypeMismatch(f"aggregation: {e}", expr) from None
    if isinstance(expr, Sum):
        s = schema_of(expr.input, catalog)
        out = [(g, _need(s, g, expr)) for g in expr.group_by]
        t = _need(s, expr.column, expr)
        if t not in NUMERIC:
            raise TypeMismatch(f"{expr.func} over non-numeric column {expr.column!r}", expr)
        out.append((expr.out_name, t if expr.func == "sum" else "real"))
        try:
            return Schema(out)
        except TypeMismatch as e:
            raise TypeMismatch(f"aggregation: {e}", expr) from None
    if isinstance(expr, WinsorizedMean):
        s = schema_of(expr.input, catalog)
        out = [(g, _need(s, g, expr)) for g in expr.group_by]
        _need(s, expr.sample_attr, expr)
        if _need(s, expr.value, expr) not in NUMERIC:
            raise TypeMismatch("winsorized mean over non-numeric value", expr)
        out += [(expr.value, "real"), (expr.scale_name, "real")]
        return Schema(out)
    raise TypeMismatch(f"not a relational expression: {expr!r}", expr)


def _need(schema: Schema, name: str, node) -> str:
    if name not in schema:
        raise UnknownColumn(f"unknown column {name!r}", node)
    return schema.type_of(name)


# ---------------------------------------------------------------------------
# traversal helpers


def children(node) -> tuple:
    if isinstance(node, Join):
        return (node.left, node.right)
    if isinstance(node, (Project, Select, Count, Sum, WinsorizedMean)):
        return (node.input,)
    return ()


def walk(node) -> Iterator:
    """Pre-order traversal of relational nodes."""
    if isinstance(node, QueryExpr):
        node = node.top
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def referenced_tables(expr) -> set[str]:
    return {n.name for n in walk(expr) if isinstance(n, Table)}


def table_occurrences(expr) -> list[str]:
    return [n.name for n in walk(expr) if isinstance(n, Table)]


def group_keys(node) -> tuple:
    """Grouping (bin) attributes visible in the output of ``node``."""
    if isinstance(node, QueryExpr):
        node = node.top
    if isinstance(node, (Count, Sum, WinsorizedMean)):
        return node.group_by
    if isinstance(node, Select):
        return group_keys(node.input)
    if isinstance(node, Project):
        inner = set(group_keys(node.input))
        keys = []
        for a in node.attrs:
            if isinstance(a, Star):
                keys.extend(k for k in group_keys(node.input) if k not in keys)
            elif isinstance(a, Col) and a.name in inner:
                keys.append(a.name)
            elif isinstance(a, Binding) and isinstance(a.value, Col) and a.value.name in inner:
                keys.append(a.name)
        return tuple(keys)
    if isinstance(node, Join) and node.completion:
        return (node.left_key,) if node.left_key == node.right_key else (node.right_key,)
    return ()


def column_origin(node, attr: str, catalog):
    """Trace ``attr`` back to a base ``(table, column)``; None when computed."""
    if isinstance(node, QueryExpr):
        node = node.top
    if isinstance(node, Table):
        return (node.name, attr)
    if isinstance(node, Select):
        return column_origin(node.input, attr, catalog)
    if isinstance(node, Project):
        for a in node.attrs:
            if isinstance(a, Col) and a.name == attr:
                return column_origin(node.input, attr, catalog)
            if isinstance(a, Binding) and a.name == attr:
                if isinstance(a.value, Col):
                    return column_origin(node.input, a.value.name, catalog)
                return None
            if isinstance(a, Star) and attr in schema_of(node.input, catalog):
                return column_origin(node.input, attr, catalog)
        return None
    if isinstance(node, Join):
        side = attr_side(node, attr, catalog)
        return column_origin(node.left if side == "left" else node.right, attr, catalog)
    if isinstance(node, (Count, Sum, WinsorizedMean)):
        if attr in node.group_by:
            return column_origin(node.input, attr, catalog)
        return None
    return None


def attr_side(join: Join, attr: str, catalog) -> str:
    """Which input of ``join`` provides ``attr`` ("left" or "right")."""
    if attr in schema_of(join.left, catalog):
        if join.kind == "right" and attr == join.left_key == join.right_key:
            return "right"
        return "left"
    if attr in schema_of(join.right, catalog):
        return "right"
    raise UnknownColumn(f"unknown column {attr!r}", join)


def map_children(node, fn):
    """Rebuild ``node`` with ``fn`` applied to each relational child."""
    from dataclasses import replace

    if isinstance(node, Join):
        return replace(node, left=fn(node.left), right=fn(node.right))
    if isinstance(node, (Project, Select, Count, Sum, WinsorizedMean)):
        return replace(node, input=fn(node.input))
    return node

"""Recursive-descent parser for the supported statistical SQL subset."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .. import algebra as ra
from ..algebra import Binding, Col, Count, Join, Lit, Predicate, Project, QueryExpr, Select, Star, Sum, Table


class ParseError(Exception):
    def __init__(self, position: int, message: str):
        super().__init__(f"{message} (at offset {position})")
        self.position = position
        self.message = message


class UnsupportedFeature(Exception):
    def __init__(self, feature: str, detail: str = "", position: int | None = None):
        msg = f"unsupported feature: {feature}"
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.feature = feature
        self.position = position


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<str>'(?:[^']|'')*')
  | (?P<qid>"(?:[^"]|"")+")
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<>|!=|::|[=<>(),.*+\-/%;])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "select", "from", "where", "group", "by", "join", "inner", "on", "and", "or", "not",
    "as", "with", "count", "sum", "avg", "median", "distinct", "left", "right", "full",
    "outer", "cross", "having", "order", "limit", "union", "intersect", "except", "true",
    "false", "percentile_cont", "within", "natural", "using", "offset", "all", "null",
    "is", "in", "like", "between", "case", "exists",
}


@dataclass(frozen=True)
class Tok:
    kind: str  # num | str | id | kw | op | eof
    value: str
    pos: int


def tokenize(text: str) -> list[Tok]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(pos, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        val = m.group()
        if kind == "id":
            low = val.lower()
            out.append(Tok("kw" if low in KEYWORDS else "id", low, pos))
        elif kind == "qid":
            out.append(Tok("id", val[1:-1].replace('""', '"'), pos))
        elif kind != "ws":
            out.append(Tok(kind, val, pos))
        pos = m.end()
    out.append(Tok("eof", "", len(text)))
    return out


_STRUCTURAL = {
    "select", "from", "where", "group", "by", "join", "inner", "on", "and", "or", "as",
    "with", "left", "right", "full", "cross", "having", "order", "limit", "union",
    "natural", "using",
}
_CMP_OPS = {"<", "<=", "=", "<>", "!=", ">=", ">"}
_UNSUPPORTED_KW = {
    "having": "having", "order": "order-by", "limit": "limit", "offset": "limit",
    "union": "set-operation", "intersect": "set-operation", "except": "set-operation",
}


@dataclass
class _Source:
    """One FROM item: its AST and the mapping of visible column -> AST column."""

    alias: str
    node: object
    cols: dict


class _Parser:
    def __init__(self, text: str, catalog):
        self.toks = tokenize(text)
        self.i = 0
        self.catalog = catalog
        self.ctes: dict = {}

    # -- token helpers ------------------------------------------------------

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k=1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, value, kind=None) -> bool:
        t = self.tok
        return t.value == value and (kind is None or t.kind == kind) and t.kind in ("kw", "op")

    def accept(self, value) -> bool:
        if self.at(value):
            self.i += 1
            return True
        return False

    def expect(self, value):
        if not self.accept(value):
            raise ParseError(self.tok.pos, f"expected {value.upper()!s}, found {self.tok.value or 'end of input'!r}")

    def ident(self) -> str:
        t = self.tok
        if t.kind != "id":
            raise ParseError(t.pos, f"expected identifier, found {t.value or 'end of input'!r}")
        self.i += 1
        return t.value

    # -- grammar ----------------------------------------------------------

    def query(self):
        if self.accept("with"):
            while True:
                pos = self.tok.pos
                name = self.ident()
                if name in self.ctes:
                    raise ParseError(pos, f"duplicate WITH name {name!r}")
                self.expect("as")
                self.expect("(")
                self.ctes[name] = self.select(nested=True)
                self.expect(")")
                if not self.accept(","):
                    break
        node = self.select(nested=False)
        self.accept(";")
        t = self.tok
        if t.kind != "eof":
            if t.value in _UNSUPPORTED_KW:
                raise UnsupportedFeature(_UNSUPPORTED_KW[t.value], position=t.pos)
            raise ParseError(t.pos, f"unexpected {t.value!r} after query")
        return node

    def select(self, nested: bool):
        self.expect("select")
        if self.at("distinct") or self.at("all"):
            raise UnsupportedFeature("distinct", "SELECT DISTINCT", self.tok.pos)
        items = self.select_items()
        self.expect("from")
        sources, conds = self.from_clause()
        if self.accept("where"):
            conds += self.conjunction()
        group = []
        if self.accept("group"):
            self.expect("by")
            group = [self.colref()]
            while self.accept(","):
                group.append(self.colref())
        t = self.tok
        if t.value in _UNSUPPORTED_KW and t.kind == "kw":
            raise UnsupportedFeature(_UNSUPPORTED_KW[t.value], position=t.pos)
        body, scope = self.combine(sources, conds)
        return self.build(items, body, scope, group, nested)

    # select list: ("star",) | ("col", ref, alias) | ("agg", func, ref|None, distinct, alias)
    def select_items(self):
        items = [self.select_item()]
        while self.accept(","):
            items.append(self.select_item())
        return items

    def select_item(self):
        t = self.tok
        if self.accept("*"):
            return ("star", t.pos)
        if t.kind == "kw" and t.value in ("count", "sum", "avg", "median", "percentile_cont"):
            item = self.aggregate()
        elif t.kind == "id":
            ref = self.colref()
            if self.at("("):
                raise UnsupportedFeature("function", f"{ref[1]}(...)", t.pos)
            if self.tok.kind == "op" and self.tok.value in "+-*/%":
                raise UnsupportedFeature("computed-column", position=self.tok.pos)
            item = ["col", ref, None, t.pos]
        elif t.kind in ("num", "str") or t.value in ("true", "false"):
            raise UnsupportedFeature("constant-column", position=t.pos)
        else:
            raise ParseError(t.pos, f"expected select item, found {t.value or 'end of input'!r}")
        if self.accept("as"):
            item[2] = self.name()
        elif self.tok.kind == "id":
            item[2] = self.ident()
        return tuple(item)

    def aggregate(self):
        t = self.tok
        func = t.value
        self.i += 1
        if func == "percentile_cont":
            self.expect("(")
            num = self.tok
            if num.kind != "num" or float(num.value) != 0.5:
                raise UnsupportedFeature("percentile", "only the median is supported", num.pos)
            self.i += 1
            self.expect(")")
            self.expect("within")
            self.expect("group")
            self.expect("(")
            self.expect("order")
            self.expect("by")
            ref = self.colref()
            self.expect(")")
            return ["agg", ("median", ref, False), None, t.pos]
        self.expect("(")
        distinct = False
        if func == "count" and self.accept("*"):
            ref = None
        else:
            if self.accept("distinct"):
                if func != "count":
                    raise UnsupportedFeature("distinct", f"{func.upper()}(DISTINCT ...)", t.pos)
                distinct = True
            if self.tok.kind != "id":
                raise UnsupportedFeature("computed-aggregate-argument", position=self.tok.pos)
            ref = self.colref()
        if not self.at(")"):
            if ref is None:
                self.expect(")")
            raise UnsupportedFeature("computed-aggregate-argument", position=self.tok.pos)
        self.expect(")")
        if func == "count" and ref is not None and not distinct:
            ref = None  # no nulls in base data, so COUNT(col) = COUNT(*)
        return ["agg", (func, ref, distinct), None, t.pos]

    def name(self) -> str:
        """Identifier in a position where keywords are allowed too (aliases, qualified columns)."""
        t = self.tok
        if t.kind == "kw" and t.value not in _STRUCTURAL:
            self.i += 1
            return t.value
        return self.ident()

    def colref(self):
        pos = self.tok.pos
        a = self.ident()
        if self.accept("."):
            return (a, self.name(), pos)
        return (None, a, pos)

    def from_clause(self):
        sources = [self.from_item()]
        conds = []
        while True:
            t = self.tok
            if self.accept(","):
                sources.append(self.from_item())
                continue
            if t.value in ("left", "right", "full", "outer"):
                raise UnsupportedFeature("outer-join", position=t.pos)
            if t.value in ("cross", "natural"):
                raise UnsupportedFeature("cross-join" if t.value == "cross" else "natural-join",
                                         position=t.pos)
            if self.accept("inner"):
                self.expect("join")
            elif not self.accept("join"):
                break
            sources.append(self.from_item())
            if self.at("using"):
                raise UnsupportedFeature("join-using", position=self.tok.pos)
            self.expect("on")
            on = self.conjunction()
            # first column equality is the join key, anything else filters
            for k, c in enumerate(on):
                if c[0] == "=" and c[1][0] == "col" and c[2][0] == "col":
                    on.insert(0, on.pop(k))
                    break
            else:
                raise UnsupportedFeature("non-equijoin", position=t.pos)
            conds.append(("on", len(sources) - 1, on[0]))
            conds += on[1:]
        return sources, conds

    def from_item(self):
        t = self.tok
        if self.accept("("):
            if not self.at("select"):
                raise UnsupportedFeature("nested-join", position=t.pos)
            node = self.select(nested=True)
            self.expect(")")
            self.accept("as")
            alias = self.name()
            return _Source(alias, node, self._columns(node))
        name = self.ident()
        alias = name
        if self.accept("as"):
            alias = self.name()
        elif self.tok.kind == "id":
            alias = self.ident()
        if name in self.ctes:
            node = self.ctes[name]
        else:
            node = Table(name)
        return _Source(alias, node, self._columns(node))

    def _columns(self, node) -> dict:
        names = ra.schema_of(node, self.catalog).names
        return {n: n for n in names}

    def conjunction(self):
        conds = [self.comparison()]
        while True:
            if self.at("or"):
                raise UnsupportedFeature("disjunction", position=self.tok.pos)
            if not self.accept("and"):
                return conds
            conds.append(self.comparison())

    def operand(self):
        t = self.tok
        if t.kind == "id":
            return ("col", self.colref())
        if t.kind == "num":
            self.i += 1
            return ("lit", _number(t.value))
        if t.kind == "str":
            self.i += 1
            return ("lit", t.value[1:-1].replace("''", "'"))
        if t.value in ("true", "false"):
            self.i += 1
            return ("lit", t.value == "true")
        if t.value == "-" and self.peek().kind == "num":
            self.i += 2
            return ("lit", -_number(self.toks[self.i - 1].value))
        if t.value == "(":
            if self.peek().value == "select":
                raise UnsupportedFeature("scalar-subquery", position=t.pos)
            raise UnsupportedFeature("parenthesized-condition", position=t.pos)
        if t.value == "not":
            raise UnsupportedFeature("negation", position=t.pos)
        raise ParseError(t.pos, f"expected column or literal, found {t.value or 'end of input'!r}")

    def comparison(self):
        left = self.operand()
        t = self.tok
        if t.value in ("is", "in", "like", "between", "not"):
            raise UnsupportedFeature(f"{t.value}-predicate", position=t.pos)
        if t.kind == "op" and t.value in "+-*/%":
            raise UnsupportedFeature("arithmetic-predicate", position=t.pos)
        if t.kind != "op" or t.value not in _CMP_OPS:
            raise ParseError(t.pos, f"expected comparison operator, found {t.value or 'end of input'!r}")
        self.i += 1
        right = self.operand()
        if self.tok.kind == "op" and self.tok.value in "+-*/%":
            raise UnsupportedFeature("arithmetic-predicate", position=self.tok.pos)
        op = "<>" if t.value == "!=" else t.value
        return (op, left, right, t.pos)

    # -- semantic assembly -------------------------------------------------

    def resolve(self, scope, ref) -> str:
        qual, name, pos = ref
        if qual is not None:
            for s in scope:
                if s.alias == qual:
                    if name not in s.cols:
                        raise ra.UnknownColumn(f"unknown column {qual}.{name}")
                    return s.cols[name]
            raise ParseError(pos, f"unknown table alias {qual!r}")
        hits = {s.cols[name] for s in scope if name in s.cols}
        if not hits:
            raise ra.UnknownColumn(f"unknown column {name!r}")
        if len(hits) > 1:
            raise ParseError(pos, f"ambiguous column {name!r}")
        return hits.pop()

    def _owner(self, scope, ref):
        qual, name, pos = ref
        owners = [k for k, s in enumerate(scope)
                  if (s.alias == qual if qual else name in s.cols) and name in s.cols]
        if not owners:
            if qual and not any(s.alias == qual for s in scope):
                raise ParseError(pos, f"unknown table alias {qual!r}")
            raise ra.UnknownColumn(f"unknown column {name!r}")
        if len(owners) > 1:
            raise ParseError(pos, f"ambiguous column {name!r}")
        return owners[0]

    def combine(self, sources, conds):
        """Join the FROM items left to right and stack WHERE filters on top."""
        aliases = [s.alias for s in sources]
        if len(set(aliases)) != len(aliases):
            raise ParseError(0, "duplicate table alias in FROM")
        on_keys = {c[1]: c[2] for c in conds if c[0] == "on"}
        filters = [c for c in conds if c[0] != "on"]
        joined = [0]
        node = sources[0].node
        visible = dict(sources[0].cols)  # visible column -> AST column
        scope = [sources[0]]
        remaining = list(range(1, len(sources)))
        while remaining:
            pick = None
            for k in remaining:
                cand = [on_keys[k]] if k in on_keys else [c for c in filters if self._links(c, sources, joined, k)]
                if cand:
                    pick = (k, cand[0])
                    break
            if pick is None:
                raise UnsupportedFeature("cross-join", "FROM items without an equality linking them")
            k, cond = pick
            if cond in filters:
                filters.remove(cond)
            remaining.remove(k)
            src = sources[k]
            _, l, r, pos = cond
            lo = self._owner(sources, l[1])
            side_new, side_old = (l, r) if lo == k else (r, l)
            if self._owner(sources, side_old[1]) not in joined:
                raise UnsupportedFeature("cross-join", position=pos)
            old_key = self.resolve(scope, side_old[1])
            new_key = src.cols[side_new[1][1]]
            right, cols = src.node, dict(src.cols)
            existing = set(ra.schema_of(node, self.catalog).names)
            clash = [c for c in ra.schema_of(right, self.catalog).names
                     if c in existing and not (c == new_key == old_key)]
            if clash:
                names = ra.schema_of(right, self.catalog).names
                renames = {c: f"{src.alias}_{c}" for c in clash}
                if any(v in existing or v in names for v in renames.values()):
                    raise ParseError(pos, f"cannot disambiguate columns of {src.alias!r}")
                right = Project(tuple(Binding(renames[c], Col(c)) if c in renames else Col(c)
                                      for c in names), right)
                cols = {vis: renames.get(ast, ast) for vis, ast in cols.items()}
                new_key = renames.get(new_key, new_key)
            node = Join(node, right, old_key, new_key)
            scope.append(_Source(src.alias, right, cols))
            joined.append(k)
        for op, l, r, pos in filters:
            node = Select(Predicate(op, self._value(scope, l), self._value(scope, r)), node)
        return node, scope

    def _links(self, cond, sources, joined, k) -> bool:
        op, l, r, _ = cond
        if op != "=" or l[0] != "col" or r[0] != "col":
            return False
        a, b = self._owner(sources, l[1]), self._owner(sources, r[1])
        return (a == k and b in joined) or (b == k and a in joined)

    def _value(self, scope, operand):
        if operand[0] == "col":
            return Col(self.resolve(scope, operand[1]))
        return Lit(operand[1])

    def build(self, items, body, scope, group, nested):
        aggs = [it for it in items if it[0] == "agg"]
        if any(it[0] == "star" for it in items):
            if nested and len(items) == 1:
                return body
            raise UnsupportedFeature("raw-rows", "SELECT * returns individual rows", items[0][-1])
        group_cols = [self.resolve(scope, g) for g in group]
        if not aggs:
            if group or not nested:
                raise UnsupportedFeature("raw-rows", "query has no aggregation", items[0][-1])
            attrs = []
            for _, ref, alias, _ in items:
                col = self.resolve(scope, ref)
                attrs.append(Binding(alias, Col(col)) if alias and alias != col else Col(col))
            return Project(tuple(attrs), body)
        if len(aggs) > 1:
            raise UnsupportedFeature("multiple-aggregates", position=aggs[1][-1])
        plain = [it for it in items if it[0] == "col"]
        for it in plain:
            col = self.resolve(scope, it[1])
            if col not in group_cols:
                raise UnsupportedFeature("non-aggregated-column", f"{col} is not grouped", it[-1])
            if it[2] and it[2] != col:
                raise UnsupportedFeature("renamed-group-column", position=it[-1])
        if len({self.resolve(scope, it[1]) for it in plain}) != len(group_cols):
            raise UnsupportedFeature("hidden-group-column", "every GROUP BY column must be selected")
        if len(set(group_cols)) != len(group_cols):
            raise ParseError(0, "duplicate GROUP BY column")
        _, (func, ref, distinct), alias, _ = aggs[0]
        if func == "count":
            col = self.resolve(scope, ref) if ref else None
            node = Count(body, tuple(group_cols), distinct=col)
        else:
            col = self.resolve(scope, ref)
            node = Sum(col, body, tuple(group_cols), func=func)
        if alias and alias != node.out_name:
            node = type(node)(**{**_fields(node), "alias": alias})
        return node


def _fields(node) -> dict:
    from dataclasses import fields

    return {f.name: getattr(node, f.name) for f in fields(node)}


def _number(s: str):
    if re.fullmatch(r"\d+", s):
        return int(s)
    return float(s)


def parse_sql(text: str, dialect: str = "ansi", catalog=None) -> QueryExpr:
    """Parse ``text`` into a type-checked QueryExpr.

    Raises ParseError for malformed text, UnsupportedFeature for SQL
    outside the statistical subset, and the algebra's UnknownTable /
    UnknownColumn / TypeMismatch for queries that do not fit the catalog.
    """
    if catalog is None:
        raise ValueError("parsing needs a catalog")
    if dialect not in ("ansi", "postgres"):
        raise ValueError(f"unknown dialect {dialect!r}")
    p = _Parser(text, catalog)
    node = p.query()
    q = QueryExpr(node)
    ra.schema_of(q, catalog)
    return q

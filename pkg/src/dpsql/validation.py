"""Statistical-query checks and syntactic feature extraction.

Features are derived from the AST and catalog metadata only; row data is
never consulted, so mechanism selection spends no privacy budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .algebra import (
    AlgebraError,
    Count,
    Join,
    QueryExpr,
    Select,
    Sum,
    Table,
    is_aggregation,
    schema_of,
    walk,
)
from .catalog import MANY, Catalog
from .sensitivity import join_caps


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    errors: tuple = ()
    features: frozenset = field(default_factory=frozenset)


def _protected_side(node, catalog: Catalog) -> bool:
    return any(isinstance(n, Table) and n.name == catalog.protected_table for n in walk(node))


def query_features(top, catalog: Catalog) -> frozenset:
    feats = set()
    if isinstance(top, Count):
        feats.add("count")
        if top.distinct:
            feats.add("count-distinct")
    elif isinstance(top, Sum):
        feats.update({top.func, "estimator"})
    if getattr(top, "group_by", ()):
        feats.add("grouped")
    inner = list(walk(top))[1:]
    joins = [n for n in inner if isinstance(n, Join)]
    if joins:
        feats.update({"join", "inner-join"})
    else:
        feats.add("no-join")
    if any(isinstance(n, Select) for n in inner):
        feats.add("filter")
    if any(is_aggregation(n) for n in inner):
        feats.add("subquery-aggregation")
    occurrences = [n.name for n in walk(top) if isinstance(n, Table)]
    hits = occurrences.count(catalog.protected_table)
    if hits == 0:
        feats.add("public-only")
    if hits > 1:
        feats.add("self-join")
    for j in joins:
        try:
            cl, cr = join_caps(j, catalog)
        except (AlgebraError, KeyError):
            continue
        if cl == MANY and cr == MANY:
            feats.update({"many-to-many-join", "uncapped-join"})
            continue
        pl, pr = _protected_side(j.left, catalog), _protected_side(j.right, catalog)
        if (pl and not pr and cr == MANY) or (pr and not pl and cl == MANY):
            feats.add("uncapped-join")
    if joins and "uncapped-join" not in feats:
        feats.add("capped-joins")
    return frozenset(feats)


def validate_query(q, catalog: Catalog) -> ValidationReport:
    """Type-check ``q`` and collect features. Never raises on malformed input."""
    top = q.top if isinstance(q, QueryExpr) else q
    errors = []
    if not is_aggregation(top):
        errors.append(f"NotStatistical: outermost node is {type(top).__name__}, not an aggregation")
    try:
        schema_of(top, catalog)
    except AlgebraError as e:
        errors.append(f"{type(e).__name__}: {e}")
    except Exception as e:  # malformed programmatic ASTs
        errors.append(f"Malformed: {e}")
    feats = frozenset()
    if not errors:
        try:
            feats = query_features(top, catalog)
        except Exception as e:
            errors.append(f"Malformed: {e}")
    return ValidationReport(not errors, tuple(errors), feats)

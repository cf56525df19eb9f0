"""The four mechanisms as rule pipelines, plus syntax-based selection."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .algebra import AlgebraError, Count, Join, QueryExpr, Sum, Table, group_keys, is_aggregation, walk
from .catalog import Catalog
from .rewrite import (
    AggregatorPlan,
    RewriteError,
    complete_histogram_bins,
    laplace_rewrite,
    metadata_rewrite,
    replace_aggregation,
    subsample_rewrite,
    wpinq_fns,
)
from .sensitivity import (
    SensitivityResult,
    Unsupported,
    restricted_sensitivity,
    smooth_elastic_sensitivity,
)
from .validation import validate_query

MECHANISMS = ("elastic", "restricted", "wpinq", "saa")


class MechanismError(Exception):
    pass


class NoMechanismSupports(MechanismError):
    def __init__(self, reasons: dict):
        detail = "; ".join(f"{m}: {r}" for m, r in reasons.items())
        super().__init__(f"no mechanism supports this query ({detail})")
        self.reasons = reasons


class MissingParameter(MechanismError):
    pass


@dataclass(frozen=True)
class RewriteConfig:
    epsilon: float
    delta: float | None = None
    mechanism: str = "auto"
    subsamples: int | None = None
    dialect: str = "ansi"
    bins: tuple | None = None
    db_size: int | None = None
    assignment: str = "row_number_mod"

    def __post_init__(self):
        if not self.epsilon > 0 or math.isinf(self.epsilon):
            raise ValueError("epsilon must be positive and finite")
        if self.delta is not None and not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.mechanism not in MECHANISMS + ("auto",):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.bins is not None:
            object.__setattr__(self, "bins", tuple(self.bins))


@dataclass(frozen=True)
class MechanismPlan:
    mechanism: str
    gamma: float | None
    epsilon: float
    delta: float
    subsamples: int | None
    rationale: tuple
    query: QueryExpr
    sensitivity: SensitivityResult | None = None
    scores: dict = field(default_factory=dict)


def default_delta(epsilon: float, n: int) -> float:
    """n^(-epsilon ln n)."""
    if n is None or n < 2:
        raise MissingParameter("default delta needs the database size (n >= 2)")
    return n ** (-epsilon * math.log(n))


def subsample_count(n: int) -> int:
    return max(2, round(n ** 0.4))


def _db_size(catalog: Catalog, n):
    return n if n is not None else catalog.db_size()


def _finish_counting(q, catalog, gamma, bins):
    top = q.top
    if group_keys(top):
        q = complete_histogram_bins(q, catalog, bins=bins)
    return laplace_rewrite(q, gamma, catalog)


# ---------------------------------------------------------------------------
# mechanisms


def plan_elastic(q, catalog, epsilon, delta=None, n=None, bins=None):
    n = _db_size(catalog, n)
    if n is None:
        raise MissingParameter("elastic sensitivity needs the database size")
    if delta is None:
        delta = default_delta(epsilon, n)
    if not 0 < delta < 1:
        raise Unsupported("elastic sensitivity needs 0 < delta < 1")
    res = smooth_elastic_sensitivity(q, catalog, epsilon, delta, n)
    gamma = res.s / epsilon
    out = _finish_counting(q, catalog, gamma, bins)
    return QueryExpr(out.top, "rewritten:elastic"), gamma, delta, res


def apply_elastic(q, catalog, epsilon, delta=None, n=None, bins=None) -> QueryExpr:
    return plan_elastic(q, catalog, epsilon, delta, n, bins)[0]


def plan_restricted(q, catalog, epsilon, bins=None):
    res = restricted_sensitivity(q, catalog)
    gamma = res.s / epsilon
    out = _finish_counting(q, catalog, gamma, bins)
    return QueryExpr(out.top, "rewritten:restricted"), gamma, res


def apply_restricted(q, catalog, epsilon, bins=None) -> QueryExpr:
    return plan_restricted(q, catalog, epsilon, bins)[0]


def _wpinq_check(q, catalog):
    top = q.top
    if not isinstance(top, Count):
        raise Unsupported("weighted counting needs a top-level count", top)
    if top.distinct:
        raise Unsupported("weighted counting does not support COUNT(DISTINCT ...)", top)
    names = [n.name for n in walk(top) if isinstance(n, Table)]
    if names.count(catalog.protected_table) > 1:
        raise Unsupported("weighted counting does not support self-joins of the protected table", top)
    if catalog.protected_table not in names:
        raise Unsupported("query does not reference the protected table", top)


def plan_wpinq(q, catalog, epsilon, bins=None):
    _wpinq_check(q, catalog)
    gamma = 1.0 / epsilon
    weighted = metadata_rewrite(q, wpinq_fns(), catalog)
    summed = replace_aggregation(weighted, "count", ("sum", "weight"))
    out = _finish_counting(summed, catalog, gamma, bins)
    return QueryExpr(out.top, "rewritten:wpinq"), gamma


def apply_wpinq(q, catalog, epsilon, bins=None) -> QueryExpr:
    return plan_wpinq(q, catalog, epsilon, bins)[0]


def plan_saa(q, catalog, epsilon, n=None, subsamples=None, bins=None,
             assignment="row_number_mod"):
    top = q.top
    if not is_aggregation(top):
        raise Unsupported("needs an aggregation", top)
    if catalog.protected_table not in {t.name for t in walk(top) if isinstance(t, Table)}:
        raise Unsupported("query does not reference the protected table", top)
    if subsamples is None:
        n = _db_size(catalog, n)
        if n is None:
            raise MissingParameter("sample and aggregate needs the database size")
        subsamples = subsample_count(n)
    if subsamples < 2:
        raise ValueError("sample and aggregate needs at least 2 subsamples")
    grouped = bool(group_keys(top))
    out = subsample_rewrite(q, subsamples, AggregatorPlan(epsilon), catalog,
                            assignment=assignment, bins=bins, complete=grouped)
    return QueryExpr(out.top, "rewritten:saa"), subsamples


def apply_saa(q, catalog, epsilon, n=None, subsamples=None, bins=None) -> QueryExpr:
    return plan_saa(q, catalog, epsilon, n, subsamples, bins)[0]


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class SelectionRule:
    mechanism: str
    requires: frozenset
    forbids: frozenset
    score: float
    reason: str

    def fires(self, features) -> bool:
        return self.requires <= features and not (self.forbids & features)


def rule_from_dict(d: dict) -> SelectionRule:
    unknown = set(d) - {"mechanism", "requiresFeatures", "forbidsFeatures", "score", "reason"}
    if unknown:
        raise ValueError(f"unknown rule keys {sorted(unknown)}")
    if d["mechanism"] not in MECHANISMS:
        raise ValueError(f"unknown mechanism {d['mechanism']!r}")
    return SelectionRule(d["mechanism"], frozenset(d.get("requiresFeatures", ())),
                         frozenset(d.get("forbidsFeatures", ())), float(d["score"]),
                         d.get("reason", ""))


def rule_to_dict(r: SelectionRule) -> dict:
    return {"mechanism": r.mechanism, "requiresFeatures": sorted(r.requires),
            "forbidsFeatures": sorted(r.forbids), "score": r.score, "reason": r.reason}


def load_rules(path) -> list[SelectionRule]:
    return [rule_from_dict(d) for d in json.loads(Path(path).read_text())]


def default_rules() -> list[SelectionRule]:
    return load_rules(Path(__file__).with_name("data") / "rules.json")


def check_support(mech: str, q, catalog, config: RewriteConfig):
    """Build the mechanism's rewrite; returns (plan fields or None, reason)."""
    try:
        if mech == "elastic":
            out, gamma, delta, res = plan_elastic(q, catalog, config.epsilon, config.delta,
                                                  config.db_size, config.bins)
            return dict(query=out, gamma=gamma, delta=delta, sensitivity=res), None
        if mech == "restricted":
            out, gamma, res = plan_restricted(q, catalog, config.epsilon, config.bins)
            return dict(query=out, gamma=gamma, delta=0.0, sensitivity=res), None
        if mech == "wpinq":
            out, gamma = plan_wpinq(q, catalog, config.epsilon, config.bins)
            return dict(query=out, gamma=gamma, delta=0.0), None
        out, ell = plan_saa(q, catalog, config.epsilon, config.db_size, config.subsamples,
                            config.bins, config.assignment)
        return dict(query=out, gamma=None, delta=0.0, subsamples=ell), None
    except (Unsupported, RewriteError, AlgebraError, MissingParameter) as e:
        return None, f"{type(e).__name__}: {e}"


def select_mechanism(q, catalog, rules=None, config: RewriteConfig | None = None,
                     **kw) -> MechanismPlan:
    """Pick the highest-scoring supported mechanism and build its rewrite.

    Only the AST and catalog metadata are consulted. Ties go to the
    earlier mechanism in ``MECHANISMS``.
    """
    if config is None:
        config = RewriteConfig(**kw)
    rules = default_rules() if rules is None else rules
    report = validate_query(q, catalog)
    if not report.valid:
        raise NoMechanismSupports({"all": "; ".join(report.errors)})
    feats = report.features
    wanted = MECHANISMS if config.mechanism == "auto" else (config.mechanism,)
    rationale = [f"features: {', '.join(sorted(feats))}"]
    reasons, candidates, scores = {}, {}, {}
    for mech in wanted:
        built, why = check_support(mech, q, catalog, config)
        if built is None:
            reasons[mech] = why
            rationale.append(f"{mech}: excluded ({why})")
            continue
        fired = [r for r in rules if r.mechanism == mech and r.fires(feats)]
        for r in fired:
            rationale.append(f"{mech}: rule fired, score {r.score:g} ({r.reason})")
        if config.mechanism == "auto" and not fired:
            reasons[mech] = "no selection rule applies"
            rationale.append(f"{mech}: supported but no rule applies")
            continue
        scores[mech] = max((r.score for r in fired), default=0.0)
        candidates[mech] = built
    if not candidates:
        raise NoMechanismSupports(reasons)
    best = max(candidates, key=lambda m: (scores[m], -MECHANISMS.index(m)))
    rationale.append(f"selected {best} (score {scores[best]:g})")
    b = candidates[best]
    return MechanismPlan(best, b.get("gamma"), config.epsilon, b.get("delta", 0.0),
                         b.get("subsamples"), tuple(rationale), b["query"],
                         b.get("sensitivity"), scores)


def support_matrix(q, catalog, config: RewriteConfig) -> dict:
    """mechanism -> (supported, reason) for every mechanism."""
    out = {}
    for mech in MECHANISMS:
        built, why = check_support(mech, q, catalog, config)
        out[mech] = (built is not None, why)
    return out

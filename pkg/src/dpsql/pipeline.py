"""parse -> select -> rewrite -> emit, and the error classification shared by CLI and service."""
from __future__ import annotations

from dataclasses import dataclass

from .algebra import AlgebraError, UnknownTable
from .budget import BudgetError
from .catalog import Catalog, CatalogError
from .mechanisms import (
    MECHANISMS,
    MechanismError,
    MechanismPlan,
    MissingParameter,
    NoMechanismSupports,
    RewriteConfig,
    check_support,
    default_rules,
    select_mechanism,
)
from .rewrite import RewriteError
from .sql import ParseError, UnsupportedFeature, emit_sql, parse_sql
from .validation import validate_query

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_MECHANISM = 3
EXIT_BUDGET = 4
EXIT_CATALOG = 5

ERROR_CODES = {
    EXIT_INVALID: "invalid_query",
    EXIT_NO_MECHANISM: "no_mechanism",
    EXIT_BUDGET: "budget_exhausted",
    EXIT_CATALOG: "catalog_error",
}


def classify(exc: BaseException) -> int:
    """Exit code for an exception raised while handling a request."""
    if isinstance(exc, (CatalogError, UnknownTable)):
        return EXIT_CATALOG
    if isinstance(exc, BudgetError):
        return EXIT_BUDGET
    if isinstance(exc, (NoMechanismSupports, MissingParameter, MechanismError, RewriteError)):
        return EXIT_NO_MECHANISM
    if isinstance(exc, (ParseError, UnsupportedFeature, AlgebraError, ValueError)):
        return EXIT_INVALID
    return 1


@dataclass(frozen=True)
class Rewritten:
    plan: MechanismPlan
    sql: str

    def metadata(self) -> dict:
        p = self.plan
        meta = {
            "mechanism": p.mechanism,
            "epsilon": p.epsilon,
            "delta": p.delta,
            "gamma": p.gamma,
            "rationale": list(p.rationale),
            "trace": list(p.sensitivity.trace) if p.sensitivity else [],
        }
        if p.subsamples is not None:
            meta["subsamples"] = p.subsamples
        if p.sensitivity is not None:
            meta["sensitivity"] = p.sensitivity.s
            if p.sensitivity.beta is not None:
                meta["beta"] = p.sensitivity.beta
                meta["argmaxK"] = p.sensitivity.argmax_k
        return meta


def rewrite_sql(text: str, catalog: Catalog, config: RewriteConfig, rules=None) -> Rewritten:
    q = parse_sql(text, config.dialect, catalog)
    plan = select_mechanism(q, catalog, rules, config)
    return Rewritten(plan, emit_sql(plan.query, config.dialect, catalog))


def analyze_sql(text: str, catalog: Catalog, config: RewriteConfig, rules=None) -> dict:
    """Per-mechanism verdicts, rule scores and the selection; spends no budget."""
    rules = default_rules() if rules is None else rules
    q = parse_sql(text, config.dialect, catalog)
    report = validate_query(q, catalog)
    feats = report.features
    verdicts = {}
    for mech in MECHANISMS:
        built, why = check_support(mech, q, catalog, config)
        fired = [r for r in rules if r.mechanism == mech and r.fires(feats)]
        v = {"supported": built is not None,
             "score": max((r.score for r in fired), default=None),
             "rules": [r.reason for r in fired]}
        if built is None:
            v["reason"] = why
        else:
            v["gamma"] = built.get("gamma")
            if built.get("sensitivity") is not None:
                v["sensitivity"] = built["sensitivity"].s
                v["trace"] = list(built["sensitivity"].trace)
            if built.get("subsamples") is not None:
                v["subsamples"] = built["subsamples"]
        verdicts[mech] = v
    out = {"features": sorted(feats), "mechanisms": verdicts}
    try:
        plan = select_mechanism(q, catalog, rules, config)
        out["selected"] = plan.mechanism
        out["rationale"] = list(plan.rationale)
    except NoMechanismSupports as e:
        out["selected"] = None
        out["rationale"] = [str(e)]
    return out

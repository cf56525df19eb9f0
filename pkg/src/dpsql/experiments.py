"""Desk-scale experiments shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace

from .algebra import group_keys
from .catalog import Catalog
from .corpus import CorpusQuery
from .evaluator import RandomSource, Table, evaluate
from .fixtures import FixtureConfig, bundled_catalog, make_database, tight_catalog
from .mechanisms import MECHANISMS, RewriteConfig, check_support, select_mechanism
from .rewrite import complete_histogram_bins
from .sql import parse_sql


def keyed(table: Table, keys) -> dict:
    """group-key tuple -> tuple of non-key values."""
    idx = [table.schema.index(k) for k in keys]
    rest = [i for i in range(len(table.schema)) if i not in idx]
    out = {}
    for row in table.rows:
        out[tuple(row[i] for i in idx)] = tuple(row[i] for i in rest)
    return out


def reference_answer(q, catalog: Catalog, db: dict, bins=None) -> Table:
    """Exact answer of ``q``; grouped queries are completed so absent bins read 0."""
    if group_keys(q.top):
        q = complete_histogram_bins(q, catalog, bins=bins)
    return evaluate(q, db, RandomSource.stubbed())


def relative_error(noisy: Table, truth: Table, keys) -> float:
    """Mean over cells of |noisy - true| / max(|true|, 1)."""
    a, b = keyed(noisy, keys), keyed(truth, keys)
    errs = []
    for k, tv in b.items():
        nv = a.get(k)
        if nv is None:
            return float("inf")
        for x, t in zip(nv, tv):
            errs.append(abs(x - t) / max(abs(t), 1.0))
    return statistics.fmean(errs) if errs else 0.0


@dataclass
class SelectionOutcome:
    query_id: str
    selected: str
    median_error: dict
    best: tuple = ()

    @property
    def matches(self) -> bool:
        return self.selected in self.best


@dataclass
class SelectionStudy:
    epsilon: float = 0.1
    trials: int = 100
    seed: int = 0
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    rel_tol: float = 1e-9

    def run(self, corpus: list[CorpusQuery], catalog: Catalog | None = None,
            db: dict | None = None) -> list[SelectionOutcome]:
        catalog = catalog or bundled_catalog()
        db = db if db is not None else make_database(self.fixture, catalog)
        catalog = tight_catalog(catalog, db)
        out = []
        for entry in corpus:
            if not any(entry.labels.values()):
                continue
            out.append(self.run_query(entry, catalog, db))
        return out

    def run_query(self, entry: CorpusQuery, catalog: Catalog, db: dict) -> SelectionOutcome:
        q = parse_sql(entry.sql, "ansi", catalog)
        config = RewriteConfig(self.epsilon, bins=entry.bins)
        truth = reference_answer(q, catalog, db, entry.bins)
        keys = group_keys(q.top)
        errors = {}
        for mech in MECHANISMS:
            built, _ = check_support(mech, q, catalog, config)
            if built is None:
                continue
            rq = built["query"]
            # common random numbers: every mechanism sees the same seeds
            errs = []
            for t in range(self.trials):
                rng = RandomSource.seeded(self.seed * 1_000_003 + t)
                errs.append(relative_error(evaluate(rq, db, rng), truth, keys))
            errors[mech] = statistics.median(errs)
        selected = select_mechanism(q, catalog, None, config).mechanism
        lo = min(errors.values())
        best = tuple(m for m, e in errors.items() if e <= lo * (1 + self.rel_tol) + 1e-12)
        return SelectionOutcome(entry.id, selected, errors, best)


@dataclass
class SaaUtilityStudy:
    n: int = 10_000
    epsilon: float = 1.0
    runs: int = 200
    seed: int = 0
    sql: str = "SELECT AVG(distance) FROM trips"
    # enough cities that per-city driver and rider counts stay under the declared caps
    n_cities: int = 20

    def run(self) -> list[float]:
        catalog = bundled_catalog(row_count=self.n)
        db = make_database(FixtureConfig(n_trips=self.n, n_cities=self.n_cities, seed=self.seed), catalog)
        q = parse_sql(self.sql, "ansi", catalog)
        built, why = check_support("saa", q, catalog, RewriteConfig(self.epsilon))
        if built is None:
            raise RuntimeError(why)
        truth = evaluate(q, db).rows[0][0]
        rq = built["query"]
        errs = []
        for r in range(self.runs):
            est = evaluate(rq, db, RandomSource.seeded(self.seed * 1_000_003 + r)).rows[0][0]
            errs.append(abs(est - truth) / abs(truth))
        return errs

    def subsamples(self) -> int:
        catalog = bundled_catalog(row_count=self.n)
        q = parse_sql(self.sql, "ansi", catalog)
        built, _ = check_support("saa", q, catalog, RewriteConfig(self.epsilon))
        return built["subsamples"]


def fixture_with_gaps(n_trips: int = 200, absent=(2, 5), seed: int = 0):
    catalog = bundled_catalog()
    cfg = replace(FixtureConfig(), n_trips=n_trips, absent_cities=tuple(absent), seed=seed)
    return catalog, make_database(cfg, catalog)

"""Synthetic ride-sharing databases that respect the bundled catalog's metadata.

Every declared max frequency and join cap holds on generated data, so
sensitivity bounds computed from the catalog are valid for it.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

from .catalog import Catalog, load_catalog
from .evaluator import Table

DATA_DIR = Path(__file__).with_name("data")


def bundled_catalog(row_count: int | None = None) -> Catalog:
    cat = load_catalog(DATA_DIR / "catalog.json")
    if row_count is not None:
        from .catalog import with_row_count

        cat = with_row_count(cat, cat.protected_table, row_count)
    return cat


@dataclass(frozen=True)
class FixtureConfig:
    n_trips: int = 1000
    n_cities: int = 8
    seed: int = 0
    # city ids that never occur in trips (histogram gaps)
    absent_cities: tuple = ()
    trips_per_driver: int = 20
    trips_per_rider: int = 10
    distance_shape: float = 2.0
    distance_scale: float = 4.0


def _capped_ids(rng: random.Random, n_rows: int, per_id: int, cap: int) -> list[int]:
    """``n_rows`` ids, each used at most min(per_id, cap) times, shuffled."""
    per_id = min(per_id, cap)
    n_ids = max(1, -(-n_rows // per_id))
    pool = [i + 1 for i in range(n_ids) for _ in range(per_id)]
    rng.shuffle(pool)
    return pool[:n_rows]


def make_database(cfg: FixtureConfig = FixtureConfig(), catalog: Catalog | None = None) -> dict:
    cat = catalog or bundled_catalog()
    rng = random.Random(cfg.seed)
    n = cfg.n_trips
    cities = list(range(1, cfg.n_cities + 1))
    present = [c for c in cities if c not in set(cfg.absent_cities)] or cities[:1]
    regions = ["north", "south", "east", "west"]

    db = {}
    db["cities"] = Table(cat.table_schema("cities"),
                         [(c, f"city_{c}", regions[c % len(regions)]) for c in cities])

    driver_ids = _capped_ids(rng, n, cfg.trips_per_driver,
                             cat.column("trips", "driver_id").max_frequency)
    rider_ids = _capped_ids(rng, n, cfg.trips_per_rider,
                            cat.column("trips", "rider_id").max_frequency)
    n_drivers = max(driver_ids, default=0)
    n_riders = max(rider_ids, default=0)

    db["drivers"] = Table(cat.table_schema("drivers"), [
        (d, cities[(d - 1) % len(cities)], round(rng.uniform(3.0, 5.0), 2),
         rng.choice(["sedan", "suv", "van"]), 2015 + (d - 1) % 8)
        for d in range(1, n_drivers + 1)
    ])
    db["riders"] = Table(cat.table_schema("riders"), [
        (r, cities[(r - 1) % len(cities)], 2012 + (r - 1) % 10) for r in range(1, n_riders + 1)
    ])

    trips = []
    for t in range(n):
        dist = rng.gammavariate(cfg.distance_shape, cfg.distance_scale)
        trips.append((
            t + 1, driver_ids[t], rider_ids[t], rng.choice(present), round(dist, 3),
            round(2.5 + 1.5 * dist + rng.uniform(0, 3), 2), int(3 + dist * 2.5 + rng.randint(0, 9)),
            "cancelled" if rng.random() < 0.1 else "completed",
        ))
    db["trips"] = Table(cat.table_schema("trips"), trips)

    promos, pid = [], 1
    promo_cap = cat.column("promotions", "promo_city").max_frequency
    for c in cities:
        for _ in range(rng.randint(0, promo_cap)):
            promos.append((pid, c, round(rng.uniform(0.05, 0.3), 2)))
            pid += 1
    db["promotions"] = Table(cat.table_schema("promotions"), promos)

    events, eid = [], 1
    ev_cap = cat.column("trip_events", "event_trip").max_frequency
    for t in range(1, n + 1):
        if rng.random() < 0.3:
            for _ in range(rng.randint(1, ev_cap)):
                events.append((eid, t, rng.choice(["pickup", "dropoff", "rating", "tip"])))
                eid += 1
    db["trip_events"] = Table(cat.table_schema("trip_events"), events)
    check_metadata(db, cat)
    return db


def observed_max_frequency(db: dict, table: str, column: str) -> int:
    t = db[table]
    counts = Counter(t.column(column))
    return max(counts.values(), default=0)


def check_metadata(db: dict, catalog: Catalog) -> None:
    """Raise ValueError when data violates a declared max frequency or cap."""
    for name, info in catalog.tables.items():
        if name not in db:
            continue
        for c in info.columns:
            mf = observed_max_frequency(db, name, c.name)
            if c.max_frequency is not None and mf > c.max_frequency:
                raise ValueError(f"{name}.{c.name}: max frequency {mf} > declared {c.max_frequency}")
            if mf > c.join_cap:
                raise ValueError(f"{name}.{c.name}: multiplicity {mf} > declared cap {c.join_cap}")


def tight_catalog(catalog: Catalog, db: dict) -> Catalog:
    """Catalog whose declared max frequencies equal the observed ones in ``db``."""
    tables = {}
    for name, info in catalog.tables.items():
        cols = []
        for c in info.columns:
            if c.max_frequency is not None and name in db:
                mf = max(1, observed_max_frequency(db, name, c.name))
                c = replace(c, max_frequency=mf)
            cols.append(c)
        tables[name] = replace(info, columns=tuple(cols), row_count=len(db[name].rows)
                               if info.protected and name in db else info.row_count)
    return Catalog(tables)


def neighbor_pool(db: dict, protected: str, rng: random.Random, size: int = 5) -> list[tuple]:
    """Candidate protected rows to add, reusing existing key values."""
    t = db[protected]
    if not t.rows:
        return []
    pool = []
    next_id = max(r[0] for r in t.rows) + 1
    for i in range(size):
        base = list(rng.choice(t.rows))
        donor = rng.choice(t.rows)
        # mix key columns from two rows so additions can hit frequent values
        for j in range(1, len(base)):
            if rng.random() < 0.5:
                base[j] = donor[j]
        base[0] = next_id + i
        pool.append(tuple(base))
    return pool

import math

import pytest

from dpsql.fixtures import bundled_catalog
from dpsql.mechanisms import default_delta, subsample_count
from dpsql.sensitivity import (ManyToManyJoin, Unsupported, elastic_polynomial,
                               elastic_sensitivity_at_k, restricted_sensitivity,
                               smooth_elastic_sensitivity, smoothing_beta)
from dpsql.sql import parse_sql

CAT = bundled_catalog()


def q(sql):
    return parse_sql(sql, catalog=CAT)


# hand-derived values for the bundled catalog
ELASTIC_AT_0 = {
    "SELECT COUNT(*) FROM trips": 1,
    "SELECT city_id, COUNT(*) FROM trips GROUP BY city_id": 1,
    # public side key is unique: one trip adds one joined row
    "SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id": 1,
    # promo_city has max frequency 5
    "SELECT COUNT(*) FROM trips JOIN promotions ON trips.city_id = promotions.promo_city": 5,
    # drivers.home_city has max frequency 50
    "SELECT COUNT(*) FROM trips JOIN drivers ON trips.city_id = drivers.home_city": 50,
    # self-join: mf(l) * 1 + mf(r) * 1 + 1 * 1 with mf(driver_id) = 40
    "SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON t1.driver_id = t2.driver_id": 81,
    "SELECT COUNT(DISTINCT driver_id) FROM trips": 1,
}


@pytest.mark.parametrize("sql,expected", ELASTIC_AT_0.items())
def test_elastic_at_zero(sql, expected):
    assert elastic_sensitivity_at_k(q(sql), CAT, 0) == expected


def test_self_join_grows_with_k():
    qq = q("SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON t1.driver_id = t2.driver_id")
    # 2 (40 + k) + 1
    assert [elastic_sensitivity_at_k(qq, CAT, k) for k in range(4)] == [81, 83, 85, 87]


def test_public_join_constant_in_k():
    qq = q("SELECT COUNT(*) FROM trips JOIN promotions ON trips.city_id = promotions.promo_city")
    assert {elastic_sensitivity_at_k(qq, CAT, k) for k in range(10)} == {5}


def test_polynomial_trace_mentions_tables():
    _, trace = elastic_polynomial(q("SELECT COUNT(*) FROM trips JOIN drivers ON "
                                    "trips.driver_id = drivers.id"), CAT)
    text = "\n".join(trace)
    assert "trips" in text and "drivers" in text


def test_beta():
    assert smoothing_beta(1.0, 0.01) == pytest.approx(1 / (2 * math.log(200)))
    with pytest.raises(ValueError):
        smoothing_beta(1.0, 0.0)


def test_smooth_equals_full_scan():
    qq = q("SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON t1.rider_id = t2.rider_id")
    eps, delta, n = 0.1, 1e-6, 5000
    res = smooth_elastic_sensitivity(qq, CAT, eps, delta, n)
    beta = smoothing_beta(eps, delta)
    full = max(math.exp(-beta * k) * elastic_sensitivity_at_k(qq, CAT, k) for k in range(n + 1))
    assert res.s == pytest.approx(full, rel=1e-12)
    assert res.s >= 81


def test_smooth_limit_is_value_at_zero():
    qq = q("SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON t1.driver_id = t2.driver_id")
    # huge epsilon makes beta large, so only k = 0 matters
    res = smooth_elastic_sensitivity(qq, CAT, 1e6, 0.5, 100)
    assert res.s == 81 and res.argmax_k == 0


def test_elastic_rejects_estimators():
    with pytest.raises(Unsupported):
        elastic_polynomial(q("SELECT AVG(fare) FROM trips"), CAT)


RESTRICTED = {
    "SELECT COUNT(*) FROM trips": 1,
    "SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id": 1,
    # up to 5 events per trip
    "SELECT COUNT(*) FROM trips JOIN trip_events ON trips.trip_id = trip_events.event_trip": 5,
    "SELECT COUNT(*) FROM trips JOIN cities ON trips.city_id = cities.city_id": 1,
}


@pytest.mark.parametrize("sql,expected", RESTRICTED.items())
def test_restricted(sql, expected):
    assert restricted_sensitivity(q(sql), CAT).s == expected


@pytest.mark.parametrize("sql", [
    "SELECT COUNT(*) FROM trips JOIN promotions ON trips.city_id = promotions.promo_city",
    "SELECT COUNT(*) FROM trips JOIN drivers ON trips.city_id = drivers.home_city",
])
def test_restricted_many_to_many(sql):
    with pytest.raises(ManyToManyJoin):
        restricted_sensitivity(q(sql), CAT)


def test_restricted_rejects_self_join():
    with pytest.raises(Unsupported):
        restricted_sensitivity(q("SELECT COUNT(*) FROM trips t1 JOIN trips t2 "
                                 "ON t1.driver_id = t2.driver_id"), CAT)


def test_default_delta_and_subsamples():
    assert default_delta(0.1, 10000) == pytest.approx(math.exp(-0.1 * math.log(10000) ** 2))
    assert subsample_count(10000) == 40
    assert subsample_count(1000) == 16
    assert subsample_count(3) == 2


def test_public_side_frequency_does_not_grow_with_k():
    # drivers protected, trips public with mf(driver_id) = 3: only protected-derived
    # sides get the +k offset, so the bound stays at 3 for every k
    import dataclasses as dc

    tables = dict(CAT.tables)
    trips = tables["trips"]
    cols = tuple(dc.replace(c, max_frequency=3) if c.name == "driver_id" else c
                 for c in trips.columns)
    tables["trips"] = dc.replace(trips, columns=cols, protected=False)
    tables["drivers"] = dc.replace(tables["drivers"], protected=True)
    cat = dc.replace(CAT, tables=tables)
    query = parse_sql("SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id",
                      catalog=cat)
    assert [elastic_sensitivity_at_k(query, cat, k) for k in range(4)] == [3, 3, 3, 3]

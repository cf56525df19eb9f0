import json
from dataclasses import replace

import pytest

from dpsql.corpus import load_corpus
from dpsql.fixtures import bundled_catalog
from dpsql.mechanisms import (MECHANISMS, MissingParameter, NoMechanismSupports, RewriteConfig,
                              apply_elastic, apply_restricted, check_support, default_rules,
                              load_rules, plan_elastic, rule_from_dict, rule_to_dict,
                              select_mechanism)
from dpsql.catalog import Catalog, with_row_count
from dpsql.sql import parse_sql

CAT = bundled_catalog()


def q(sql, cat=CAT):
    return parse_sql(sql, catalog=cat)


def select(sql, **kw):
    return select_mechanism(q(sql), CAT, config=RewriteConfig(**{"epsilon": 0.1, **kw}))


def test_plain_count_picks_restricted():
    plan = select("SELECT COUNT(*) FROM trips")
    assert plan.mechanism == "restricted" and plan.gamma == 10.0 and plan.delta == 0.0


def test_many_to_many_picks_elastic():
    plan = select("SELECT COUNT(*) FROM trips JOIN promotions ON trips.city_id = promotions.promo_city")
    assert plan.mechanism == "elastic"
    assert plan.gamma == pytest.approx(50.0)
    assert 0 < plan.delta < 1


def test_estimator_picks_saa():
    plan = select("SELECT AVG(fare) FROM trips")
    assert plan.mechanism == "saa" and plan.subsamples == 40 and plan.gamma is None


def test_self_join_only_elastic():
    plan = select("SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON t1.driver_id = t2.driver_id")
    assert plan.mechanism == "elastic"


def test_forced_mechanism_reports_reason():
    with pytest.raises(NoMechanismSupports) as e:
        select("SELECT AVG(fare) FROM trips JOIN drivers ON trips.driver_id = drivers.id",
               mechanism="saa")
    assert "join" in e.value.reasons["saa"]


def test_forced_mechanism_bypasses_rules():
    assert select("SELECT COUNT(*) FROM trips", mechanism="wpinq").mechanism == "wpinq"


def test_selection_is_syntax_only():
    # data size changes gamma for elastic but never which mechanism wins
    for n in (100, 10_000, 1_000_000):
        cat = with_row_count(CAT, "trips", n)
        plan = select_mechanism(q("SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON "
                                  "t1.rider_id = t2.rider_id", cat), cat,
                                config=RewriteConfig(0.1))
        assert plan.mechanism == "elastic"


def test_elastic_needs_db_size():
    tables = dict(CAT.tables, trips=replace(CAT.tables["trips"], row_count=None))
    cat = Catalog(tables)
    with pytest.raises(MissingParameter):
        plan_elastic(q("SELECT COUNT(*) FROM trips", cat), cat, 0.1)


def test_explicit_delta_is_used():
    plan = select("SELECT COUNT(*) FROM trips t1 JOIN trips t2 ON t1.driver_id = t2.driver_id",
                  delta=1e-5)
    assert plan.delta == 1e-5


def test_unknown_mechanism_rejected():
    with pytest.raises(ValueError):
        RewriteConfig(0.1, mechanism="magic")


def test_rules_round_trip(tmp_path):
    rules = default_rules()
    p = tmp_path / "rules.json"
    p.write_text(json.dumps([rule_to_dict(r) for r in rules]))
    assert load_rules(p) == rules
    with pytest.raises(ValueError):
        rule_from_dict({"mechanism": "nope", "requiresFeatures": [], "forbidsFeatures": [],
                        "score": 1, "reason": ""})


def test_custom_rules_change_choice():
    rules = [rule_from_dict({"mechanism": "elastic", "requiresFeatures": ["count"],
                             "forbidsFeatures": [], "score": 9, "reason": "prefer elastic"})]
    plan = select_mechanism(q("SELECT COUNT(*) FROM trips"), CAT, rules, RewriteConfig(0.1))
    assert plan.mechanism == "elastic"


def test_selected_mechanism_is_supported_on_corpus():
    for e in load_corpus():
        cfg = RewriteConfig(0.1, bins=e.bins)
        try:
            plan = select_mechanism(q(e.sql), CAT, config=cfg)
        except NoMechanismSupports:
            assert not any(e.labels.values()), e.id
            continue
        assert e.labels[plan.mechanism], e.id


def test_apply_helpers():
    qq = q("SELECT COUNT(*) FROM trips")
    assert apply_restricted(qq, CAT, 1.0).provenance == "rewritten:restricted"
    assert apply_elastic(qq, CAT, 1.0).provenance == "rewritten:elastic"


def test_check_support_reasons():
    built, why = check_support("wpinq", q("SELECT COUNT(DISTINCT driver_id) FROM trips"), CAT,
                               RewriteConfig(0.1))
    assert built is None and "DISTINCT" in why
    assert set(MECHANISMS) == {"elastic", "restricted", "wpinq", "saa"}

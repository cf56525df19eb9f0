import json
import math

import pytest

from dpsql.catalog import (MANY, CatalogError, catalog_from_dict, catalog_to_dict, load_catalog,
                           with_row_count)


def _doc(**col):
    return {"tables": [{"name": "t", "protected": True, "primaryKey": ["id"],
                        "columns": [{"name": "id", "type": "int"},
                                    {"name": "k", "type": "int", **col}]}]}


def test_bundled_metadata(catalog):
    assert catalog.protected_table == "trips"
    assert catalog.db_size() == 10000
    c = catalog.column("trips", "driver_id")
    assert c.max_frequency == 40 and c.join_cap == 40
    assert catalog.column("trips", "city_id").join_cap == MANY
    assert catalog.column("drivers", "id").max_frequency == 1
    assert catalog.column("drivers", "id").join_cap == 1


def test_round_trip(catalog):
    again = catalog_from_dict(json.loads(json.dumps(catalog_to_dict(catalog))))
    assert again.tables == catalog.tables


@pytest.mark.parametrize("col", [
    {"maxFrequency": 0},
    {"maxFrequency": "x"},
    {"joinMultiplicityCap": "some"},
    {"joinMultiplicityCap": {"capped": 0}},
    {"domainSource": "nope.col"},
    {"colour": "red"},
])
def test_rejects_bad_columns(col):
    with pytest.raises(CatalogError):
        catalog_from_dict(_doc(**col))


def test_caps_parse():
    assert catalog_from_dict(_doc(joinMultiplicityCap="one")).column("t", "k").join_cap == 1
    assert math.isinf(catalog_from_dict(_doc(joinMultiplicityCap="many")).column("t", "k").join_cap)
    assert catalog_from_dict(_doc(joinMultiplicityCap={"capped": 7})).column("t", "k").join_cap == 7


def test_exactly_one_protected_table():
    doc = _doc()
    doc["tables"][0]["protected"] = False
    with pytest.raises(CatalogError):
        catalog_from_dict(doc)


def test_unknown_top_level_key():
    doc = _doc()
    doc["extra"] = 1
    with pytest.raises(CatalogError):
        catalog_from_dict(doc)


def test_load_missing_file(tmp_path):
    with pytest.raises(CatalogError):
        load_catalog(tmp_path / "none.json")


def test_with_row_count(catalog):
    assert with_row_count(catalog, "trips", 7).db_size() == 7

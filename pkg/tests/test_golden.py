"""Rewritten SQL for four reference queries, compared byte for byte.

Set DPSQL_UPDATE_GOLDEN=1 to regenerate the snapshots after an intended change.
"""
import os
from pathlib import Path

import pytest

from dpsql.fixtures import bundled_catalog
from dpsql.mechanisms import RewriteConfig
from dpsql.pipeline import rewrite_sql

GOLDEN = Path(__file__).with_name("golden")

CASES = {
    "laplace_count": ("SELECT COUNT(*) AS count FROM trips", "restricted"),
    "wpinq_join": ("SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id",
                   "wpinq"),
    "saa_avg": ("SELECT AVG(distance) FROM trips", "saa"),
    "histogram_completion": ("SELECT city_id, COUNT(*) AS count FROM trips WHERE distance > 100 "
                             "GROUP BY city_id", "restricted"),
}


def golden_sql(name):
    sql, mech = CASES[name]
    return rewrite_sql(sql, bundled_catalog(), RewriteConfig(0.1, mechanism=mech)).sql + "\n"


@pytest.mark.parametrize("name", CASES)
def test_golden(name):
    path = GOLDEN / f"{name}.sql"
    text = golden_sql(name)
    if os.environ.get("DPSQL_UPDATE_GOLDEN"):
        path.write_text(text)
    assert text == path.read_text()

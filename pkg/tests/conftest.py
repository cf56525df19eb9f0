import pytest

from dpsql.evaluator import Table
from dpsql.fixtures import FixtureConfig, bundled_catalog, make_database


@pytest.fixture(scope="session")
def catalog():
    return bundled_catalog()


@pytest.fixture(scope="session")
def small_db(catalog):
    return make_database(FixtureConfig(n_trips=120, seed=3), catalog)


@pytest.fixture()
def tiny_db(catalog):
    """Four trips by two drivers; hand-checkable."""
    s = catalog.table_schema
    return {
        "trips": Table(s("trips"), [
            (1, 1, 10, 1, 2.0, 8.0, 10, "completed"),
            (2, 1, 11, 1, 6.0, 14.0, 20, "completed"),
            (3, 2, 10, 2, 12.0, 25.0, 35, "cancelled"),
            (4, 3, 12, 2, 1.0, 5.5, 6, "completed"),
        ]),
        "drivers": Table(s("drivers"), [
            (1, 1, 4.8, "sedan", 2018),
            (2, 2, 4.1, "suv", 2020),
        ]),
        "riders": Table(s("riders"), [(10, 1, 2015), (11, 2, 2016), (12, 1, 2019)]),
        "cities": Table(s("cities"), [(1, "city_1", "north"), (2, "city_2", "south"),
                                      (3, "city_3", "east")]),
        "promotions": Table(s("promotions"), [(1, 1, 0.1), (2, 1, 0.2), (3, 2, 0.15)]),
        "trip_events": Table(s("trip_events"), [(1, 1, "pickup"), (2, 1, "tip"), (3, 3, "pickup")]),
    }

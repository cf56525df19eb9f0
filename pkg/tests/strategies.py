"""Hypothesis strategies: small SQL queries over the bundled schema and tiny databases."""
from hypothesis import strategies as st

from dpsql.evaluator import Table

JOINS = [
    ("", ()),
    (" JOIN drivers ON trips.driver_id = drivers.id", ("rating", "signup_year")),
    (" JOIN cities ON trips.city_id = cities.city_id", ("region",)),
    (" JOIN riders ON trips.rider_id = riders.rider_id", ("joined_year",)),
    (" JOIN promotions ON trips.city_id = promotions.promo_city", ("discount",)),
]
PREDICATES = {
    "distance": ["distance > {v}", "distance <= {v}"],
    "fare": ["fare >= {v}"],
    "duration": ["duration < {i}"],
    "status": ["status = 'completed'", "status <> 'cancelled'"],
    "rating": ["drivers.rating > 4.2"],
    "signup_year": ["drivers.signup_year >= 2018"],
    "region": ["cities.region = 'north'"],
    "joined_year": ["riders.joined_year < 2016"],
    "discount": ["promotions.discount > 0.1"],
}


@st.composite
def counting_sql(draw, estimators=False):
    join, extra = draw(st.sampled_from(JOINS))
    cols = ["distance", "fare", "duration", "status", *extra]
    preds = draw(st.lists(st.sampled_from(cols), max_size=2, unique=True))
    conds = []
    for c in preds:
        tmpl = draw(st.sampled_from(PREDICATES[c]))
        conds.append(tmpl.format(v=draw(st.sampled_from([1, 2.5, 5, 10])),
                                 i=draw(st.integers(5, 40))))
    where = f" WHERE {' AND '.join(conds)}" if conds else ""
    group = draw(st.sampled_from([None, "city_id", "status"]))
    aggs = ["COUNT(*)", "COUNT(DISTINCT driver_id)"]
    if estimators:
        aggs += ["SUM(duration)", "SUM(fare)"]
    agg = draw(st.sampled_from(aggs))
    if group == "city_id" and "cities" in join:
        group = "status"
    sel = f"{group}, {agg}" if group else agg
    tail = f" GROUP BY {group}" if group else ""
    return f"SELECT {sel} FROM trips{join}{where}{tail}"


@st.composite
def tiny_database(draw, catalog, max_trips=100):
    n = draw(st.integers(0, max_trips))
    s = catalog.table_schema
    cities = [(c, f"city_{c}", ["north", "south"][c % 2]) for c in range(1, 4)]
    drivers = [(d, draw(st.integers(1, 3)), draw(st.sampled_from([3.9, 4.5, 5.0])), "sedan",
                draw(st.sampled_from([2015, 2019]))) for d in range(1, 5)]
    riders = [(r, draw(st.integers(1, 3)), draw(st.sampled_from([2014, 2018])))
              for r in range(1, 5)]
    trips = []
    for t in range(1, n + 1):
        trips.append((t, draw(st.integers(1, 5)), draw(st.integers(1, 4)), draw(st.integers(1, 3)),
                      draw(st.sampled_from([0.5, 2.5, 4.0, 12.0])),
                      draw(st.sampled_from([3.0, 9.5, 20.0])), draw(st.integers(1, 50)),
                      draw(st.sampled_from(["completed", "cancelled"]))))
    promos = [(p, draw(st.integers(1, 3)), draw(st.sampled_from([0.05, 0.2])))
              for p in range(1, draw(st.integers(0, 5)) + 1)]
    return {"trips": Table(s("trips"), trips), "drivers": Table(s("drivers"), drivers),
            "riders": Table(s("riders"), riders), "cities": Table(s("cities"), cities),
            "promotions": Table(s("promotions"), promos),
            "trip_events": Table(s("trip_events"), [])}

"""Write a synthetic ride-sharing database as CSV files plus a matching catalog."""
import argparse
import json
from pathlib import Path

from dpsql.catalog import catalog_to_dict, with_row_count
from dpsql.evaluator import write_csv
from dpsql.fixtures import FixtureConfig, bundled_catalog, make_database


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--trips", type=int, default=1000)
    ap.add_argument("--cities", type=int, default=8)
    ap.add_argument("--absent", default="", help="comma-separated city ids with no trips")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    absent = tuple(int(c) for c in args.absent.split(",") if c)
    cat = bundled_catalog()
    db = make_database(FixtureConfig(n_trips=args.trips, n_cities=args.cities, seed=args.seed,
                                     absent_cities=absent), cat)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, table in db.items():
        write_csv(args.out / f"{name}.csv", table)
    cat = with_row_count(cat, cat.protected_table, len(db[cat.protected_table].rows))
    (args.out / "catalog.json").write_text(json.dumps(catalog_to_dict(cat), indent=2) + "\n")
    print(f"wrote {len(db)} tables to {args.out}")


if __name__ == "__main__":
    main()

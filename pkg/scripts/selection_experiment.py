"""Does the rule-selected mechanism give the lowest median error on the corpus?"""
import argparse

from dpsql.corpus import load_corpus
from dpsql.experiments import SelectionStudy
from dpsql.fixtures import FixtureConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--trips", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    study = SelectionStudy(args.epsilon, args.trials, args.seed,
                           FixtureConfig(n_trips=args.trips, seed=args.seed))
    results = study.run(load_corpus())
    for r in results:
        errs = "  ".join(f"{m}={e:.4f}" for m, e in r.median_error.items())
        print(f"{'ok ' if r.matches else 'MISS'} {r.query_id:<26} selected={r.selected:<10} {errs}")
    hit = sum(r.matches for r in results)
    print(f"\nselected mechanism is best on {hit}/{len(results)} = {hit / len(results):.1%}")


if __name__ == "__main__":
    main()

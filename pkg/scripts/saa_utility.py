"""Median relative error of subsample-and-aggregate AVG across sizes and epsilons."""
import argparse
import statistics

from dpsql.experiments import SaaUtilityStudy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="1000,3000,10000")
    ap.add_argument("--epsilons", default="0.1,1.0")
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--sql", default="SELECT AVG(distance) FROM trips")
    args = ap.parse_args()

    print(f"{'n':>7} {'eps':>5} {'l':>4} {'median err':>11} {'p90 err':>9}")
    for n in (int(x) for x in args.sizes.split(",")):
        for eps in (float(x) for x in args.epsilons.split(",")):
            study = SaaUtilityStudy(n=n, epsilon=eps, runs=args.runs, sql=args.sql)
            errs = sorted(study.run())
            p90 = errs[int(0.9 * (len(errs) - 1))]
            print(f"{n:>7} {eps:>5g} {study.subsamples():>4} {statistics.median(errs):>11.4f} {p90:>9.4f}")


if __name__ == "__main__":
    main()

"""Mechanism support matrix over the bundled corpus, checked against its labels."""
import argparse
import time

from dpsql.corpus import load_corpus
from dpsql.fixtures import bundled_catalog
from dpsql.mechanisms import MECHANISMS, RewriteConfig, check_support
from dpsql.sql import parse_sql


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=0.1)
    args = ap.parse_args()

    cat = bundled_catalog()
    corpus = load_corpus()
    t0 = time.perf_counter()
    covered = mismatches = 0
    print(f"{'query':<28}" + "".join(f"{m:>11}" for m in MECHANISMS))
    for e in corpus:
        q = parse_sql(e.sql, "ansi", cat)
        cfg = RewriteConfig(args.epsilon, bins=e.bins)
        row, any_ok = [], False
        for m in MECHANISMS:
            ok = check_support(m, q, cat, cfg)[0] is not None
            any_ok |= ok
            flag = "yes" if ok else "-"
            if ok != e.labels[m]:
                mismatches += 1
                flag += "!"
            row.append(f"{flag:>11}")
        covered += any_ok
        print(f"{e.id:<28}" + "".join(row))
    print(f"\n{len(corpus)} queries, coverage {covered / len(corpus):.1%}, "
          f"label mismatches {mismatches}, {time.perf_counter() - t0:.2f} s")


if __name__ == "__main__":
    main()

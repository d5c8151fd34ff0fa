"""How often rank reduction makes progress on random feasible OPF blocks.

Each case mixes several AC operating points that share a schedule and adds
spare PSD mass on the reactive-output squares. The script reports the rank
trajectory and termination reason per case.

    PYTHONPATH=tests python3 scripts/rank_study.py --cases 50
"""

import argparse
from collections import Counter

from oracles import opf_point
from hucsdp.rankred import ConstraintSet, reduce
from hucsdp.reopt import zname


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    reasons, done, seed = Counter(), 0, args.seed
    while done < args.cases:
        case = opf_point(seed)
        seed += 1
        if case is None:
            continue
        done += 1
        inst, prob, Z = case
        cons = ConstraintSet.from_problem(prob, zname(0), {zname(0): Z}, include_objective=True)
        rep = reduce(Z, cons)
        reasons[rep.reason.value] += 1
        drift = max(rep.objective_drift, default=0.0)
        print(f"seed {seed - 1:4d}  buses {inst.network.n_bus}  plants {inst.n_plant}  "
              f"ranks {' -> '.join(map(str, rep.ranks)):<14} {rep.reason.value:<13} drift {drift:.1e}")
    print(dict(reasons))


if __name__ == "__main__":
    main()

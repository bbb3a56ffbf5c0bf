"""Full per-parameter finite-difference report for one cell kind, full or truncated BPTT.

    python scripts/gradcheck_report.py --kind lstmrntn --seed 3
    python scripts/gradcheck_report.py --kind grurntn --bptt-k 2
"""
import argparse

import numpy as np

from grntn.cells import CellKind
from grntn.gradcheck import check_model, random_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", default="grurntn", choices=[k.value for k in CellKind])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--input", type=int, default=5)
    ap.add_argument("--hidden", type=int, default=7)
    ap.add_argument("--vocab", type=int, default=11)
    ap.add_argument("--steps", type=int, default=6)
    ap.add_argument("--bptt-k", type=int, default=None)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    model = random_model(args.kind, args.vocab, args.input, args.hidden, rng)
    tokens = rng.integers(0, args.vocab, size=args.steps + 1)
    reports = check_model(model, tokens, args.bptt_k)
    for r in reports:
        print(r.row())
    print("all pass" if all(r.passed for r in reports) else "FAILURES")


if __name__ == "__main__":
    main()

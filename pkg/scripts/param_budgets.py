"""Parameter counts for the full-size word and character configurations,
and the hidden size that matches any cell to a given budget.

    python scripts/param_budgets.py
    python scripts/param_budgets.py --match gru --target 2200000 --vocab 50 --embed 32
"""
import argparse

from grntn.experiments import budget_table
from grntn.model import count_params, matched_hidden_size


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--match", help="cell kind to size against --target")
    ap.add_argument("--target", type=int)
    ap.add_argument("--vocab", type=int, default=10_000)
    ap.add_argument("--embed", type=int, default=128)
    args = ap.parse_args()

    if args.match:
        d = matched_hidden_size(args.match, args.target, args.vocab, args.embed)
        n = count_params(args.match, args.embed, d, args.vocab, args.embed)
        print(f"{args.match}: d={d} gives {n:,} parameters ({(n - args.target) / args.target:+.2%})")
        return
    print(f"{'configuration':<15} {'count':>12} {'budget':>8} {'dev':>7}")
    for label, n, reported, dev in budget_table():
        print(f"{label:<15} {n:>12,} {reported / 1e6:>7.1f}M {dev:>+7.1%}")


if __name__ == "__main__":
    main()

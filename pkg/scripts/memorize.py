"""Memorize a repeated character pattern and greedily decode it back.

    python scripts/memorize.py --kind grurntn --hidden 16 --epochs 50
"""
import argparse

from grntn.checkpoint import Checkpoint
from grntn.cli import sample
from grntn.data import build_vocab
from grntn.experiments import memorization_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", default="grurntn")
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--embed", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=64)
    ap.add_argument("--pattern", default="abcdefgh")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    for seed in range(args.seeds):
        bpc, hist, secs, model = memorization_run(args.kind, args.hidden, args.embed, args.epochs, args.repeats,
                                                  args.pattern, seed, return_model=True)
        vocab = build_vocab((args.pattern + "\n") * args.repeats, "char")
        decoded = sample(Checkpoint(model, vocab), 2 * (len(args.pattern) + 1), temperature=0)
        print(f"seed {seed}: train BPC {bpc:.4f} after {len(hist)} epochs ({secs:.1f}s), "
              f"greedy decode {decoded!r}")


if __name__ == "__main__":
    main()

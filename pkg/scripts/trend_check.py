"""Validation BPC curves for parameter-matched tensor/baseline pairs on a small text.

    python scripts/trend_check.py                   # bundled 100 KB text, 10 epochs, 3 seeds
    python scripts/trend_check.py --text my.txt --epochs 5 --csv curves.csv
"""
import argparse
import csv

from grntn.experiments import TrendSettings, trend_run


def main():
    d = TrendSettings()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--text", help="UTF-8 text file; defaults to data/tempest.txt")
    ap.add_argument("--embed", type=int, default=d.embed)
    ap.add_argument("--hidden", type=int, default=d.tensor_hidden, help="hidden size of the tensor models")
    ap.add_argument("--epochs", type=int, default=d.epochs)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(d.seeds))
    ap.add_argument("--lr", type=float, default=d.lr)
    ap.add_argument("--dropout", type=float, default=d.dropout)
    ap.add_argument("--kinds", nargs="+", default=None, help="subset of grurntn gru lstmrntn lstm")
    ap.add_argument("--csv", help="write kind,seed,epoch,val_bpc rows here")
    args = ap.parse_args()

    settings = TrendSettings(embed=args.embed, tensor_hidden=args.hidden, epochs=args.epochs,
                             seeds=tuple(args.seeds), lr=args.lr, dropout=args.dropout)
    text = open(args.text, encoding="utf-8").read() if args.text else None
    r = trend_run(text, settings, args.kinds, echo=print)

    print()
    for kind in r.curves:
        print(f"{kind:<9} d={r.hidden[kind]:<4} params={r.params[kind]:>7,}  median final BPC {r.median_final(kind):.3f}")
    for tensor, base in (("grurntn", "gru"), ("lstmrntn", "lstm")):
        if tensor in r.curves and base in r.curves:
            gap = r.median_final(tensor) - r.median_final(base)
            print(f"{tensor} - {base}: {gap:+.3f} BPC ({'ok' if gap <= 0.02 else 'worse'} at +0.02 margin)")
    print(f"{r.seconds / 60:.1f} min")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "seed", "epoch", "val_bpc"])
            for kind, curves in r.curves.items():
                for seed, curve in zip(settings.seeds, curves):
                    w.writerows([kind, seed, e + 1, v] for e, v in enumerate(curve))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Plot compfit CSV tables (parameter maps and interp-eval results).

    python scripts/plot_csv.py map map.csv -o map.png
    python scripts/plot_csv.py interp interp.csv -o interp.png

Plot rendering needs matplotlib; the CSV files themselves are produced by
the CLI without it.
"""
import argparse
import csv
import sys
from collections import defaultdict


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def plot_map(rows, out):
    import matplotlib.pyplot as plt

    by_mode = defaultdict(list)
    for r in rows:
        by_mode[r["mode"]].append(r)
    fields = ["ct_db", "ratio", "attack_ms", "release_ms", "makeup_db"]
    log_fields = {"attack_ms", "release_ms"}
    fig, axes = plt.subplots(len(fields), 1, figsize=(7, 11), sharex=True)
    for ax, field in zip(axes, fields):
        for mode, entries in sorted(by_mode.items()):
            entries = sorted(entries, key=lambda r: float(r["label"]))
            xs = [float(r["label"]) for r in entries]
            ys = [float(r[field]) for r in entries]
            ax.plot(xs, ys, marker="o", label=mode)
        ax.set_ylabel(field)
        if field in log_fields:
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
    axes[0].legend()
    axes[-1].set_xlabel("device setting (label)")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def plot_interp(rows, out):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        pts = [(float(r["label"]), float(r["esr"])) for r in rows
               if r["method"] == method and r["label"] != "average"]
        avg = [float(r["esr"]) for r in rows
               if r["method"] == method and r["label"] == "average"]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
        if avg:
            ax.axhline(avg[0], linestyle="--", alpha=0.6)
    ax.set_xlabel("held-out label")
    ax.set_ylabel("ESR")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("kind", choices=["map", "interp"])
    ap.add_argument("csv_path")
    ap.add_argument("-o", "--out", default=None)
    args = ap.parse_args()
    rows = read_rows(args.csv_path)
    if not rows:
        sys.exit("empty CSV")
    out = args.out or (args.csv_path.rsplit(".", 1)[0] + ".png")
    if args.kind == "map":
        plot_map(rows, out)
    else:
        plot_interp(rows, out)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Plot fitted compressor parameters against device label.

Reads the CSV written by `compfit_cli export-csv` and draws one panel per
parameter, one line per mode.

    python3 tools/plot_map.py map.csv -o map.png
"""

import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = [
    ("ct_db", "threshold (dB)", False),
    ("ratio", "ratio", False),
    ("attack_ms", "attack (ms)", True),
    ("release_ms", "release (ms)", True),
    ("makeup_db", "make-up (dB)", False),
    ("fit_esr", "fit ESR", True),
]


def read_rows(path):
    by_mode = defaultdict(list)
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            by_mode[row["mode"]].append(row)
    for rows in by_mode.values():
        rows.sort(key=lambda r: float(r["label"]))
    return by_mode


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", help="map CSV from export-csv")
    ap.add_argument("-o", "--out", default="map.png", help="output image (default map.png)")
    args = ap.parse_args()

    by_mode = read_rows(args.csv)
    if not by_mode:
        raise SystemExit(f"{args.csv}: no rows")

    fig, axes = plt.subplots(2, 3, figsize=(12, 6.5), sharex=True)
    for ax, (column, title, log) in zip(axes.flat, PANELS):
        for mode, rows in sorted(by_mode.items()):
            pts = [(float(r["label"]), float(r[column])) for r in rows]
            # fit_esr is nan for hand-made entries
            pts = [(x, y) for x, y in pts if y == y and (not log or y > 0)]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=mode)
        ax.set_title(title)
        if log:
            ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("label")
    axes.flat[0].legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

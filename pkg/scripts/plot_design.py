"""Sensor map of one design over the candidate lattice.

Usage: python scripts/plot_design.py RUN_DIR DESIGN_ID [OUT.png]

DESIGN_ID is a stem from RUN_DIR/designs/, e.g. ``oeduu_g1`` or ``det3_g0.5``.
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main(run, design, dest=None):
    run = Path(run)
    with open(run / "designs" / f"{design}.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = [float(r["x"]) for r in rows]
    y = [float(r["y"]) for r in rows]
    on = [r["weight"] == "1" for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(x, y, s=12, facecolors="none", edgecolors="0.6", label="candidates")
    ax.scatter([a for a, k in zip(x, on) if k], [b for b, k in zip(y, on) if k],
               s=40, color="C3", label=f"selected ({sum(on)})")
    ax.set_aspect("equal")
    ax.set_title(design)
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(dest or run / f"{design}.png", dpi=150)


if __name__ == "__main__":
    main(*sys.argv[1:])

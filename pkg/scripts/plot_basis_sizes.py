"""Basis size k by tolerance, SAA size and cluster.

Usage: python scripts/plot_basis_sizes.py RUN_DIR [OUT.png]

Reads RUN_DIR/tables/basis_sizes.csv.
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main(run, dest=None):
    run = Path(run)
    with open(run / "tables" / "basis_sizes.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    mus = sorted({float(r["mu"]) for r in rows}, reverse=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    for i, mu in enumerate(mus):
        growth = [r for r in rows if r["table"] == "growth" and float(r["mu"]) == mu]
        ax1.plot([int(r["N"]) for r in growth], [int(r["k"]) for r in growth], "o-",
                 label=f"mu={mu:g}")
        clus = [r for r in rows if r["table"] == "clusters" and float(r["mu"]) == mu]
        ax2.bar([int(r["cluster"]) + 0.4 * i for r in clus], [int(r["k"]) for r in clus],
                width=0.4, label=f"mu={mu:g}")
    ax1.set_xlabel("N")
    ax1.set_ylabel("k")
    ax1.set_title("single cluster")
    ax2.set_xlabel("cluster")
    ax2.set_title("per-cluster bases")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(dest or run / "basis_sizes.png", dpi=150)


if __name__ == "__main__":
    main(*sys.argv[1:])

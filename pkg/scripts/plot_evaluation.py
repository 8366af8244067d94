"""Held-out -tr K against sensor count for OEDUU and deterministic designs.

Usage: python scripts/plot_evaluation.py RUN_DIR [OUT.png]

Reads RUN_DIR/evaluation/per_design.csv and budget_comparison.csv.
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main(run, dest=None):
    run = Path(run)
    rows = read(run / "evaluation" / "per_design.csv")
    fig, ax = plt.subplots(figsize=(6, 4))
    styles = {"oeduu": ("C0", "o", 0.15), "deterministic": ("C1", "x", -0.15)}
    for mode, (color, marker, shift) in styles.items():
        sel = [r for r in rows if r["mode"] == mode]
        if not sel:
            continue
        x = [int(r["nnz"]) + shift for r in sel]
        mean = [float(r["mean"]) for r in sel]
        lo = [float(r["mean"]) - float(r["p25"]) for r in sel]
        hi = [float(r["p75"]) - float(r["mean"]) for r in sel]
        ax.errorbar(x, mean, yerr=[lo, hi], fmt=marker, color=color, alpha=0.7,
                    capsize=2, label=f"{mode} (mean, 25-75%)")
    comp = read(run / "evaluation" / "budget_comparison.csv")
    if comp:
        ax.plot([int(c["nnz"]) for c in comp], [float(c["deterministic_median"]) for c in comp],
                "k--", lw=1, label="deterministic median")
    ax.set_xlabel("number of sensors")
    ax.set_ylabel("held-out  -tr K")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(dest or run / "evaluation.png", dpi=150)


if __name__ == "__main__":
    main(*sys.argv[1:])

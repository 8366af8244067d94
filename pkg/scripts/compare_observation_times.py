"""Run the desk pipeline with five and with two observation times and compare.

Usage: python scripts/compare_observation_times.py OUT_DIR

Prints the budget comparison of both runs and writes their plots.
"""

import sys
from pathlib import Path

from oeduu.config import load_config
from oeduu.pipeline import run_all

import plot_evaluation

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main(out):
    out = Path(out)
    for name in ("desk", "desk_two_times"):
        report = run_all(load_config(CONFIGS / f"{name}.toml"), out / name)
        ev = report["evaluate"]
        print(f"{name}: better at {ev['fraction_oeduu_better']:.0%} of {ev['n_budgets']} "
              f"budgets, mean advantage {ev['mean_advantage']:.3f}, {report['seconds']:.0f}s")
        for c in report["comparison"]:
            print(f"  nnz={c['nnz']:3d}  oeduu {c['oeduu_mean']:9.2f}  "
                  f"det median {c['deterministic_median']:9.2f}  adv {c['advantage']:+.2f}")
        plot_evaluation.main(out / name)


if __name__ == "__main__":
    main(*sys.argv[1:])

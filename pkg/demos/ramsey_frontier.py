"""Compare the best welfare reachable with and without a date-one tax lottery.

Writes ``fig1.csv`` (surplus curves) and ``fig2.csv`` (plan scatter) to the
current directory.
"""
import csv

import numpy as np

from recdual import ramsey as R

sc = R.RamseyScenario()
print(f"debt capacity with g = 0.65: {R.max_debt(0.65)[0]:.4f}")

with open("fig1.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(R.CURVE_COLUMNS)
    w.writerows(R.curves())

rows = R.enumerate_scatter(sc, "H", lottery=True)
with open("fig2.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(R.SCATTER_COLUMNS)
    w.writerows(rows)

rev = np.array([r[5] for r in rows])
pi = np.array([r[4] for r in rows])
print(f"{len(rows)} plans; share with an interior lottery weight: {np.mean((pi > 0) & (pi < 1)):.2f}")
print(f"revenue range {rev.min():.3f} .. {rev.max():.3f}")

for b in (0.1, 0.3, 0.45):
    out = R.dominance_check(sc, b)
    verdict = "lottery strictly better" if out["dominates"] else "no gain from lotteries"
    print(f"raise {b:.2f}: deterministic {out['best_det']:.4f}, "
          f"lottery {out['best_lottery']:.4f} -> {verdict}")

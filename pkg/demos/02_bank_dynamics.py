"""Exponential-moving-average behavior of the prototype bank.

Two things to see here.  First, a single prototype fed a constant input
contracts toward it geometrically with ratio exactly m per step.  Second,
with many prototypes only the nearest row absorbs each update, so a bank
fed clustered inputs ends up with a few rows tracking the clusters while
the rest stay at their random initialization.
"""

import numpy as np

from causaltrim import init_bank, momentum_update

# geometric contraction, single prototype
bank = init_bank(1, 8, seed=1, momentum=0.99)
target = np.full(8, 2.0)
base = np.linalg.norm(bank.prototypes[0] - target)
print("single prototype, constant input, m=0.99:")
for t in range(1, 11):
    momentum_update(bank, target)
    dist = np.linalg.norm(bank.prototypes[0] - target)
    print(f"  step {t:2d}  distance {dist:.6f}  predicted {base * 0.99 ** t:.6f}")

# nearest-row assignment with clustered inputs
rng = np.random.default_rng(7)
bank = init_bank(16, 8, seed=2, momentum=0.9)
before = bank.prototypes.copy()
centers = rng.normal(size=(3, 8)) * 2.0
for step in range(300):
    center = centers[step % 3]
    momentum_update(bank, center + 0.05 * rng.normal(size=8))

moved = np.linalg.norm(bank.prototypes - before, axis=1)
print(f"\n16 prototypes, 300 updates drawn around 3 cluster centers:")
print(f"  rows that moved: {(moved > 1e-12).sum()} of 16")
print(f"  movement per row: {np.array2string(moved, precision=2, floatmode='fixed')}")
print(f"  update count: {bank.update_count}")

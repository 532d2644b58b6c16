"""A reduced four-arm ablation: baseline, bank only, trimming only, full.

Runs the same protocol as `causaltrim ablate` but on a smaller benchmark
with fewer seeds so it finishes in about two minutes.  The pattern to look
for is in the ood_test column: the baseline leans on the background
shortcut and collapses, while the full model keeps a large part of its
iid accuracy.  For the full-size experiment (the one the acceptance suite
runs) use the default config: 4000 training instances, 5 seeds.
"""

import time

from causaltrim import GeneratorConfig, TrainConfig, run_ablation
from causaltrim.training import ablation_table

gen = GeneratorConfig(train_count=2000, iid_count=500, ood_count=500, seed=1)
config = TrainConfig(epochs=25, num_seeds=2, seed=1)

start = time.time()
result = run_ablation(gen, config, log=print)
print()
print(ablation_table(result))
print(f"finished in {time.time() - start:.0f}s")

base = result.median("baseline", "ood_test")
full = result.median("full", "ood_test")
print(f"\nood_test overall, median over {config.num_seeds} seeds: "
      f"baseline {base:.1f} vs full {full:.1f}  (gap {full - base:+.1f})")

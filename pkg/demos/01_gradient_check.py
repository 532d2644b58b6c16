"""Verify the differentiation contract on the assembled model.

Every forward operation in the library carries an analytic backward; this
demo runs the central-finite-difference oracle over every parameter entry
of a small end-to-end model (encoder, trimming, fusion, head, both loss
terms) and prints the per-parameter worst relative errors.
"""

import time

from causaltrim import full_model_gradcheck

start = time.time()
report = full_model_gradcheck(seed=0)
elapsed = time.time() - start

print(report.summary())
print()
print(f"checked in {elapsed:.2f}s")
print("PASS" if report.passed(1e-4) else "FAIL", "(tolerance 1e-4)")

"""Finite-difference check of the full training objective on micro shapes.

Every gradient in this package is hand-derived, so the one test that
matters most is central differences against the analytic values. The
objective is piecewise smooth (relu kinks, prototype-max ties, variance
hinge), so each draw is resampled until it sits safely away from all of
them.
"""

import time

from protomatch.trainer import objective_finite_diff

# Micro shapes: 4 videos per batch, 9 tokens each, 8-dim tokens, 2 learned
# prototypes, 6-dim joint space. Small enough that central differences over
# every coordinate of every tensor stay fast.
SEEDS = range(10)
TOLERANCE = 1e-5

print("seed   max rel err")
worst = 0.0
start = time.perf_counter()
for seed in SEEDS:
    err = objective_finite_diff(
        seed, batch=4, n_tokens=9, token_dim=8, n_prototypes=2, embed_dim=6
    )
    worst = max(worst, err)
    print(f"{seed:4d}   {err:.3e}")
elapsed = time.perf_counter() - start

print()
print(f"worst over {len(list(SEEDS))} seeds: {worst:.3e}  (tolerance {TOLERANCE:.0e})")
print(f"elapsed: {elapsed:.2f}s")
if worst < TOLERANCE:
    print("analytic gradients agree with finite differences.")
else:
    print("GRADIENT MISMATCH, do not trust training results.")

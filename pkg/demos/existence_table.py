"""Walk the existence table for the local operator in dimension 5.

For alpha = 2 the threshold map is the parabola t (n - 2 - t), so every
quantity below has a closed form to compare against. We scan gamma from the
non-critical range into the critical one and watch q_crit open up.
"""

import numpy as np

from hardylab.thresholds import ProblemInstance, beta_pm, classify, gamma_crit, gamma_H

n = 5
print(f"n = {n}: gamma_H = {gamma_H(n, 2):.4f}, gamma_crit = {gamma_crit(n, 2):.4f}")
print()
print(f"{'gamma':>6} {'beta_-':>8} {'beta_+':>8} {'regime':>12} {'q_crit':>8}")
for gamma in np.linspace(0.0, 2.2, 12):
    bm, bp = beta_pm(n, 2, gamma)
    rep = classify(ProblemInstance(n, 2, gamma=gamma, q=3.0))
    qc = f"{rep.q_crit:8.4f}" if rep.regime.value == "Critical" else f"{'-':>8}"
    print(f"{gamma:6.2f} {bm:8.4f} {bp:8.4f} {rep.regime.value:>12} {qc}")

# Critical operator: the perturbation exponent decides which sign condition counts.
print()
gamma = 2.0
for q in (2.5, 8 / 3, 3.0):
    rep = classify(ProblemInstance(n, 2, gamma=gamma, q=q, h0=1.0, mass=-0.3))
    print(f"gamma={gamma}, q={q:.4f}: governing {rep.governing.value:>16}, verdict {rep.verdict.value}")

"""How fast does the test-function energy approach the compactness level?

The deficit Upsilon - sup_t Phi(t v_eps) scales like eps^k. In the
non-critical case k = n - q (n - 2)/2; in the critical case with q below
q_crit the mass term wins and k = beta_+ - beta_-.
"""

import numpy as np

from hardylab.testfun import expansion_fit
from hardylab.thresholds import ProblemInstance

eps = np.geomspace(0.02, 0.002, 8)
cases = {
    "non-critical n=5": ProblemInstance(5, 2, gamma=0.0, q=3, h0=1.0),
    "critical n=3, gamma=0.21": ProblemInstance(3, 2, gamma=0.21, lam=0.5, q=3, h0=1.0),
}
for label, inst in cases.items():
    r = expansion_fit(inst, eps)
    print(f"{label}: fitted {r.deficit_fit.exponent:.4f} (r^2 {r.deficit_fit.r_squared:.4f}), "
          f"predicted {r.predicted_exponent:.4f} -> {r.verdict.value}")
    if r.mass is not None:
        print(f"    mass of the ball at lambda={inst.lam}: {r.mass:.4f}")

"""Find a positive solution at the mountain-pass level and check it.

Below the compactness level Upsilon the Palais-Smale sequences converge, so
the computed level should sit strictly under it.
"""

from hardylab.mountainpass import MPConfig, mountain_pass_solve, ps_monitor
from hardylab.quadform import GridMode, build_grid
from hardylab.thresholds import ProblemInstance

inst = ProblemInstance(5, 2, gamma=1.0, lam=0.0, q=3, h0=1.0)
grid = build_grid(GridMode.RADIAL, 1.0, 400, 2.0, n=5)
r = mountain_pass_solve(inst, MPConfig(), grid=grid)

print(f"level      {r.level:.6f}")
print(f"Upsilon    {r.upsilon:.6f}  (mu_discrete {r.mu_discrete:.4f})")
print(f"residual   {r.residual:.2e} after {r.iterations} iterations ({r.deform_iterations} on the path)")
print(f"min u      {r.solution.values.min():.3e}")
print(f"identity   {r.energy_identity_error:.2e}")

rep = ps_monitor(r.trace, r.upsilon)
print(f"monitor    below threshold: {rep.below_threshold}, compactness risk: {rep.compactness_risk}")

print()
print("profile near the origin (u grows like r^-beta_- there):")
for k in range(0, 400, 50):
    print(f"  r={grid.nodes[k]:.4e}  u={r.solution.values[k]:.6f}")

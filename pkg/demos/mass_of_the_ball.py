"""Interior mass of the unit ball as lambda climbs toward lambda_1.

At lambda = 0 the singular solution is r^-beta_+ - r^-beta_-, so the mass is
exactly -1. It increases with lambda and blows up at the first eigenvalue,
which for n = 3, gamma = 0.21 is the square of the first zero of J_0.2.
"""

from scipy.optimize import brentq
from scipy.special import jv

from hardylab.quadform import GridMode, build_grid, first_eigenvalue, mass_estimate
from hardylab.thresholds import ProblemInstance

inst = ProblemInstance(3, 2, gamma=0.21)
nu = 0.2
j = brentq(lambda x: jv(nu, x), 2.0, 4.0)

grid = build_grid(GridMode.RADIAL, 1.0, 800, 3.0, n=3)
lam1 = first_eigenvalue(inst, grid)
print(f"lambda_1: discrete {lam1:.6f}, Bessel {j * j:.6f}")

grid = build_grid(GridMode.RADIAL, 1.0, 2000, 2.0, n=3)
for frac in (0.0, 0.25, 0.5, 0.75, 0.9, 0.99):
    lam = frac * j * j
    print(f"lambda = {lam:8.4f}  mass = {mass_estimate(inst.replace(lam=lam), grid): .6f}")

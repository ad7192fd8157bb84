"""Propagate one random control three ways and watch them agree.

The exact solver multiplies per-segment matrix exponentials; the other two
integrate the Bloch equations and the density-matrix master equation with
adaptive Runge-Kutta. Run: python demos/propagate.py
"""
import numpy as np

from blochreach import PiecewiseControl, SystemParams, propagate_adaptive, propagate_exact
from blochreach.dynamics import propagate_gksl

params = SystemParams()  # omega=1, gamma=0.05, kappa=0.01
rng = np.random.default_rng(1)
u = PiecewiseControl(10.0, rng.uniform(-100, 100, 10), rng.uniform(0, 20, 10))
x0 = np.array([0.5, 0.0, 0.0])

traj = propagate_exact(x0, u, params)
print("breakpoint states (exact):")
for t, x in zip(np.linspace(0, u.T, len(traj)), traj):
    print(f"  t={t:5.1f}  x=({x[0]:+.6f}, {x[1]:+.6f}, {x[2]:+.6f})  |x|={np.linalg.norm(x):.6f}")

end = traj[-1]
print("adaptive RK difference:", np.linalg.norm(end - propagate_adaptive(x0, u, params)))
print("density matrix difference:", np.linalg.norm(end - propagate_gksl(x0, u, params)))

# with v = 0 and constant n every start relaxes to (0, 0, 1/(1 + 2n))
for n in (0.0, 2.0):
    steady = propagate_exact([0, 0, 0], PiecewiseControl(400.0, np.zeros(10), np.full(10, n)), params)[-1]
    print(f"n={n}: steady state {steady.round(6)} vs {1 / (1 + 2 * n):.6f}")

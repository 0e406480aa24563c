"""Tour of the core simulation objects.

Builds a periodic lattice, runs the tilted interface dynamic with
reproducible counter-based noise, and inspects the exactly conserved
quantities: the spatial mean of every slice and the determinism of the
trajectory under replays.
"""

import numpy as np

from gradphi.dynamics import run_corrector, run_stationary_periodic, stable_dt
from gradphi.lattice import ParabolicCylinder, cylinder_average, make_torus
from gradphi.noise import NoiseSource
from gradphi.potential import soft_quartic

grid = make_torus(d=2, L=8)
V = soft_quartic(0.5)
print(f"torus: {grid.nsites} sites, stable step dt = {stable_dt(V, grid.dim):.5f}")

# the corrector dynamic: zero initial data, tilt (0.5, 0), horizon L^2
src = NoiseSource(seed=2024)
traj = run_corrector(grid, horizon=64.0, slope=(0.5, 0.0), V=V, src=src,
                     record_stride=16)
means = np.abs(traj.values.mean(axis=(1, 2)))
print(f"max |spatial mean| across slices: {means.max():.2e}  (exactly conserved)")

replay = run_corrector(grid, horizon=64.0, slope=(0.5, 0.0), V=V, src=src,
                       record_stride=16)
print("bitwise identical replay:", np.array_equal(traj.values, replay.values))

# window averages of the tilted flux approximate the effective nonlinearity
stat = run_stationary_periodic(grid, (0.5, 0.0), V, src, horizon=16.0,
                               record_stride=4)
window = ParabolicCylinder(-16.0, 0.0, radius=4)
avg = cylinder_average(stat, window)
print(f"window average of the field (mean-zero dynamics): {avg:+.4f}")

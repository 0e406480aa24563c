"""Occupation times near a level: Brownian reference vs edge gradients.

The time a drift-plus-Brownian process spends within a small threshold of
zero grows linearly in the threshold; the gradient of the interface
dynamic across a fixed edge behaves like a slowed Brownian motion.
"""

import numpy as np

from gradphi.noise import NoiseSource
from gradphi.occupation import (
    BrownianSpec,
    EdgeGradientSpec,
    occupation_experiment,
    occupation_on_set,
)
from gradphi.potential import quadratic

eps = [0.05, 0.1, 0.2]
bm = occupation_experiment(BrownianSpec(dt=1e-3), eps, 2000, NoiseSource(seed=1))
edge = occupation_experiment(EdgeGradientSpec(L=8, potential=quadratic()), eps,
                             2000, NoiseSource(seed=2))
print("threshold  brownian   edge-gradient")
for e, mb, me in zip(eps, bm.means, edge.means):
    print(f"  {e:.2f}     {mb:.4f}      {me:.4f}")
print(f"slopes: brownian {bm.slope:.3f}, edge {edge.slope:.3f} "
      f"(ratio to brownian/sqrt2: {edge.slope / (bm.slope / np.sqrt(2)):.2f})")

res = occupation_on_set(BrownianSpec(dt=1e-3), [(-0.15, -0.05), (0.05, 0.15)],
                        1000, NoiseSource(seed=3))
print(f"occupation of a split set of measure {res.measure:.2f}: "
      f"{res.mean:.4f} +- {res.stderr:.4f}")

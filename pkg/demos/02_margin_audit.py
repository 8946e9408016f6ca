"""How conservative is the Taylor-model margin?

Compares the DA bound on the sampled-data margin against a dense-grid
estimate of the same Lipschitz constants on random states and gains.
"""

import numpy as np

from iccbf import campaign as C

for env in ("cruise", "docking", "inspection"):
    rows = C.margin_audit(env, samples=10, seed=1, grid_samples=2000)
    ratio = np.array([r.nu_da / r.nu_grid for r in rows if r.nu_grid > 0])
    print(f"{env:10s} {len(rows):3d} rows  contained {all(r.contained for r in rows)}  "
          f"nu_da / nu_grid: median {np.median(ratio):.2f}, max {ratio.max():.2f}")

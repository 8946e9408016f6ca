"""Tiles, sunlight and the cluster direction fed to the inspection policy."""

import numpy as np

from iccbf import inspection_task as it

geom = it.InspectionGeometry(R_C=10.0, sun_angle=0.0)
print("tiles", geom.positions.shape, "sun", geom.sun)

# circle the chief in the x-y plane and watch the inspected count grow
rng = np.random.default_rng(0)
for phi in np.linspace(0, 2 * np.pi, 9)[:-1]:
    x = np.r_[300 * np.cos(phi), 300 * np.sin(phi), 0.0, 0, 0, 0]
    added = geom.update(x)
    d = geom.direction(rng)
    print(f"phi {np.degrees(phi):5.0f} deg  +{added:2d} tiles  total {geom.n_insp:3d}  "
          f"boresight {np.degrees(geom.theta_b(x)):6.1f} deg  cluster dir {np.round(d, 2)}")

"""One lens scanned across a tilted beam instead of a lens array."""

from pathlib import Path

import numpy as np

from hstomo import hs_slope_estimate, scanning_signal
from hstomo.cli import aperture_truth
from hstomo.scenario import load_scenario
from hstomo.sensor import SensorGeometry, projection_vector

scen = load_scenario(Path(__file__).parent / "scenarios" / "scanning.toml")
geom = scen.geometry
kets = [projection_vector(geom, scen.grid, 0, p) for p in range(geom.n_pixels)]
offsets = scen.data["sensor"]["scan_offsets"]
table = scanning_signal(aperture_truth(scen), offsets, kets)

moved = SensorGeometry(np.asarray(offsets), geom.aperture_width, geom.focal_length,
                       geom.wavenumber, geom.pixel_angles)
est = hs_slope_estimate(table, moved)
print(f"true slope {scen.data['source']['slope']}")
for x, s in zip(est.lens_centers, est.slopes):
    print(f"  lens at {x:6.1f}: slope {s:.5f}")

"""Classical centroid slopes of a converging beam.

The spot centroid reads the local slope weighted by the beam envelope inside
each aperture. For a Gaussian envelope of width W and aperture width dx the
effective lens centre moves to x W^2 / (W^2 + dx^2), so the centroid slopes
follow the true slope scaled by that factor, not the slope itself.
"""

from pathlib import Path

import numpy as np

from hstomo import forward_signal, hs_slope_estimate
from hstomo.cli import aperture_truth, projections
from hstomo.scenario import load_scenario

scen = load_scenario(Path(__file__).parent / "scenarios" / "curved_wavefront.toml")
src = scen.data["source"]
geom = scen.geometry
signals = forward_signal(aperture_truth(scen), projections(scen))
est = hs_slope_estimate(signals, geom)

true_slopes = est.lens_centers / src["radius"]
w2, dx2 = src["envelope_width"] ** 2, geom.aperture_width**2
factor = w2 / (w2 + dx2)
print(f"envelope factor W^2 / (W^2 + dx^2) = {factor:.4f}")
print("  lens    true slope   centroid   ratio")
for x, t, s in zip(est.lens_centers, true_slopes, est.slopes):
    print(f"{x:6.1f}   {t:10.5f}   {s:8.5f}   {s / t:.4f}")
fit = np.polyfit(true_slopes, est.slopes, 1)[0]
print(f"fitted ratio {fit:.4f}")

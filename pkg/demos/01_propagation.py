"""Free-space propagation of a partially coherent field.

A Gaussian beam spreads exactly as the closed-form paraxial beam does, the
propagator is unitary, and the total intensity of a random mixture survives
propagation and the switch to the angular representation.
"""

import numpy as np

from hstomo import (
    angular_intensity,
    coherence_from_modes,
    fresnel_propagator,
    gaussian_field,
    make_grid,
    position_intensity,
    random_coherence,
    refocus,
)

grid = make_grid(512, 0.1)
k, w = 4.0, 0.5
rayleigh_range = 2 * k * w**2  # intensity exp(-x^2 / (2 w^2))
beam = coherence_from_modes([(1.0, gaussian_field(grid, 0.0, w))])

print("distance   rms width   closed form")
for z in (0.0, rayleigh_range, 3 * rayleigh_range):
    scan = position_intensity(refocus(beam, 2 * np.pi / k, z))
    p = scan.values / scan.values.sum()
    rms = np.sqrt(np.sum(p * scan.coordinates**2))
    print(f"{z:8.2f}   {rms:9.5f}   {w * np.sqrt(1 + (z / rayleigh_range) ** 2):11.5f}")

u = fresnel_propagator(grid, 2 * np.pi / k, 7.0)
print(f"\nunitarity error of the propagator: {u.unitarity_error():.1e}")

q = random_coherence(make_grid(64, 0.5), 5, np.random.default_rng(0))
moved = refocus(q, 2 * np.pi / k, 7.0)
print(f"trace before / after propagation: {q.trace:.12f} / {moved.trace:.12f}")
print(f"position and angular totals:      {position_intensity(moved).total:.12f} / "
      f"{angular_intensity(moved).total:.12f}")

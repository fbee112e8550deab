"""Coherent and incoherent images of two point sources at the resolution limit.

The separation is the first dark point of a single source's image through a
tapered pupil. At that spacing incoherent sources add intensities and show
two peaks, while coherent ones add amplitudes and merge into one.
"""

from hstomo import (
    ComplexField,
    coherence_from_modes,
    local_maxima,
    make_grid,
    point_field,
    pupil_image,
    rayleigh_separation,
)

grid = make_grid(128, 1.0)
cutoff = 0.5
d = rayleigh_separation(grid, cutoff)
c = grid.n_points // 2
h = int(round(d / 2))
a = point_field(grid, grid.coordinates[c - h])
b = point_field(grid, grid.coordinates[c + h])
print(f"resolution-limit separation: {d:g}")

cases = {
    "coherent": coherence_from_modes([(1.0, ComplexField(grid, a.amplitudes + b.amplitudes))]),
    "incoherent": coherence_from_modes([(1.0, a), (1.0, b)]),
}
for name, q in cases.items():
    img = pupil_image(q, cutoff)
    peaks = img.coordinates[local_maxima(img.values, 0.05)]
    print(f"{name:>10}: {peaks.size} maxima above 5% at x = {peaks.tolist()}")
    row = img.values[c - 8:c + 9] / img.values.max()
    print("            " + " ".join(f"{v:.2f}" for v in row))

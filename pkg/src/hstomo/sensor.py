"""Hartmann-Shack sensor model.

Each microlens ``j`` has a Gaussian aperture ``A_j(x) = exp[-(x - x_j)^2 / (4 dx^2)]``
and focuses the aperture-plane field onto a detector; the pixel at
focal-plane coordinate ``p`` records

    S[j, p] = <| sum_x Phi_ap(x) A_j(x) exp(i k x p / f) pitch |^2>.

The lens multiplies the field by the focusing factor without complex
conjugation, so the measurement ket (the vector ``v`` with
``S = pitch^2 v^dagger Q v``) is the complex conjugate of the focusing
factor, carried back to the object plane by ``U^dagger``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .field import (
    CoherenceMatrix,
    ComplexField,
    Grid,
    GridMismatchError,
    Propagator,
    shift_operator,
)

QUADRATURE_MAX_POINTS = 32


def _strictly_increasing(a: np.ndarray) -> bool:
    return bool(np.all(np.diff(a) > 0))


@dataclass(frozen=True)
class SensorGeometry:
    """Microlens array plus focal-plane detector.

    Parameters
    ----------
    lens_centers : array_like
        Microlens centres ``x_j``.
    aperture_width : float
        Gaussian aperture width ``dx`` (same for every lens).
    focal_length : float
        Focal length ``f``.
    wavenumber : float
        ``k = 2 pi / lambda``.
    pixel_angles : array_like
        Focal-plane pixel coordinates ``p``; the direction probed is ``p / f``.
    """

    lens_centers: np.ndarray
    aperture_width: float
    focal_length: float
    wavenumber: float
    pixel_angles: np.ndarray

    def __post_init__(self):
        lc = np.atleast_1d(np.asarray(self.lens_centers, dtype=float))
        pa = np.atleast_1d(np.asarray(self.pixel_angles, dtype=float))
        if lc.ndim != 1 or lc.size < 1:
            raise ValueError("need at least one lens")
        if pa.ndim != 1 or pa.size < 1:
            raise ValueError("need at least one pixel")
        if not _strictly_increasing(lc):
            raise ValueError("lens_centers must be strictly increasing")
        if not _strictly_increasing(pa):
            raise ValueError("pixel_angles must be strictly increasing")
        for name in ("aperture_width", "focal_length", "wavenumber"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        lc.setflags(write=False)
        pa.setflags(write=False)
        object.__setattr__(self, "lens_centers", lc)
        object.__setattr__(self, "pixel_angles", pa)

    @property
    def n_lenses(self) -> int:
        return self.lens_centers.size

    @property
    def n_pixels(self) -> int:
        return self.pixel_angles.size

    @property
    def directions(self) -> np.ndarray:
        """Probed directions ``p / f``."""
        return self.pixel_angles / self.focal_length

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.wavenumber

    def check_index(self, j: int, p_index: int | None = None):
        if not 0 <= j < self.n_lenses:
            raise IndexError(f"lens index {j} out of range [0, {self.n_lenses})")
        if p_index is not None and not 0 <= p_index < self.n_pixels:
            raise IndexError(f"pixel index {p_index} out of range [0, {self.n_pixels})")


def default_geometry(
    grid: Grid,
    wavenumber: float,
    n_lenses: int = 10,
    n_pixels: int = 10,
    lens_pitch: float | None = None,
    aperture_width: float | None = None,
    focal_length: float = 1.0,
    pixel_half_span: float | None = None,
) -> SensorGeometry:
    """Evenly spaced lens array centred on the grid.

    Defaults: lens pitch = grid span / J, aperture width = 0.4 lens pitch,
    pixels spanning +-lambda f / (2 dx).
    """
    if lens_pitch is None:
        lens_pitch = grid.span / n_lenses
    if aperture_width is None:
        aperture_width = 0.4 * lens_pitch
    if pixel_half_span is None:
        pixel_half_span = (2 * np.pi / wavenumber) * focal_length / (2 * aperture_width)
    centers = grid.center + (np.arange(n_lenses) - (n_lenses - 1) / 2) * lens_pitch
    if n_pixels == 1:
        pixels = np.zeros(1)
    else:
        pixels = np.linspace(-pixel_half_span, pixel_half_span, n_pixels)
    return SensorGeometry(centers, aperture_width, focal_length, wavenumber, pixels)


@dataclass(frozen=True)
class ProjectionSet:
    """Measurement kets ``v[j, p]`` in the object-plane frame.

    ``geometry`` is ``None`` for projection sets that do not come from a
    lens array (e.g. random test sets).
    """

    grid: Grid
    vectors: np.ndarray
    geometry: SensorGeometry | None = None

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=complex)
        if v.ndim == 2:
            v = v[:, None, :]
        if v.ndim != 3 or v.shape[2] != self.grid.n_points:
            raise ValueError(f"vectors must have shape (J, P, {self.grid.n_points})")
        if np.any(np.linalg.norm(v, axis=2) == 0):
            raise ValueError("projection vectors must be non-zero")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def flat(self) -> np.ndarray:
        """Kets as rows, shape ``(J*P, n)``."""
        return self.vectors.reshape(-1, self.grid.n_points)

    def vector(self, j: int, p_index: int) -> ComplexField:
        return ComplexField(self.grid, self.vectors[j, p_index])

    def conjugated(self, w: np.ndarray) -> ProjectionSet:
        """Apply a fixed matrix to every ket."""
        return ProjectionSet(self.grid, self.vectors @ np.asarray(w).T, self.geometry)

    def repeated(self, times: int = 2) -> ProjectionSet:
        return ProjectionSet(self.grid, np.concatenate([self.vectors] * times, axis=1),
                             self.geometry)


@dataclass(frozen=True)
class SignalTable:
    values: np.ndarray
    total: float = dc_field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        if np.any(v < 0):
            raise ValueError("signals must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "total", float(v.sum()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def normalized(self) -> np.ndarray:
        return self.values / self.total


@dataclass(frozen=True)
class MeasurementData:
    counts: np.ndarray
    exposure: float
    seed: int | None = None

    def __post_init__(self):
        c = np.array(self.counts, dtype=float, ndmin=2)
        if not np.all(np.isfinite(c)):
            raise ValueError("counts must be finite")
        bad = np.argwhere(c < 0)
        if bad.size:
            j, p = bad[0]
            raise ValueError(f"negative count {c[j, p]} in bin (j={j}, p={p})")
        if not self.exposure > 0:
            raise ValueError(f"exposure must be > 0, got {self.exposure}")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


def aperture_profile(geometry: SensorGeometry, grid: Grid, j: int) -> np.ndarray:
    geometry.check_index(j)
    x = grid.coordinates
    return np.exp(-((x - geometry.lens_centers[j]) ** 2) / (4 * geometry.aperture_width**2))


def focusing_factor(geometry: SensorGeometry, grid: Grid, j: int, p_index: int) -> np.ndarray:
    """``A_j(x) exp(i k x p / f)`` sampled on the grid."""
    geometry.check_index(j, p_index)
    x = grid.coordinates
    return aperture_profile(geometry, grid, j) * np.exp(
        1j * geometry.wavenumber * x * geometry.directions[p_index]
    )


def _check_propagator(grid: Grid, u: Propagator | None):
    if u is not None and u.grid != grid:
        raise GridMismatchError(f"propagator grid {u.grid} does not match {grid}")


def projection_vector(
    geometry: SensorGeometry, grid: Grid, j: int, p_index: int, u: Propagator | None = None
) -> ComplexField:
    """Object-frame measurement ket for lens ``j``, pixel ``p_index``.

    ``u`` propagates object plane -> aperture plane; the returned ket is
    ``U^dagger conj(A_j exp(i k x p / f))``.
    """
    _check_propagator(grid, u)
    ket = focusing_factor(geometry, grid, j, p_index).conj()
    if u is not None:
        ket = u.matrix.conj().T @ ket
    return ComplexField(grid, ket)


def build_projections(
    geometry: SensorGeometry, grid: Grid, u: Propagator | None = None
) -> ProjectionSet:
    _check_propagator(grid, u)
    x = grid.coordinates
    a = np.exp(-((x[None, :] - geometry.lens_centers[:, None]) ** 2)
               / (4 * geometry.aperture_width**2))
    phase = np.exp(-1j * geometry.wavenumber * geometry.directions[:, None] * x[None, :])
    kets = a[:, None, :] * phase[None, :, :]
    if u is not None:
        kets = kets @ u.matrix.conj()
    return ProjectionSet(grid, kets, geometry)


def _clamp_signals(s: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(s)) if s.size else 0.0
    if np.any(s < -1e-12 * scale):
        raise ValueError("negative predicted signal; coherence matrix is not PSD")
    return np.clip(s, 0.0, None)


def quadratic_forms(q: np.ndarray, kets: np.ndarray, pitch: float) -> np.ndarray:
    """``pitch^2 v^dagger Q v`` for every row ``v`` of ``kets``."""
    return pitch**2 * np.einsum("ia,ab,ib->i", kets.conj(), q, kets).real


def forward_signal(q: CoherenceMatrix, projections: ProjectionSet) -> SignalTable:
    if q.grid != projections.grid:
        raise GridMismatchError("coherence matrix and projections use different grids")
    s = quadratic_forms(q.entries, projections.flat, q.grid.pitch)
    return SignalTable(_clamp_signals(s).reshape(projections.shape))


def forward_signal_quadrature(
    q: CoherenceMatrix,
    u: Propagator,
    geometry: SensorGeometry,
    j: int,
    p_index: int,
    allow_large: bool = False,
) -> float:
    """Brute-force four-fold sum over ``x, x', x'', x'''`` (O(n^4)).

    The kernel ``h(x - x'')`` links object point ``x`` to aperture point
    ``x''`` and is read from the propagator as ``U[x'', x]``.
    """
    grid = q.grid
    if u.grid != grid:
        raise GridMismatchError("propagator and coherence matrix use different grids")
    if grid.n_points > QUADRATURE_MAX_POINTS and not allow_large:
        raise ValueError(
            f"quadrature oracle limited to {QUADRATURE_MAX_POINTS} points "
            f"(got {grid.n_points}); pass allow_large=True to override"
        )
    alpha = focusing_factor(geometry, grid, j, p_index)
    h = u.matrix.T  # h[x, x''] = U[x'', x]
    # the kernel matrix already contains the object-plane measure; the two
    # aperture-plane integrals carry pitch each
    total = np.einsum(
        "ab,ac,bd,c,d->",
        q.entries,
        h,
        h.conj(),
        alpha,
        alpha.conj(),
        optimize=False,
    )
    return max(float(total.real) * grid.pitch**2, 0.0)


def geometric_signal(geometry: SensorGeometry, slope: float, j: int, p_index: int) -> float:
    """Closed-form lens signal for a locally linear wavefront, peak 1."""
    geometry.check_index(j, p_index)
    k, dx = geometry.wavenumber, geometry.aperture_width
    return float(np.exp(-2 * k**2 * dx**2 * (geometry.directions[p_index] - slope) ** 2))


def geometric_row(geometry: SensorGeometry, slope: float) -> np.ndarray:
    k, dx = geometry.wavenumber, geometry.aperture_width
    return np.exp(-2 * k**2 * dx**2 * (geometry.directions - slope) ** 2)


def scanning_signal(
    q: CoherenceMatrix,
    offsets: Sequence[float],
    base_projection: ComplexField | Sequence[ComplexField],
) -> SignalTable:
    """Signals of a single moving aperture.

    Row ``j`` holds ``pitch^2 (T_j a)^dagger Q (T_j a)`` for each base ket
    ``a``, where ``T_j`` translates by ``offsets[j]``; this is the lens at
    its reference position moved by ``offsets[j]``.
    """
    if isinstance(base_projection, ComplexField):
        base_projection = [base_projection]
    grid = q.grid
    for b in base_projection:
        if b.grid != grid:
            raise GridMismatchError("base projection uses a different grid")
    base = np.stack([b.amplitudes for b in base_projection])
    rows = []
    for off in offsets:
        t = shift_operator(grid, off).matrix
        rows.append(_clamp_signals(quadratic_forms(q.entries, base @ t.T, grid.pitch)))
    return SignalTable(np.array(rows))


def sample_counts(signals: SignalTable, exposure: float, seed: int) -> MeasurementData:
    """Poisson photon counts with mean ``exposure * S / S.total``.

    Each bin draws from its own stream keyed by ``(seed, j, p)`` so the
    result does not depend on evaluation order.
    """
    if not exposure > 0:
        raise ValueError(f"exposure must be > 0, got {exposure}")
    if signals.total <= 0:
        raise ValueError("signal table is identically zero")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    means = exposure * signals.normalized()
    counts = np.zeros_like(means)
    for (j, p), lam in np.ndenumerate(means):
        if lam > 0:
            counts[j, p] = np.random.default_rng([seed, j, p]).poisson(lam)
    return MeasurementData(counts, exposure, seed)


def noiseless_counts(signals: SignalTable, exposure: float) -> MeasurementData:
    if signals.total <= 0:
        raise ValueError("signal table is identically zero")
    return MeasurementData(exposure * signals.normalized(), exposure, None)

"""Fields, coherence matrices and unitary propagators on a 1-D grid.

Integrals over the transverse coordinate are Riemann sums with weight
``pitch``. Propagation uses the discrete Fourier basis, so the grid is
periodic: keep signals away from the edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

HERMITIAN_RTOL = 1e-12
PSD_RTOL = 1e-10


class GridMismatchError(ValueError):
    """Raised when two objects that must share a grid do not."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform centred sampling of the transverse coordinate."""

    n_points: int
    pitch: float
    center: float = 0.0

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be > 0, got {self.pitch}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "center", float(self.center))

    @property
    def coordinates(self) -> np.ndarray:
        m = np.arange(self.n_points)
        return self.center + (m - (self.n_points - 1) / 2) * self.pitch

    @property
    def frequencies(self) -> np.ndarray:
        """Angular spatial frequencies of the DFT basis, in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.pitch)

    @property
    def span(self) -> float:
        return self.n_points * self.pitch

    def index_of(self, x: float) -> int:
        """Index of the grid point nearest to ``x``."""
        return int(np.argmin(np.abs(self.coordinates - x)))


def make_grid(n_points: int, pitch: float, center: float = 0.0) -> Grid:
    return Grid(n_points, pitch, center)


def _check_same_grid(a: Grid, b: Grid):
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


@dataclass(frozen=True)
class ComplexField:
    grid: Grid
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.shape != (self.grid.n_points,):
            raise ValueError(
                f"amplitudes have shape {amp.shape}, expected ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", _frozen(amp))

    @property
    def power(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real * self.grid.pitch)

    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class CoherenceMatrix:
    """Discretized mutual coherence function ``Q[m, n] = <Phi(x_m) Phi*(x_n)>``.

    The constructor checks Hermiticity and positive semidefiniteness and
    stores the exactly Hermitian part of ``entries``.
    """

    grid: Grid
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        n = self.grid.n_points
        if e.shape != (n, n):
            raise ValueError(f"entries have shape {e.shape}, expected ({n}, {n})")
        if not np.all(np.isfinite(e)):
            raise ValueError("entries must be finite")
        scale = np.linalg.norm(e)
        if scale > 0 and np.linalg.norm(e - e.conj().T) > HERMITIAN_RTOL * scale:
            raise ValueError("coherence matrix is not Hermitian")
        e = 0.5 * (e + e.conj().T)
        ev = np.linalg.eigvalsh(e)
        if ev[0] < -PSD_RTOL * max(ev[-1], 0.0) - 1e-300:
            raise ValueError(
                f"coherence matrix is not positive semidefinite "
                f"(min eigenvalue {ev[0]:.3e}, max {ev[-1]:.3e})"
            )
        object.__setattr__(self, "entries", _frozen(e))

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def __add__(self, other: CoherenceMatrix) -> CoherenceMatrix:
        _check_same_grid(self.grid, other.grid)
        return CoherenceMatrix(self.grid, self.entries + other.entries)

    def scaled(self, c: float) -> CoherenceMatrix:
        if c < 0:
            raise ValueError("scale factor must be non-negative")
        return CoherenceMatrix(self.grid, c * self.entries)


def clamp_psd(grid: Grid, entries: np.ndarray) -> CoherenceMatrix:
    """Hermitize ``entries`` and zero its negative eigenvalues."""
    e = 0.5 * (entries + entries.conj().T)
    w, v = np.linalg.eigh(e)
    w = np.clip(w, 0.0, None)
    return CoherenceMatrix(grid, (v * w) @ v.conj().T)


@dataclass(frozen=True)
class Propagator:
    grid: Grid
    matrix: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.matrix, dtype=complex)
        n = self.grid.n_points
        if u.shape != (n, n):
            raise ValueError(f"matrix has shape {u.shape}, expected ({n}, {n})")
        object.__setattr__(self, "matrix", _frozen(u))

    def unitarity_error(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.grid.n_points))))

    def apply(self, field: ComplexField) -> ComplexField:
        _check_same_grid(self.grid, field.grid)
        return ComplexField(self.grid, self.matrix @ field.amplitudes)

    def __matmul__(self, other: Propagator) -> Propagator:
        _check_same_grid(self.grid, other.grid)
        return Propagator(self.grid, self.matrix @ other.matrix)

    @property
    def H(self) -> Propagator:
        return Propagator(self.grid, self.matrix.conj().T)


def identity_propagator(grid: Grid) -> Propagator:
    return Propagator(grid, np.eye(grid.n_points, dtype=complex))


def _dft_matrix(n: int) -> np.ndarray:
    return np.fft.fft(np.eye(n), axis=0, norm="ortho")


def fresnel_propagator(grid: Grid, wavelength: float, distance: float) -> Propagator:
    """Paraxial free-space propagation over a signed distance.

    Angular-spectrum method: the field is taken to the discrete momentum
    basis, multiplied by ``exp(-i d lambda kappa^2 / (4 pi))`` and taken
    back. The result is exactly unitary on the grid.
    """
    if not wavelength > 0:
        raise ValueError(f"wavelength must be > 0, got {wavelength}")
    if distance == 0:
        return identity_propagator(grid)
    kappa = grid.frequencies
    transfer = np.exp(-1j * distance * wavelength * kappa**2 / (4 * np.pi))
    f = _dft_matrix(grid.n_points)
    return Propagator(grid, f.conj().T @ (transfer[:, None] * f))


def shift_operator(grid: Grid, offset: float) -> Propagator:
    """Circular translation of fields by ``offset`` (a multiple of the pitch)."""
    steps = offset / grid.pitch
    k = int(round(steps))
    if abs(steps - k) > 1e-9 * max(1.0, abs(steps)):
        raise ValueError(f"offset {offset} is not an integer multiple of pitch {grid.pitch}")
    n = grid.n_points
    return Propagator(grid, np.roll(np.eye(n, dtype=complex), k, axis=0))


def coherence_from_modes(modes: Iterable[tuple[float, ComplexField]]) -> CoherenceMatrix:
    """Statistical mixture ``Q = sum_i w_i Phi_i Phi_i^dagger``."""
    modes = list(modes)
    if not modes:
        raise ValueError("at least one mode is required")
    grid = modes[0][1].grid
    q = np.zeros((grid.n_points, grid.n_points), dtype=complex)
    for w, field in modes:
        if w < 0:
            raise ValueError(f"mode weight must be non-negative, got {w}")
        _check_same_grid(grid, field.grid)
        a = field.amplitudes
        q += w * np.outer(a, a.conj())
    return CoherenceMatrix(grid, q)


def wavefront_state(
    grid: Grid, wavenumber: float, phase_profile: Callable[[np.ndarray], np.ndarray]
) -> CoherenceMatrix:
    """Fully coherent unit-amplitude field ``exp(-i k phi(x))``.

    Entries are ``Q(x, x') = exp{i k [phi(x') - phi(x)]}``.
    """
    phi = np.broadcast_to(np.asarray(phase_profile(grid.coordinates), dtype=float),
                          (grid.n_points,))
    field = ComplexField(grid, np.exp(-1j * wavenumber * phi))
    return coherence_from_modes([(1.0, field)])


EVOLVE = "evolve"
MEASUREMENT_FRAME = "measurement_frame"


def transform_coherence(
    q: CoherenceMatrix, u: Propagator, direction: str = EVOLVE
) -> CoherenceMatrix:
    """Conjugate a coherence matrix by a propagator.

    ``evolve`` gives ``U Q U^dagger`` (the matrix at the propagated plane);
    ``measurement_frame`` gives ``U^dagger Q U``.
    """
    _check_same_grid(q.grid, u.grid)
    m = u.matrix
    if direction == EVOLVE:
        out = m @ q.entries @ m.conj().T
    elif direction == MEASUREMENT_FRAME:
        out = m.conj().T @ q.entries @ m
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return CoherenceMatrix(q.grid, out)


def gaussian_field(grid: Grid, center: float, width: float, tilt_wavenumber: float = 0.0,
                   amplitude: float = 1.0) -> ComplexField:
    """Gaussian beam ``exp(-(x - c)^2 / (4 w^2) + i kappa x)``.

    ``width`` is the rms width of the intensity profile.
    """
    x = grid.coordinates
    return ComplexField(
        grid, amplitude * np.exp(-((x - center) ** 2) / (4 * width**2) + 1j * tilt_wavenumber * x)
    )


def point_field(grid: Grid, position: float) -> ComplexField:
    """Unit-power field on the grid point nearest to ``position``."""
    a = np.zeros(grid.n_points, dtype=complex)
    a[grid.index_of(position)] = 1.0 / np.sqrt(grid.pitch)
    return ComplexField(grid, a)


def plane_wave(grid: Grid, wavenumber: float) -> ComplexField:
    return ComplexField(grid, np.exp(1j * wavenumber * grid.coordinates))


def random_coherence(grid: Grid, rank: int, rng: np.random.Generator,
                     trace: float | None = None) -> CoherenceMatrix:
    """Random PSD matrix of the given rank (test and demo helper)."""
    n = grid.n_points
    modes = rng.standard_normal((rank, n)) + 1j * rng.standard_normal((rank, n))
    weights = rng.uniform(0.2, 1.0, rank)
    q = (modes.T * weights) @ modes.conj()
    if trace is not None:
        q *= trace / np.trace(q).real
    return CoherenceMatrix(grid, q)


def check_same_grid(*objs) -> Grid:
    grid = objs[0].grid
    for o in objs[1:]:
        _check_same_grid(grid, o.grid)
    return grid

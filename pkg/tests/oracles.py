"""Independent reference implementations used by the tests.

Each oracle is written from the defining formula with explicit loops or
closed forms and shares no code with the package.
"""

import cmath
import math

import numpy as np


def fresnel_matrix_loop(n, pitch, wavelength, distance):
    """U[a, b] = (1/n) sum_k exp(2 pi i k (a - b) / n) exp(-i d lambda kappa_k^2 / (4 pi))."""
    u = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            acc = 0j
            for k in range(n):
                kk = k if k < (n + 1) // 2 else k - n  # fftfreq ordering
                kappa = 2 * math.pi * kk / (n * pitch)
                acc += cmath.exp(2j * math.pi * k * (a - b) / n) * cmath.exp(
                    -1j * distance * wavelength * kappa**2 / (4 * math.pi))
            u[a, b] = acc / n
    return u


def gaussian_beam(x, width, distance, wavenumber):
    """Paraxial free-space solution for the initial field exp(-x^2 / (4 w^2))."""
    a = width**2 + 1j * distance / (2 * wavenumber)
    return np.sqrt(width**2 / a) * np.exp(-(x**2) / (4 * a))


def signal_loop(q, ket, pitch):
    """pitch^2 sum_ab conj(v_a) Q_ab v_b."""
    n = len(ket)
    acc = 0j
    for a in range(n):
        for b in range(n):
            acc += np.conj(ket[a]) * q[a, b] * ket[b]
    return (pitch**2 * acc).real


def lens_ket(x, center, width, wavenumber, direction):
    """conj(A(x) exp(i k x p / f)) evaluated pointwise."""
    out = []
    for xi in x:
        amp = math.exp(-((xi - center) ** 2) / (4 * width**2))
        out.append(amp * cmath.exp(-1j * wavenumber * xi * direction))
    return np.array(out)


def gaussian_overlap_sq(dx, dkappa, width):
    """|<g1|g2>|^2 for unit-norm Gaussians exp(-(x-X)^2/(4w^2)) e^{i kappa x}."""
    return math.exp(-(dx**2) / (4 * width**2)) * math.exp(-(width**2) * dkappa**2)


def uhlmann_fidelity(a, b):
    """(Tr sqrt(sqrt(a) b sqrt(a)))^2 via scipy matrix square roots."""
    from scipy.linalg import sqrtm

    a = a / np.trace(a).real
    b = b / np.trace(b).real
    sa = sqrtm(a)
    return float(np.trace(sqrtm(sa @ b @ sa)).real ** 2)


def multinomial_loglik(counts, signals):
    total = sum(signals.ravel())
    acc = 0.0
    for s, p in zip(counts.ravel(), signals.ravel()):
        if s > 0:
            acc += s * math.log(p / total)
    return acc


def centroid(values, positions):
    num = sum(v * p for v, p in zip(values, positions))
    return num / sum(values)

import numpy as np
import pytest

from hstomo.field import (
    EVOLVE,
    CoherenceMatrix,
    GridMismatchError,
    coherence_from_modes,
    fresnel_propagator,
    gaussian_field,
    make_grid,
    random_coherence,
    transform_coherence,
    wavefront_state,
)
from hstomo.sensor import (
    MeasurementData,
    ProjectionSet,
    SensorGeometry,
    SignalTable,
    aperture_profile,
    build_projections,
    default_geometry,
    focusing_factor,
    forward_signal,
    forward_signal_quadrature,
    geometric_row,
    geometric_signal,
    noiseless_counts,
    projection_vector,
    sample_counts,
    scanning_signal,
)

from .oracles import lens_ket, signal_loop


@pytest.fixture
def setup(rng):
    g = make_grid(12, 0.5)
    k = 4.0
    geom = default_geometry(g, k, n_lenses=3, n_pixels=4)
    u = fresnel_propagator(g, 2 * np.pi / k, 1.5)
    q = random_coherence(g, 3, rng)
    return g, k, geom, u, q


class TestGeometry:
    def test_validation(self):
        with pytest.raises(ValueError, match="increasing"):
            SensorGeometry([1.0, 0.0], 1.0, 1.0, 1.0, [0.0])
        with pytest.raises(ValueError, match="aperture_width"):
            SensorGeometry([0.0], -1.0, 1.0, 1.0, [0.0])
        with pytest.raises(ValueError, match="pixel"):
            SensorGeometry([0.0], 1.0, 1.0, 1.0, [0.0, 0.0])

    def test_default_layout(self):
        g = make_grid(64, 1.0)
        geom = default_geometry(g, 2.0)
        assert geom.n_lenses == 10 and geom.n_pixels == 10
        np.testing.assert_allclose(geom.lens_centers, -geom.lens_centers[::-1])
        np.testing.assert_allclose(np.diff(geom.lens_centers), 6.4)
        assert geom.aperture_width == pytest.approx(0.4 * 6.4)
        half = geom.wavelength * geom.focal_length / (2 * geom.aperture_width)
        assert geom.pixel_angles[-1] == pytest.approx(half)

    def test_index_checks(self, setup):
        g, _, geom, _, _ = setup
        with pytest.raises(IndexError):
            focusing_factor(geom, g, 3, 0)
        with pytest.raises(IndexError):
            focusing_factor(geom, g, 0, 4)


class TestProjections:
    def test_ket_is_conjugated_focusing_factor(self, setup):
        g, k, geom, _, _ = setup
        v = projection_vector(geom, g, 1, 2).amplitudes
        ref = lens_ket(g.coordinates, geom.lens_centers[1], geom.aperture_width, k,
                       geom.directions[2])
        np.testing.assert_allclose(v, ref, atol=1e-15)
        np.testing.assert_allclose(focusing_factor(geom, g, 1, 2), ref.conj(), atol=1e-15)
        np.testing.assert_allclose(aperture_profile(geom, g, 1), np.abs(ref), atol=1e-15)

    def test_object_frame_ket(self, setup):
        g, _, geom, u, _ = setup
        v = projection_vector(geom, g, 0, 1, u).amplitudes
        np.testing.assert_allclose(v, u.matrix.conj().T @ projection_vector(geom, g, 0, 1)
                                   .amplitudes, atol=1e-14)

    def test_build_matches_single(self, setup):
        g, _, geom, u, _ = setup
        ps = build_projections(geom, g, u)
        assert ps.shape == (3, 4)
        for j in range(3):
            for p in range(4):
                np.testing.assert_allclose(ps.vectors[j, p],
                                           projection_vector(geom, g, j, p, u).amplitudes,
                                           atol=1e-14)

    def test_grid_mismatch(self, setup):
        _, _, geom, u, _ = setup
        with pytest.raises(GridMismatchError):
            build_projections(geom, make_grid(12, 1.0), u)

    def test_projection_set_shapes(self):
        g = make_grid(4, 1.0)
        ps = ProjectionSet(g, np.eye(4))
        assert ps.shape == (4, 1)
        assert ps.repeated(3).shape == (4, 3)
        with pytest.raises(ValueError):
            ProjectionSet(g, np.zeros((2, 4)))
        with pytest.raises(ValueError):
            ProjectionSet(g, np.ones((2, 3)))


class TestForwardSignal:
    def test_matches_loop_oracle(self, setup):
        g, _, geom, u, q = setup
        ps = build_projections(geom, g, u)
        s = forward_signal(q, ps).values
        for j in range(3):
            for p in range(4):
                ref = signal_loop(q.entries, ps.vectors[j, p], g.pitch)
                assert s[j, p] == pytest.approx(ref, rel=1e-12)

    def test_matches_quadrature(self, setup):
        g, _, geom, u, q = setup
        s = forward_signal(q, build_projections(geom, g, u)).values
        for j in range(3):
            for p in range(4):
                ref = forward_signal_quadrature(q, u, geom, j, p)
                assert s[j, p] == pytest.approx(ref, rel=1e-11)

    def test_object_and_aperture_frames_agree(self, setup):
        g, _, geom, u, q = setup
        s_obj = forward_signal(q, build_projections(geom, g, u)).values
        s_ap = forward_signal(transform_coherence(q, u, EVOLVE), build_projections(geom, g)).values
        np.testing.assert_allclose(s_obj, s_ap, rtol=1e-11)

    def test_quadrature_guard(self, rng):
        g = make_grid(33, 1.0)
        geom = default_geometry(g, 1.0, n_lenses=1, n_pixels=1)
        u = fresnel_propagator(g, 1.0, 0.0)
        q = random_coherence(g, 1, rng)
        with pytest.raises(ValueError, match="allow_large"):
            forward_signal_quadrature(q, u, geom, 0, 0)
        assert forward_signal_quadrature(q, u, geom, 0, 0, allow_large=True) >= 0

    def test_grid_mismatch(self, setup):
        g, _, geom, _, _ = setup
        q = CoherenceMatrix(make_grid(12, 1.0), np.eye(12))
        with pytest.raises(GridMismatchError):
            forward_signal(q, build_projections(geom, g))

    def test_tilt_sign(self):
        # a field exp(-i k a x) peaks at direction +a
        g = make_grid(256, 0.25)
        k, a = 4.0, 0.3
        q = wavefront_state(g, k, lambda x: a * x)
        geom = SensorGeometry([0.0], 6.0, 1.0, k, np.linspace(-0.6, 0.6, 41))
        row = forward_signal(q, build_projections(geom, g)).values[0]
        assert geom.directions[np.argmax(row)] == pytest.approx(a)


class TestGeometricLimit:
    def test_peak_one_at_slope(self):
        geom = SensorGeometry([0.0], 2.0, 1.0, 3.0, [-0.1, 0.0, 0.1])
        assert geometric_signal(geom, 0.1, 0, 2) == pytest.approx(1.0)
        row = geometric_row(geom, 0.0)
        assert row[1] == 1.0 and row[0] == pytest.approx(row[2])
        assert row[0] == pytest.approx(np.exp(-2 * 9 * 4 * 0.01))

    def test_full_model_approaches_closed_form(self):
        g = make_grid(512, 0.1)
        k, a = 10.0, 0.05
        q = wavefront_state(g, k, lambda x: a * x)
        geom = SensorGeometry([0.0], 2.0, 1.0, k, np.linspace(-0.1, 0.2, 13))
        row = forward_signal(q, build_projections(geom, g)).values[0]
        np.testing.assert_allclose(row / row.max(), geometric_row(geom, a), atol=1e-9)


class TestScanning:
    def test_rows_equal_shifted_lens(self, rng):
        # grid wide enough that the translated aperture never wraps around
        g = make_grid(48, 1.0)
        k = 2.0
        q = random_coherence(g, 2, rng)
        pix = [-0.5, 0.0, 0.5]
        base = SensorGeometry([0.0], 1.5, 1.0, k, pix)
        kets = [projection_vector(base, g, 0, p) for p in range(3)]
        offsets = [-3.0, 0.0, 2.0]
        table = scanning_signal(q, offsets, kets)
        assert table.shape == (3, 3)
        moved = SensorGeometry(offsets, 1.5, 1.0, k, pix)
        np.testing.assert_allclose(table.values, forward_signal(q, build_projections(moved, g))
                                   .values, rtol=1e-12)

    def test_single_ket(self, rng):
        g = make_grid(8, 1.0)
        q = random_coherence(g, 1, rng)
        f = gaussian_field(g, 0.5, 1.0)
        assert scanning_signal(q, [0.0, 1.0], f).shape == (2, 1)


class TestNoise:
    def test_noiseless_is_exact(self):
        s = SignalTable(np.array([[1.0, 3.0], [0.0, 4.0]]))
        d = noiseless_counts(s, 80.0)
        np.testing.assert_array_equal(d.counts, 80.0 * s.values / 8.0)

    def test_same_seed_same_counts(self):
        s = SignalTable(np.arange(1.0, 13.0).reshape(3, 4))
        a = sample_counts(s, 1e4, 7)
        b = sample_counts(s, 1e4, 7)
        np.testing.assert_array_equal(a.counts, b.counts)
        assert not np.array_equal(a.counts, sample_counts(s, 1e4, 8).counts)

    def test_poisson_mean(self):
        s = SignalTable(np.ones((20, 20)))
        d = sample_counts(s, 4e6, 0)
        mean = 4e6 / 400
        assert abs(d.counts.mean() - mean) < 5 * np.sqrt(mean / 400)
        assert np.all(d.counts == np.round(d.counts))

    def test_invalid(self):
        s = SignalTable(np.ones((2, 2)))
        with pytest.raises(ValueError):
            sample_counts(s, 1e3, -1)
        with pytest.raises(ValueError):
            sample_counts(s, 0.0, 1)
        with pytest.raises(ValueError):
            noiseless_counts(SignalTable(np.zeros((2, 2))), 1.0)
        with pytest.raises(ValueError):
            SignalTable(np.array([[-1.0]]))

    def test_negative_count_names_bin(self):
        with pytest.raises(ValueError, match=r"bin \(j=1, p=0\)"):
            MeasurementData(np.array([[1.0, 2.0], [-3.0, 0.0]]), 1.0)


def test_incoherent_pair_signal_is_sum():
    g = make_grid(32, 0.5)
    geom = default_geometry(g, 3.0, n_lenses=4, n_pixels=5)
    ps = build_projections(geom, g, fresnel_propagator(g, 2 * np.pi / 3.0, 2.0))
    f1, f2 = gaussian_field(g, -2.0, 0.6), gaussian_field(g, 2.0, 0.6)
    both = forward_signal(coherence_from_modes([(1.0, f1), (1.0, f2)]), ps).values
    one = forward_signal(coherence_from_modes([(1.0, f1)]), ps).values
    two = forward_signal(coherence_from_modes([(1.0, f2)]), ps).values
    np.testing.assert_allclose(both, one + two, rtol=1e-12)

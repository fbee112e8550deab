import json

import numpy as np
import pytest

from hstomo.scenario import Scenario, ScenarioError, load_modes, load_scenario
from hstomo.field import make_grid


def minimal(**sections):
    raw = {"grid": {"n_points": 16}, "source": {"kind": "two_point", "separation": 4.0}}
    raw.update(sections)
    return raw


class TestDefaults:
    def test_resolved_defaults(self):
        s = Scenario.from_dict(minimal())
        d = s.data
        assert d["grid"] == {"units": "dimensionless", "n_points": 16, "pitch": 1.0,
                             "center": 0.0}
        assert d["optics"]["wavenumber"] == 1.0
        assert d["optics"]["wavelength"] == pytest.approx(2 * np.pi)
        assert d["sensor"]["n_lenses"] == 10 and d["sensor"]["lens_pitch"] == 1.6
        assert d["sensor"]["aperture_width"] == pytest.approx(0.64)
        assert d["noise"] == {"noiseless": False, "exposure": 1e6, "seed": 0}
        assert d["reconstruction"]["trace_target"] == "from-data"
        assert d["analysis"]["refocus_distances"] == [0.0]
        assert d["analysis"]["husimi_width"] == pytest.approx(0.64)
        assert "oracle_check" not in d["outputs"]["artifacts"]

    def test_refocus_default_includes_object_plane(self):
        s = Scenario.from_dict(minimal(optics={"wavenumber": 2.0, "distance": 7.0}))
        assert s.data["analysis"]["refocus_distances"] == [0.0, -7.0]

    def test_resolved_data_round_trips(self):
        s = Scenario.from_dict(minimal(optics={"wavenumber": 2.0, "distance": 3.0}))
        again = Scenario.from_dict(json.loads(json.dumps(s.data)))
        assert again.data == s.data

    def test_source_positions_on_grid(self):
        s = Scenario.from_dict(minimal(source={"kind": "two_point", "separation": 5.0}))
        assert s.source_positions() == [-2.5, 2.5]
        assert s.source_q.trace == pytest.approx(2.0)

    def test_micrometre_units(self):
        raw = minimal(grid={"n_points": 16, "units": "micrometre", "pitch": 0.5},
                      optics={"wavelength": 0.633})
        s = Scenario.from_dict(raw)
        assert s.wavenumber == pytest.approx(2 * np.pi / 0.633)
        assert s.length_unit == "um"


class TestValidation:
    @pytest.mark.parametrize("raw,path", [
        (minimal(grid={"n_points": 1}), "grid.n_points"),
        (minimal(grid={"n_points": 16, "pitch": -1}), "grid.pitch"),
        (minimal(grid={"n_points": "many"}), "grid.n_points"),
        (minimal(grid={"n_points": 16, "units": "furlong"}), "grid.units"),
        (minimal(grid={"n_points": 16, "units": "micrometre"}), "grid.pitch"),
        (minimal(optics={"wavelength": 1.0}), "optics.wavelength"),
        (minimal(optics={"wavenumber": 0}), "optics.wavenumber"),
        (minimal(optics={"wavenumber": 2.0, "wavelength": 3.0}), "optics.wavelength"),
        (minimal(source={"kind": "laser"}), "source.kind"),
        (minimal(source={"kind": "two_point"}), "source.separation"),
        (minimal(source={"kind": "two_point", "separation": "rayleigh"}), "source.separation"),
        (minimal(source={"kind": "plane_waves", "tilts": [0.1], "weights": [1, 2]}),
         "source.weights"),
        (minimal(source={"kind": "wavefront", "profile": "quadratic"}), "source.radius"),
        (minimal(source={"kind": "modes", "file": "missing.csv"}), "source.file"),
        (minimal(sensor={"n_lenses": 0}), "sensor.n_lenses"),
        (minimal(sensor={"n_lenses": 1, "scan_offsets": [0.5]}), "sensor.scan_offsets[0]"),
        (minimal(sensor={"n_lenses": 1, "scan_offsets": [1.0, 0.0]}), "sensor.scan_offsets"),
        (minimal(sensor={"n_lenses": 2, "scan_offsets": [0.0]}), "sensor.n_lenses"),
        (minimal(noise={"seed": -3}), "noise.seed"),
        (minimal(noise={"noiseless": "yes"}), "noise.noiseless"),
        (minimal(reconstruction={"dilution": 2.0}), "reconstruction.dilution"),
        (minimal(reconstruction={"g_pinv_cutoff": 1.0}), "reconstruction.g_pinv_cutoff"),
        (minimal(reconstruction={"trace_target": "auto"}), "reconstruction.trace_target"),
        (minimal(outputs={"artifacts": ["plots"]}), "outputs.artifacts"),
        (minimal(grid={"n_points": 16, "colour": 1}), "grid.colour"),
        (minimal(extras={}), "extras"),
    ])
    def test_error_carries_field_path(self, raw, path):
        with pytest.raises(ScenarioError) as info:
            Scenario.from_dict(raw)
        assert info.value.path == path
        assert str(info.value).startswith(path + ":")

    def test_seed_override(self):
        s = Scenario.from_dict(minimal()).with_seed(42)
        assert s.data["noise"]["seed"] == 42
        with pytest.raises(ScenarioError):
            s.with_seed(-1)


class TestSources:
    def test_plane_waves_mixture(self):
        raw = minimal(source={"kind": "plane_waves", "tilts": [0.0, 0.5], "weights": [1.0, 3.0]},
                      optics={"wavenumber": 2.0})
        q = Scenario.from_dict(raw).source_q
        assert q.trace == pytest.approx(4 * 16)
        assert np.sum(q.eigvalsh() > 1e-9 * q.trace) == 2

    def test_coherent_pair_is_pure(self):
        raw = minimal(source={"kind": "two_point", "separation": 4.0, "coherent": True,
                              "width": 1.0})
        q = Scenario.from_dict(raw).source_q
        assert np.sum(q.eigvalsh() > 1e-12 * q.trace) == 1

    def test_wavefront_profiles(self):
        for prof, extra in [("zero", {}), ("linear", {"slope": 0.1}),
                            ("quadratic", {"radius": 50.0})]:
            raw = minimal(source={"kind": "wavefront", "profile": prof, **extra})
            q = Scenario.from_dict(raw).source_q
            assert q.trace == pytest.approx(16.0)

    def test_modes_file(self, tmp_path):
        rows = ["mode,weight,index,real,imag", "0,2.0,3,1.0,0.0", "0,2.0,4,0.0,1.0",
                "1,1.0,10,1.0,0.0"]
        (tmp_path / "m.csv").write_text("\n".join(rows) + "\n")
        raw = minimal(source={"kind": "modes", "file": "m.csv"})
        q = Scenario.from_dict(raw, tmp_path).source_q
        e = q.entries
        assert e[3, 3] == 2.0 and e[3, 4] == pytest.approx(-2j) and e[10, 10] == 1.0
        assert e[3, 10] == 0

    def test_modes_file_errors(self, tmp_path):
        (tmp_path / "bad.csv").write_text("mode,weight,index,real,imag\n0,1.0,99,1.0,0.0\n")
        with pytest.raises(ScenarioError, match="outside the grid"):
            load_modes(tmp_path / "bad.csv", make_grid(16, 1.0))
        (tmp_path / "hdr.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ScenarioError, match="header"):
            load_modes(tmp_path / "hdr.csv", make_grid(16, 1.0))


class TestFiles:
    def test_toml_and_manifest(self, tmp_path):
        p = tmp_path / "s.toml"
        p.write_text('[grid]\nn_points = 16\n[source]\nkind = "two_point"\nseparation = 4.0\n')
        s = load_scenario(p)
        m = tmp_path / "manifest.json"
        m.write_text(json.dumps({"scenario": s.data}))
        assert load_scenario(m).data == s.data

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(ScenarioError, match="not found"):
            load_scenario(tmp_path / "nope.toml")
        p = tmp_path / "bad.toml"
        p.write_text("[grid\n")
        with pytest.raises(ScenarioError, match="invalid TOML"):
            load_scenario(p)

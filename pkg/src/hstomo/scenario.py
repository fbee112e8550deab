"""Declarative scenario files.

A scenario is a TOML document with the sections ``grid``, ``source``,
``optics``, ``sensor``, ``noise``, ``reconstruction``, ``analysis`` and
``outputs``. :func:`load_scenario` validates every field (reporting the
dotted field path on failure) and fills in defaults, so the resolved
dictionary stored in a run manifest reproduces the run exactly. A JSON
manifest is accepted wherever a scenario is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import analysis
from .field import (
    CoherenceMatrix,
    ComplexField,
    Grid,
    Propagator,
    coherence_from_modes,
    fresnel_propagator,
    gaussian_field,
    point_field,
    wavefront_state,
)
from .sensor import SensorGeometry, default_geometry
from .tables import read_table
from .tomography import ReconstructionConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SECTIONS = ("grid", "source", "optics", "sensor", "noise", "reconstruction",
            "analysis", "outputs")
SOURCE_KINDS = ("two_point", "plane_waves", "wavefront", "modes")
UNITS = ("dimensionless", "micrometre")
ANALYSIS_ARTIFACTS = ("position_intensity", "angular_intensity", "coherence_degree",
                      "purity", "husimi", "wavefront")
ARTIFACTS = ("true_q",) + ANALYSIS_ARTIFACTS + ("oracle_check",)
DEFAULT_ARTIFACTS = ("true_q",) + ANALYSIS_ARTIFACTS


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class _Section:
    """Reads and validates keys of one table, recording resolved values."""

    def __init__(self, name: str, raw: dict):
        if not isinstance(raw, dict):
            raise ScenarioError(name, "must be a table")
        self.name = name
        self.raw = raw
        self.out: dict = {}

    def _path(self, key):
        return f"{self.name}.{key}"

    def has(self, key) -> bool:
        return key in self.raw and self.raw[key] is not None

    def number(self, key, default=None, *, positive=False, nonneg=False, integer=False,
               lo=None, hi=None, required=False):
        if not self.has(key):
            if required:
                raise ScenarioError(self._path(key), "is required")
            if default is None:
                self.out[key] = None
                return None
            val = default
        else:
            val = self.raw[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ScenarioError(self._path(key), f"must be a number, got {val!r}")
        if not math.isfinite(val):
            raise ScenarioError(self._path(key), "must be finite")
        if integer:
            if int(val) != val:
                raise ScenarioError(self._path(key), f"must be an integer, got {val!r}")
            val = int(val)
        else:
            val = float(val)
        if positive and not val > 0:
            raise ScenarioError(self._path(key), f"must be > 0, got {val!r}")
        if nonneg and val < 0:
            raise ScenarioError(self._path(key), f"must be >= 0, got {val!r}")
        if lo is not None and val < lo:
            raise ScenarioError(self._path(key), f"must be >= {lo}, got {val!r}")
        if hi is not None and val > hi:
            raise ScenarioError(self._path(key), f"must be <= {hi}, got {val!r}")
        self.out[key] = val
        return val

    def boolean(self, key, default):
        val = self.raw.get(key, default)
        if not isinstance(val, bool):
            raise ScenarioError(self._path(key), f"must be true or false, got {val!r}")
        self.out[key] = val
        return val

    def choice(self, key, options, default=None):
        val = self.raw.get(key, default)
        if val not in options:
            raise ScenarioError(self._path(key), f"must be one of {list(options)}, got {val!r}")
        self.out[key] = val
        return val

    def numbers(self, key, default=None, *, required=False):
        if not self.has(key):
            if required:
                raise ScenarioError(self._path(key), "is required")
            val = default
        else:
            val = self.raw[key]
        if val is None:
            self.out[key] = None
            return None
        if not isinstance(val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
            for v in val
        ):
            raise ScenarioError(self._path(key), f"must be a list of numbers, got {val!r}")
        val = [float(v) for v in val]
        self.out[key] = val
        return val

    def strings(self, key, options, default):
        val = self.raw.get(key, default)
        if not isinstance(val, list) or not all(v in options for v in val):
            raise ScenarioError(self._path(key), f"must be a list drawn from {list(options)}")
        self.out[key] = list(val)
        return val

    def text(self, key, default=None, required=False):
        if not self.has(key):
            if required:
                raise ScenarioError(self._path(key), "is required")
            self.out[key] = default
            return default
        val = self.raw[key]
        if not isinstance(val, str):
            raise ScenarioError(self._path(key), f"must be a string, got {val!r}")
        self.out[key] = val
        return val

    def finish(self) -> dict:
        unknown = set(self.raw) - set(self.out)
        if unknown:
            raise ScenarioError(self._path(sorted(unknown)[0]), "unknown field")
        return self.out


@dataclass
class Scenario:
    """Validated, fully resolved scenario."""

    data: dict
    base_dir: Path

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | str = ".") -> Scenario:
        base_dir = Path(base_dir)
        if not isinstance(raw, dict):
            raise ScenarioError("<root>", "scenario must be a table")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ScenarioError(sorted(unknown)[0], "unknown section")
        data = {}

        s = _Section("grid", raw.get("grid", {}))
        units = s.choice("units", UNITS, "dimensionless")
        n = s.number("n_points", 64, integer=True, lo=2)
        if units == "dimensionless":
            pitch = s.number("pitch", 1.0, positive=True)
        else:
            pitch = s.number("pitch", required=True, positive=True)
        s.number("center", 0.0)
        data["grid"] = s.finish()
        span = n * pitch

        s = _Section("optics", raw.get("optics", {}))
        # one of wavelength/wavenumber is primary per unit system; the other
        # may be present (resolved manifests carry both) if it agrees
        primary, derived = (("wavenumber", "wavelength") if units == "dimensionless"
                            else ("wavelength", "wavenumber"))
        if s.has(derived) and not s.has(primary):
            raise ScenarioError(f"optics.{derived}",
                                f"use optics.{primary} in {units} units")
        if units == "dimensionless":
            val = s.number(primary, 1.0, positive=True)
        else:
            val = s.number(primary, required=True, positive=True)
        other = 2 * math.pi / val
        if s.has(derived):
            given = s.number(derived, positive=True)
            if abs(given - other) > 1e-12 * other:
                raise ScenarioError(f"optics.{derived}",
                                    f"inconsistent with optics.{primary} = {val}")
        s.out[derived] = other
        s.number("distance", 0.0)
        s.number("pupil_cutoff", None, positive=True)
        s.number("pupil_taper", 0.5, lo=0.0, hi=1.0)
        data["optics"] = s.finish()
        k = data["optics"]["wavenumber"]

        data["source"] = cls._parse_source(_Section("source", raw.get("source", {})),
                                           base_dir, data, span)

        s = _Section("sensor", raw.get("sensor", {}))
        j = s.number("n_lenses", 10, integer=True, lo=1)
        s.number("n_pixels", 10, integer=True, lo=1)
        lp = s.number("lens_pitch", span / j, positive=True)
        dx = s.number("aperture_width", 0.4 * lp, positive=True)
        f = s.number("focal_length", 1.0, positive=True)
        s.number("pixel_half_span", (2 * math.pi / k) * f / (2 * dx), positive=True)
        offsets = s.numbers("scan_offsets", None)
        if offsets is not None:
            if not offsets:
                raise ScenarioError("sensor.scan_offsets", "must not be empty")
            for i, o in enumerate(offsets):
                if abs(o / pitch - round(o / pitch)) > 1e-9 * max(1.0, abs(o / pitch)):
                    raise ScenarioError(f"sensor.scan_offsets[{i}]",
                                        f"{o} is not a multiple of the grid pitch {pitch}")
            if any(b <= a for a, b in zip(offsets, offsets[1:])):
                raise ScenarioError("sensor.scan_offsets", "must be strictly increasing")
            if j != 1:
                raise ScenarioError("sensor.n_lenses", "scanning mode needs exactly one lens")
        data["sensor"] = s.finish()

        s = _Section("noise", raw.get("noise", {}))
        s.boolean("noiseless", False)
        s.number("exposure", 1e6, positive=True)
        s.number("seed", 0, integer=True, nonneg=True)
        data["noise"] = s.finish()

        s = _Section("reconstruction", raw.get("reconstruction", {}))
        s.number("max_iterations", 500, integer=True, nonneg=True)
        s.number("convergence_tol", 1e-8, positive=True)
        s.number("dilution", 1.0, positive=True, hi=1.0)
        cut = s.number("g_pinv_cutoff", 1e-10, positive=True)
        if cut >= 1:
            raise ScenarioError("reconstruction.g_pinv_cutoff", "must be < 1")
        if isinstance(s.raw.get("trace_target"), str):
            s.choice("trace_target", ("from-data",))
        else:
            s.number("trace_target", None, positive=True)
            if s.out["trace_target"] is None:
                s.out["trace_target"] = "from-data"
        s.boolean("accelerate", True)
        data["reconstruction"] = s.finish()

        s = _Section("analysis", raw.get("analysis", {}))
        dist = data["optics"]["distance"]
        s.numbers("refocus_distances", [0.0, -dist] if dist else [0.0])
        s.number("peak_threshold", 0.2, lo=0.0, hi=1.0)
        s.number("direct_threshold", 0.05, lo=0.0, hi=1.0)
        s.number("husimi_width", dx, positive=True)
        s.numbers("husimi_centers", None)
        s.numbers("husimi_tilts", None)
        data["analysis"] = s.finish()

        s = _Section("outputs", raw.get("outputs", {}))
        s.strings("artifacts", ARTIFACTS, list(DEFAULT_ARTIFACTS))
        data["outputs"] = s.finish()

        scen = cls(data, base_dir)
        # build once so that constructor-level checks also run up front
        scen.grid, scen.source_q, scen.geometry, scen.config
        return scen

    @staticmethod
    def _parse_source(s: _Section, base_dir: Path, data: dict, span: float) -> dict:
        kind = s.choice("kind", SOURCE_KINDS, "two_point")
        if kind == "two_point":
            if s.raw.get("separation") == "rayleigh":
                s.out["separation"] = "rayleigh"
                if data["optics"]["pupil_cutoff"] is None:
                    raise ScenarioError("source.separation",
                                        "'rayleigh' needs optics.pupil_cutoff")
            else:
                s.number("separation", required=True, positive=True)
            s.boolean("coherent", False)
            s.number("width", 0.0, nonneg=True)
            s.number("center", data["grid"]["center"])
            s.number("relative_phase", 0.0)
        elif kind == "plane_waves":
            tilts = s.numbers("tilts", required=True)
            weights = s.numbers("weights", [1.0] * len(tilts))
            if len(weights) != len(tilts) or not tilts:
                raise ScenarioError("source.weights", "needs one weight per tilt")
            if any(w < 0 for w in weights):
                raise ScenarioError("source.weights", "weights must be non-negative")
            s.boolean("coherent", False)
            s.number("envelope_width", None, positive=True)
        elif kind == "wavefront":
            prof = s.choice("profile", ("zero", "linear", "quadratic"), "linear")
            s.number("slope", 0.0)
            if prof == "quadratic":
                s.number("radius", required=True)
                if s.out["radius"] == 0:
                    raise ScenarioError("source.radius", "must be non-zero")
            else:
                s.number("radius", None)
            s.number("envelope_width", None, positive=True)
        else:
            name = s.text("file", required=True)
            path = Path(name) if Path(name).is_absolute() else base_dir / name
            if not path.exists():
                raise ScenarioError("source.file", f"file not found: {path}")
            s.out["file"] = str(path.resolve())
        return s.finish()

    # -- derived objects --------------------------------------------------

    @cached_property
    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(g["n_points"], g["pitch"], g["center"])

    @property
    def wavenumber(self) -> float:
        return self.data["optics"]["wavenumber"]

    @property
    def wavelength(self) -> float:
        return self.data["optics"]["wavelength"]

    @property
    def distance(self) -> float:
        return self.data["optics"]["distance"]

    @property
    def length_unit(self) -> str:
        return "um" if self.data["grid"]["units"] == "micrometre" else "1"

    @property
    def scanning(self) -> bool:
        return self.data["sensor"]["scan_offsets"] is not None

    @cached_property
    def propagator(self) -> Propagator:
        """Object plane -> aperture plane."""
        return fresnel_propagator(self.grid, self.wavelength, self.distance)

    @cached_property
    def separation(self) -> float:
        src = self.data["source"]
        if src["separation"] == "rayleigh":
            o = self.data["optics"]
            return analysis.rayleigh_separation(self.grid, o["pupil_cutoff"], o["pupil_taper"])
        return src["separation"]

    def source_positions(self) -> list[float] | None:
        src = self.data["source"]
        if src["kind"] != "two_point":
            return None
        g = self.grid
        i0 = g.index_of(src["center"] - self.separation / 2)
        x0 = g.coordinates[i0]
        return [float(x0), float(x0 + self.separation)]

    @cached_property
    def source_q(self) -> CoherenceMatrix:
        src = self.data["source"]
        g = self.grid
        k = self.wavenumber
        kind = src["kind"]
        try:
            if kind == "two_point":
                fields = []
                for x0 in self.source_positions():
                    if src["width"] > 0:
                        fields.append(gaussian_field(g, x0, src["width"]))
                    else:
                        fields.append(point_field(g, x0))
                if src["coherent"]:
                    amp = fields[0].amplitudes + np.exp(1j * src["relative_phase"]) * fields[1].amplitudes
                    return coherence_from_modes([(1.0, ComplexField(g, amp))])
                return coherence_from_modes([(1.0, f) for f in fields])
            env = 1.0
            if src.get("envelope_width"):
                env = np.exp(-((g.coordinates - g.center) ** 2) / (4 * src["envelope_width"] ** 2))
            if kind == "plane_waves":
                waves = [env * np.exp(1j * k * t * g.coordinates) for t in src["tilts"]]
                if src["coherent"]:
                    amp = sum(np.sqrt(w) * a for w, a in zip(src["weights"], waves))
                    return coherence_from_modes([(1.0, ComplexField(g, amp))])
                return coherence_from_modes(
                    [(w, ComplexField(g, a)) for w, a in zip(src["weights"], waves)])
            if kind == "wavefront":
                a, prof = src["slope"], src["profile"]
                if prof == "zero":
                    def phi(x): return np.zeros_like(x)
                elif prof == "linear":
                    def phi(x): return a * x
                else:
                    def phi(x): return a * x + x**2 / (2 * src["radius"])
                q = wavefront_state(g, k, phi)
                if np.ndim(env):
                    q = CoherenceMatrix(g, np.outer(env, env) * q.entries)
                return q
            return load_modes(src["file"], g)
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError("source", str(exc)) from exc

    @cached_property
    def geometry(self) -> SensorGeometry:
        s = self.data["sensor"]
        try:
            if self.scanning:
                return SensorGeometry([self.grid.center], s["aperture_width"], s["focal_length"],
                                      self.wavenumber, self._pixels())
            return default_geometry(
                self.grid, self.wavenumber, n_lenses=s["n_lenses"], n_pixels=s["n_pixels"],
                lens_pitch=s["lens_pitch"], aperture_width=s["aperture_width"],
                focal_length=s["focal_length"], pixel_half_span=s["pixel_half_span"])
        except ValueError as exc:
            raise ScenarioError("sensor", str(exc)) from exc

    def _pixels(self) -> np.ndarray:
        s = self.data["sensor"]
        if s["n_pixels"] == 1:
            return np.zeros(1)
        return np.linspace(-s["pixel_half_span"], s["pixel_half_span"], s["n_pixels"])

    @cached_property
    def config(self) -> ReconstructionConfig:
        r = self.data["reconstruction"]
        try:
            return ReconstructionConfig(**r)
        except ValueError as exc:
            raise ScenarioError("reconstruction", str(exc)) from exc

    def with_seed(self, seed: int) -> Scenario:
        if seed < 0:
            raise ScenarioError("--seed", "must be non-negative")
        data = json.loads(json.dumps(self.data))
        data["noise"]["seed"] = int(seed)
        return Scenario(data, self.base_dir)


def load_modes(path: str | Path, grid: Grid) -> CoherenceMatrix:
    """Mode file: columns ``mode,weight,index,real,imag``, one row per sample."""
    header, data = read_table(Path(path))
    if header[:5] != ["mode", "weight", "index", "real", "imag"]:
        raise ScenarioError("source.file", "expected header mode,weight,index,real,imag")
    modes = []
    for m in np.unique(data[:, 0]):
        rows = data[data[:, 0] == m]
        if np.ptp(rows[:, 1]) != 0:
            raise ScenarioError("source.file", f"mode {int(m)} has inconsistent weights")
        amp = np.zeros(grid.n_points, dtype=complex)
        idx = rows[:, 2].astype(int)
        if np.any(idx < 0) or np.any(idx >= grid.n_points):
            raise ScenarioError("source.file", f"mode {int(m)} has indices outside the grid")
        amp[idx] = rows[:, 3] + 1j * rows[:, 4]
        modes.append((float(rows[0, 1]), ComplexField(grid, amp)))
    return coherence_from_modes(modes)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError("--scenario", f"file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(str(path), f"invalid JSON: {exc}") from exc
        if isinstance(raw, dict) and "scenario" in raw:
            raw = raw["scenario"]
    else:
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(str(path), f"invalid TOML: {exc}") from exc
    return Scenario.from_dict(raw, path.parent)

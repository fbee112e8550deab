"""Batch front end: ``hstomo {simulate,reconstruct,analyze,pipeline,validate}``.

Every runner computes all of its outputs in memory first and only then
writes them (each file atomically), so a failing run leaves no partial
results. Reconstruction works in the aperture frame, where the sensor
sits; the object plane is reached by refocusing over ``-distance``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, analysis
from .field import EVOLVE, CoherenceMatrix, clamp_psd, shift_operator, transform_coherence
from .scenario import Scenario, ScenarioError, load_scenario
from .sensor import (
    QUADRATURE_MAX_POINTS,
    MeasurementData,
    ProjectionSet,
    SignalTable,
    build_projections,
    forward_signal,
    forward_signal_quadrature,
    noiseless_counts,
    sample_counts,
    scanning_signal,
)
from .tables import read_matrix, read_table, write_json, write_matrix, write_table
from .tomography import ModelSupportError, ReconstructionError, fidelity, reconstruct

log = logging.getLogger("hstomo")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
EDGE_FRACTION = 0.01

SIGNALS = "signals.csv"
COUNTS = "counts.csv"
TRUE_Q = "true_q.csv"
Q_RECONSTRUCTED = "q_reconstructed.csv"
HISTORY = "history.csv"
SUMMARY = "summary.csv"
MANIFEST = "manifest.json"


class InputError(ValueError):
    """Malformed input file; reported with exit code 1."""


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.invalid = isinstance(exc, (ScenarioError, InputError))


@dataclass
class Outputs:
    """Files to write, keyed by name, plus summary rows ``(quantity, value, unit)``."""

    files: dict[str, Callable[[Path], object]] = field(default_factory=dict)
    summary: list[tuple[str, object, str]] = field(default_factory=list)
    # in-memory results handed between pipeline stages
    results: dict = field(default_factory=dict)

    def table(self, name, header, rows):
        rows = [list(r) for r in rows]
        self.files[name] = lambda p: write_table(p, header, rows)

    def matrix(self, name, m):
        m = np.array(m)
        self.files[name] = lambda p: write_matrix(p, m)

    def add(self, quantity, value, unit="1"):
        self.summary.append((quantity, value, unit))

    def extend(self, other: Outputs):
        self.files.update(other.files)
        self.summary.extend(other.summary)
        self.results.update(other.results)


# -- shared model -----------------------------------------------------------

def projections(scen: Scenario) -> ProjectionSet:
    """Measurement kets in the aperture frame, shaped like the count table."""
    base = build_projections(scen.geometry, scen.grid, None)
    if not scen.scanning:
        return base
    kets = base.vectors[0]
    rows = [kets @ shift_operator(scen.grid, off).matrix.T
            for off in scen.data["sensor"]["scan_offsets"]]
    return ProjectionSet(scen.grid, np.stack(rows))


def aperture_truth(scen: Scenario) -> CoherenceMatrix:
    return transform_coherence(scen.source_q, scen.propagator, EVOLVE)


def lens_positions(scen: Scenario) -> np.ndarray:
    if scen.scanning:
        return scen.grid.center + np.asarray(scen.data["sensor"]["scan_offsets"])
    return scen.geometry.lens_centers


def _u(scen: Scenario, unit: str) -> str:
    return f"[{scen.length_unit if unit == 'L' else unit}]"


def _edge_check(q: CoherenceMatrix, plane: str):
    v = np.diag(q.entries).real
    k = max(1, v.size // 32)
    edge = max(v[:k].max(), v[-k:].max())
    if edge > EDGE_FRACTION * v.max():
        log.warning("%s-plane intensity at the grid edge is %.2g of the peak; the periodic "
                    "boundary may distort results", plane, edge / v.max())


# -- runners ----------------------------------------------------------------

def run_simulate(scen: Scenario, force_oracle: bool = False) -> Outputs:
    out = Outputs()
    g, geom = scen.grid, scen.geometry
    q = scen.source_q
    q_ap = aperture_truth(scen)
    _edge_check(q, "object")
    _edge_check(q_ap, "aperture")
    if scen.scanning:
        base = [build_projections(geom, g, None).vector(0, p) for p in range(geom.n_pixels)]
        signals = scanning_signal(q_ap, scen.data["sensor"]["scan_offsets"], base)
    else:
        signals = forward_signal(q_ap, projections(scen))
    noise = scen.data["noise"]
    if noise["noiseless"]:
        data = noiseless_counts(signals, noise["exposure"])
    else:
        data = sample_counts(signals, noise["exposure"], noise["seed"])

    centers = lens_positions(scen)
    dirs = geom.directions
    idx = [(j, p) for j in range(signals.shape[0]) for p in range(signals.shape[1])]
    head = ["lens", "pixel", f"lens_center {_u(scen, 'L')}", "direction [rad]"]
    out.table(SIGNALS, head + ["signal [1]"],
              ([j, p, centers[j], dirs[p], signals.values[j, p]] for j, p in idx))
    out.table(COUNTS, head + ["count [photons]"],
              ([j, p, centers[j], dirs[p], data.counts[j, p]] for j, p in idx))

    artifacts = scen.data["outputs"]["artifacts"]
    if "true_q" in artifacts:
        out.matrix(TRUE_Q, q.entries)
    if "oracle_check" in artifacts:
        out.extend(_oracle_check(scen, signals.values, force_oracle))

    out.results["data"] = data
    out.add("signal_total", signals.total)
    out.add("count_total", data.total, "photons")
    out.add("true_purity", analysis.global_purity(q))
    direct = _direct_image(scen, q_ap)
    thr = scen.data["analysis"]["direct_threshold"]
    out.add("direct_image_maxima", len(direct.local_maxima(thr)))
    if scen.data["source"]["kind"] == "two_point":
        out.add("source_separation", scen.separation, scen.length_unit)
    return out


def _direct_image(scen: Scenario, q_ap: CoherenceMatrix) -> analysis.IntensityScan:
    """Intensity at the aperture plane, through the pupil when one is set."""
    o = scen.data["optics"]
    if o["pupil_cutoff"] is None:
        return analysis.position_intensity(q_ap)
    return analysis.pupil_image(q_ap, o["pupil_cutoff"], o["pupil_taper"])


def _oracle_check(scen: Scenario, signals: np.ndarray, force: bool) -> Outputs:
    if scen.scanning:
        raise ScenarioError("outputs.artifacts", "oracle_check is not available in scanning mode")
    n = scen.grid.n_points
    if n > QUADRATURE_MAX_POINTS and not force:
        raise ScenarioError(
            "outputs.artifacts",
            f"oracle_check limited to {QUADRATURE_MAX_POINTS} grid points (got {n}); "
            "pass --force-oracle to override")
    geom = scen.geometry
    ref = np.array([[forward_signal_quadrature(scen.source_q, scen.propagator, geom, j, p,
                                               allow_large=True)
                     for p in range(geom.n_pixels)] for j in range(geom.n_lenses)])
    rel = np.max(np.abs(ref - signals)) / np.max(np.abs(ref))
    out = Outputs()
    out.table("oracle_check.csv", ["lens", "pixel", "signal [1]", "quadrature [1]"],
              ([j, p, signals[j, p], ref[j, p]]
               for j in range(geom.n_lenses) for p in range(geom.n_pixels)))
    out.add("oracle_max_relative_deviation", rel)
    return out


def load_counts(scen: Scenario, path: Path) -> MeasurementData:
    try:
        header, rows = read_table(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    col = next((i for i, h in enumerate(header) if h.startswith("count")), None)
    if header[:2] != ["lens", "pixel"] or col is None:
        raise InputError(f"{path}: expected columns lens, pixel, ..., count")
    shape = (len(lens_positions(scen)), scen.geometry.n_pixels)
    j, p = rows[:, 0].astype(int), rows[:, 1].astype(int)
    if (rows.shape[0] != shape[0] * shape[1] or j.min() < 0 or p.min() < 0
            or j.max() >= shape[0] or p.max() >= shape[1]):
        raise InputError(f"{path}: count table does not match the {shape[0]}x{shape[1]} sensor")
    counts = np.full(shape, np.nan)
    counts[j, p] = rows[:, col]
    if np.isnan(counts).any():
        raise InputError(f"{path}: missing bins in count table")
    noise = scen.data["noise"]
    try:
        return MeasurementData(counts, noise["exposure"],
                               None if noise["noiseless"] else noise["seed"])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def run_reconstruct(scen: Scenario, data: MeasurementData) -> tuple[Outputs, CoherenceMatrix]:
    out = Outputs()
    state = reconstruct(data, projections(scen), scen.config)
    out.matrix(Q_RECONSTRUCTED, state.q.entries)
    out.table(HISTORY, ["iteration", "log_likelihood [1]", "residual [1]"],
              zip(range(len(state.log_likelihood_history)), state.log_likelihood_history,
                  state.residual_history))
    out.add("converged", int(state.converged))
    out.add("iterations", state.iteration)
    out.add("final_residual", state.residual)
    out.add("final_log_likelihood", state.log_likelihood)
    out.add("fidelity", fidelity(state.q, aperture_truth(scen)))
    return out, state.q


def load_q(scen: Scenario, path: Path, clamp: bool = False) -> CoherenceMatrix:
    try:
        m = read_matrix(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    n = scen.grid.n_points
    if m.shape != (n, n):
        raise InputError(f"{path}: matrix is {m.shape[0]}x{m.shape[1]}, grid has {n} points")
    if clamp:
        return clamp_psd(scen.grid, 0.5 * (m + m.conj().T))
    try:
        return CoherenceMatrix(scen.grid, m)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}; rerun with --clamp-psd to clip negative "
                         "eigenvalues") from exc


def _ztag(d: float) -> str:
    return f"z{d + 0.0:g}"


def run_analyze(scen: Scenario, q: CoherenceMatrix,
                data: MeasurementData | None = None) -> Outputs:
    """Postprocess an aperture-frame coherence matrix."""
    out = Outputs()
    a = scen.data["analysis"]
    artifacts = scen.data["outputs"]["artifacts"]
    g = scen.grid
    lu = _u(scen, "L")
    truth = scen.source_positions()
    for d in a["refocus_distances"]:
        qz = analysis.refocus(q, scen.wavelength, d)
        tag = _ztag(d)
        if "position_intensity" in artifacts:
            scan = analysis.position_intensity(qz)
            out.table(f"position_intensity_{tag}.csv",
                      [f"x {lu}", f"intensity [1/{scen.length_unit}]"],
                      zip(scan.coordinates, scan.values))
            peaks = scan.peak_coordinates(a["peak_threshold"])
            out.add(f"peak_count_{tag}", len(peaks))
            for i, x in enumerate(peaks):
                out.add(f"peak_{i}_{tag}", x, scen.length_unit)
            if truth is not None and d == -scen.distance and len(peaks):
                err = max(np.min(np.abs(peaks - t)) for t in truth)
                out.add(f"peak_error_max_{tag}", err, scen.length_unit)
        if "coherence_degree" in artifacts:
            mu = analysis.coherence_degree_map(qz)
            x = g.coordinates
            out.table(f"coherence_degree_{tag}.csv",
                      ["row", "col", f"x_row {lu}", f"x_col {lu}", "real [1]", "imag [1]"],
                      ([r, c, x[r], x[c], mu[r, c].real, mu[r, c].imag]
                       for r in range(g.n_points) for c in range(g.n_points)))
    if "angular_intensity" in artifacts:
        scan = analysis.angular_intensity(q)
        out.table("angular_intensity.csv",
                  [f"kappa [1/{scen.length_unit}]", f"intensity [{scen.length_unit}]"],
                  zip(scan.coordinates, scan.values))
    if "purity" in artifacts:
        out.add("purity", analysis.global_purity(q))
    if "husimi" in artifacts:
        centers = a["husimi_centers"]
        if centers is None:
            centers = g.coordinates[:: max(1, g.n_points // 32)]
        tilts = a["husimi_tilts"]
        if tilts is None:
            tilts = scen.geometry.directions
        h = analysis.husimi_scan(q, centers, tilts, a["husimi_width"], scen.wavenumber)
        out.table("husimi.csv", [f"center {lu}", "tilt [rad]", "value [1]"],
                  ([c, t, h[i, k]] for i, c in enumerate(centers)
                   for k, t in enumerate(tilts)))
    if "wavefront" in artifacts:
        if data is None:
            table = forward_signal(q, projections(scen)).values
        else:
            table = data.counts
        # dark lenses carry no slope information and are left out
        lit = table.sum(axis=1) > 0
        if not lit.any():
            raise InputError("every lens row is dark; no slope baseline possible")
        geom = replace(scen.geometry, lens_centers=lens_positions(scen)[lit])
        est = analysis.hs_slope_estimate(SignalTable(table[lit]), geom)
        if est.lens_centers.size >= 2:
            est = analysis.integrate_wavefront(est)
            phases = est.phases
        else:
            phases = np.full(1, np.nan)
        out.add("dark_lenses", int(np.sum(~lit)))
        out.table("wavefront.csv", ["lens", f"lens_center {lu}", "slope [rad]", f"phase {lu}"],
                  ([j, c, s, ph] for j, c, s, ph in
                   zip(np.flatnonzero(lit), est.lens_centers, est.slopes, phases)))
    return out


def run_pipeline(scen: Scenario, force_oracle: bool = False) -> Outputs:
    out = Outputs()
    stage = "simulate"
    try:
        sim = run_simulate(scen, force_oracle)
        out.extend(sim)
        stage = "reconstruct"
        data = sim.results["data"]
        rec, q = run_reconstruct(scen, data)
        out.extend(rec)
        stage = "analyze"
        out.extend(run_analyze(scen, q, data))
    except (ScenarioError, InputError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise StageError(stage, exc) from exc
    return out


# -- command line -----------------------------------------------------------

def manifest(scen: Scenario, command: str, files: list[str], extra=None) -> dict:
    doc = {
        "command": command,
        "version": __version__,
        "seed": scen.data["noise"]["seed"],
        "scenario": scen.data,
        "files": sorted(files),
    }
    if extra:
        doc.update(extra)
    return doc


def write_outputs(out: Outputs, out_dir: Path, scen: Scenario, command: str, extra=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(out.files)
    if out.summary:
        names.append(SUMMARY)
    for name, writer in out.files.items():
        writer(out_dir / name)
    if out.summary:
        write_table(out_dir / SUMMARY, ["quantity", "value", "unit"], out.summary)
    write_json(out_dir / MANIFEST, manifest(scen, command, names, extra))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hstomo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, type=Path,
                       help="scenario TOML file or a run manifest (JSON)")
        if out:
            p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="override the noise seed")
        p.add_argument("--threads", type=int, help="limit BLAS/LAPACK threads")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    for name in ("simulate", "pipeline"):
        p = common(sub.add_parser(name))
        p.add_argument("--force-oracle", action="store_true",
                       help="allow the quadrature cross-check on large grids")
    p = common(sub.add_parser("reconstruct"))
    p.add_argument("--counts", required=True, type=Path)
    p = common(sub.add_parser("analyze"))
    p.add_argument("--q", required=True, type=Path, help="aperture-frame coherence matrix")
    p.add_argument("--counts", type=Path, help="measured counts for the slope baseline")
    p.add_argument("--clamp-psd", action="store_true",
                   help="clip negative eigenvalues of the input matrix instead of failing")
    common(sub.add_parser("validate"), out=False)
    return parser


def _dispatch(args) -> None:
    scen = load_scenario(args.scenario)
    if args.seed is not None:
        scen = scen.with_seed(args.seed)
    if args.command == "validate":
        print(f"{args.scenario}: ok ({scen.grid.n_points} points, "
              f"{scen.data['source']['kind']} source)")
        return
    extra = None
    if args.command == "simulate":
        try:
            out = run_simulate(scen, args.force_oracle)
        except (ScenarioError, InputError):
            raise
        except Exception as exc:
            raise StageError("simulate", exc) from exc
    elif args.command == "reconstruct":
        data = load_counts(scen, args.counts)
        try:
            out, _ = run_reconstruct(scen, data)
        except Exception as exc:
            raise StageError("reconstruct", exc) from exc
        extra = {"counts": str(args.counts)}
    elif args.command == "analyze":
        q = load_q(scen, args.q, args.clamp_psd)
        data = load_counts(scen, args.counts) if args.counts else None
        try:
            out = run_analyze(scen, q, data)
        except Exception as exc:
            raise StageError("analyze", exc) from exc
        extra = {"q": str(args.q)}
    else:
        out = run_pipeline(scen, args.force_oracle)
    write_outputs(out, args.out, scen, args.command, extra)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=args.threads):
            _dispatch(args)
    except (ScenarioError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if exc.invalid else EXIT_RUNTIME
    except (ModelSupportError, ReconstructionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

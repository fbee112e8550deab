"""Hartmann-Shack tomography of partially coherent one-dimensional fields.

Simulates lenslet-array measurements of a coherence matrix, reconstructs
the matrix by positivity-constrained maximum likelihood and postprocesses
the result (refocusing, intensity scans, coherence measures).
"""

__version__ = "0.1.0"

from .analysis import (
    IntensityScan,
    WavefrontEstimate,
    angular_intensity,
    coherence_degree,
    coherence_degree_map,
    global_purity,
    hs_slope_estimate,
    husimi_scan,
    integrate_wavefront,
    local_maxima,
    position_intensity,
    pupil_image,
    rayleigh_separation,
    refocus,
)
from .field import (
    EVOLVE,
    MEASUREMENT_FRAME,
    CoherenceMatrix,
    ComplexField,
    Grid,
    GridMismatchError,
    Propagator,
    clamp_psd,
    coherence_from_modes,
    fresnel_propagator,
    gaussian_field,
    identity_propagator,
    make_grid,
    plane_wave,
    point_field,
    random_coherence,
    shift_operator,
    transform_coherence,
    wavefront_state,
)
from .sensor import (
    MeasurementData,
    ProjectionSet,
    SensorGeometry,
    SignalTable,
    build_projections,
    default_geometry,
    forward_signal,
    forward_signal_quadrature,
    geometric_row,
    geometric_signal,
    noiseless_counts,
    projection_vector,
    sample_counts,
    scanning_signal,
)
from .tomography import (
    ModelSupportError,
    ReconstructionConfig,
    ReconstructionError,
    ReconstructionState,
    compute_G,
    compute_R,
    fidelity,
    log_likelihood,
    ml_step,
    reconstruct,
)

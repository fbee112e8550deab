"""Maximum-likelihood reconstruction of the coherence matrix.

The likelihood is multinomial, ``L(Q) = sum s log(S(Q) / sum S(Q))``, and
its extremal equation is ``R Q = G Q`` with

    R = sum_i (s_i / S_i) Pi_i,      G = (sum s / sum S) sum_i Pi_i,

where ``Pi_i = pitch^2 v_i v_i^dagger`` is the measurement operator of bin
``i``. The iteration is the symmetrized multiplicative update
``Q <- G^+ R Q R G^+``, optionally diluted towards the identity, with
positivity enforced after every step.

Multiplicative updates shrink an eigenvalue ``e`` of ``Q`` by ``O(e^2)``
per step, so eigenvalues that vanish at the optimum decay only like
``1/t``. With ``accelerate`` on, every iteration also tries a
preconditioned projected-gradient move (eigenvalues clamped at zero) and
keeps it only if its likelihood beats the plain update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .field import CoherenceMatrix, Grid, clamp_psd
from .sensor import MeasurementData, ProjectionSet, SignalTable, forward_signal

log = logging.getLogger(__name__)

SUPPORT_FLOOR = 1e-14
MIN_DILUTION = 1e-3
LIKELIHOOD_SLACK = 1e-9
ROUNDOFF_EIG = 1e-13


class ModelSupportError(ValueError):
    """Counts were recorded in a bin the model predicts to be dark."""


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReconstructionConfig:
    max_iterations: int = 500
    convergence_tol: float = 1e-8
    dilution: float = 1.0
    g_pinv_cutoff: float = 1e-10
    trace_target: float | str = "from-data"
    accelerate: bool = True

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 0:
            raise ValueError("max_iterations must be a non-negative integer")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if not 0 < self.dilution <= 1:
            raise ValueError("dilution must lie in (0, 1]")
        if not 0 < self.g_pinv_cutoff < 1:
            raise ValueError("g_pinv_cutoff must lie in (0, 1)")
        if isinstance(self.trace_target, str):
            if self.trace_target != "from-data":
                raise ValueError("trace_target must be a positive number or 'from-data'")
        elif not self.trace_target > 0:
            raise ValueError("trace_target must be > 0")


@dataclass(frozen=True)
class ReconstructionState:
    q: CoherenceMatrix
    iteration: int = 0
    log_likelihood_history: tuple[float, ...] = ()
    residual: float = np.inf
    converged: bool = False
    residual_history: tuple[float, ...] = ()
    dilution: float = 1.0
    # R and G evaluated at ``q``, reused by the next step
    _operators: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False,
                                                              compare=False)

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_history[-1] if self.log_likelihood_history else -np.inf


def measurement_operators(projections: ProjectionSet) -> np.ndarray:
    """Stack of ``Pi_i`` with shape ``(J*P, n, n)``."""
    v = projections.flat
    return projections.grid.pitch**2 * np.einsum("ia,ib->iab", v, v.conj())


def _check_shapes(projections: ProjectionSet, data: MeasurementData):
    if projections.shape != data.shape:
        raise ValueError(f"data shape {data.shape} does not match projections {projections.shape}")


def _ratios(data: MeasurementData, signals: SignalTable) -> np.ndarray:
    s = data.counts.ravel()
    pred = signals.values.ravel()
    floor = SUPPORT_FLOOR * signals.total
    bad = (s > 0) & (pred <= floor)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        j, p = np.unravel_index(i, data.shape)
        raise ModelSupportError(
            f"bin (j={j}, p={p}) has {s[i]:g} counts but predicted signal {pred[i]:.3e}"
        )
    out = np.zeros_like(s)
    np.divide(s, pred, out=out, where=s > 0)
    return out


def _weighted_sum(projections: ProjectionSet, weights: np.ndarray) -> np.ndarray:
    v = projections.flat
    out = projections.grid.pitch**2 * (v.T * weights) @ v.conj()
    return 0.5 * (out + out.conj().T)


def compute_R(projections: ProjectionSet, data: MeasurementData,
              signals: SignalTable) -> np.ndarray:
    _check_shapes(projections, data)
    return _weighted_sum(projections, _ratios(data, signals))


def compute_G(projections: ProjectionSet, data: MeasurementData,
              signals: SignalTable) -> np.ndarray:
    _check_shapes(projections, data)
    if projections.flat.shape[0] == 0:
        raise ValueError("empty projection set")
    if signals.total <= 0:
        raise ValueError("predicted signals sum to zero")
    prefactor = data.total / signals.total
    return _weighted_sum(projections, np.full(projections.flat.shape[0], prefactor))


def log_likelihood(data: MeasurementData, signals: SignalTable) -> float:
    """Multinomial log-likelihood ``sum s log(S / sum S)``; empty bins add 0."""
    s = data.counts.ravel()
    _ratios(data, signals)
    pred = signals.values.ravel() / signals.total
    mask = s > 0
    return float(np.sum(s[mask] * np.log(pred[mask])))


def span_projector(projections: ProjectionSet, cutoff: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the span of the measurement kets."""
    h = _weighted_sum(projections, np.ones(projections.flat.shape[0]))
    w, v = np.linalg.eigh(h)
    keep = w > cutoff * w[-1]
    return v[:, keep] @ v[:, keep].conj().T


def _pinv_hermitian(g: np.ndarray, cutoff: float) -> np.ndarray:
    w, v = np.linalg.eigh(g)
    if w[-1] <= 0:
        raise ReconstructionError("G has no positive eigenvalues")
    inv = np.zeros_like(w)
    keep = w > cutoff * w[-1]
    inv[keep] = 1.0 / w[keep]
    return (v * inv) @ v.conj().T


def _residual(r: np.ndarray, g: np.ndarray, q: np.ndarray) -> float:
    gq = g @ q
    denom = np.linalg.norm(gq)
    if denom == 0:
        return np.inf
    return float(np.linalg.norm(r @ q - gq) / denom)


def _normalize(q: CoherenceMatrix, projections: ProjectionSet, data: MeasurementData,
               config: ReconstructionConfig) -> CoherenceMatrix:
    if config.trace_target == "from-data":
        predicted = forward_signal(q, projections).total
        if predicted <= 0:
            raise ReconstructionError("update has no overlap with the measured span")
        return q.scaled(data.total / predicted)
    tr = q.trace
    if tr <= 0:
        raise ReconstructionError("update has zero trace")
    return q.scaled(config.trace_target / tr)


def _evaluate(q: CoherenceMatrix, projections: ProjectionSet, data: MeasurementData):
    signals = forward_signal(q, projections)
    r = compute_R(projections, data, signals)
    g = compute_G(projections, data, signals)
    return log_likelihood(data, signals), r, g


def initial_state(data: MeasurementData, projections: ProjectionSet,
                  config: ReconstructionConfig) -> ReconstructionState:
    """Maximally mixed state on the span of the measurement kets."""
    _check_shapes(projections, data)
    if data.total <= 0:
        raise ReconstructionError("no counts recorded")
    p = span_projector(projections, config.g_pinv_cutoff)
    q0 = clamp_psd(projections.grid, p)
    q0 = _normalize(q0, projections, data, config)
    ll, r, g = _evaluate(q0, projections, data)
    return ReconstructionState(
        q=q0,
        log_likelihood_history=(ll,),
        residual=_residual(r, g, q0.entries),
        residual_history=(_residual(r, g, q0.entries),),
        dilution=config.dilution,
        _operators=(r, g),
    )


def ml_step(state: ReconstructionState, projections: ProjectionSet, data: MeasurementData,
            config: ReconstructionConfig) -> ReconstructionState:
    """One multiplicative update of the extremal equation ``R Q = G Q``.

    Uses ``config.dilution``; the safeguard in :func:`reconstruct` may
    call this with a reduced dilution.
    """
    grid: Grid = projections.grid
    if state._operators is None:
        _, r, g = _evaluate(state.q, projections, data)
    else:
        r, g = state._operators
    q = state.q.entries
    step = _pinv_hermitian(g, config.g_pinv_cutoff) @ r
    d = config.dilution
    if d < 1:
        m = (1 - d) * np.eye(grid.n_points) + d * step
    else:
        m = step
    new = m @ q @ m.conj().T
    q_new = clamp_psd(grid, new)
    q_new = _normalize(q_new, projections, data, config)
    ll, r_new, g_new = _evaluate(q_new, projections, data)
    res = _residual(r_new, g_new, q_new.entries)
    return ReconstructionState(
        q=q_new,
        iteration=state.iteration + 1,
        log_likelihood_history=state.log_likelihood_history + (ll,),
        residual=res,
        converged=res <= config.convergence_tol,
        residual_history=state.residual_history + (res,),
        dilution=d,
        _operators=(r_new, g_new),
    )


def _inv_sqrt_hermitian(g: np.ndarray, cutoff: float) -> np.ndarray:
    w, v = np.linalg.eigh(g)
    inv = np.zeros_like(w)
    keep = w > cutoff * w[-1]
    inv[keep] = 1.0 / np.sqrt(w[keep])
    return (v * inv) @ v.conj().T


def _gradient_candidate(prev: ReconstructionState, plain: ReconstructionState,
                        projections: ProjectionSet, data: MeasurementData,
                        config: ReconstructionConfig, step: float):
    r, g = prev._operators
    gi = _inv_sqrt_hermitian(g, config.g_pinv_cutoff)
    q = prev.q.entries
    direction = gi @ (r - g) @ gi
    moved = plain.q.entries + step * (np.trace(q).real / q.shape[0]) * direction
    try:
        cand = _normalize(clamp_psd(projections.grid, moved), projections, data, config)
        ll, r_new, g_new = _evaluate(cand, projections, data)
    except (ModelSupportError, ReconstructionError):
        return None
    if not ll >= plain.log_likelihood:
        return None
    res = _residual(r_new, g_new, cand.entries)
    return replace(
        plain,
        q=cand,
        log_likelihood_history=prev.log_likelihood_history + (ll,),
        residual=res,
        converged=res <= config.convergence_tol,
        residual_history=prev.residual_history + (res,),
        _operators=(r_new, g_new),
    )


def reconstruct(data: MeasurementData, projections: ProjectionSet,
                config: ReconstructionConfig | None = None,
                callback=None) -> ReconstructionState:
    """Iterate :func:`ml_step` from the maximally mixed state.

    A step that lowers the log-likelihood is retried with half the
    dilution (down to ``1e-3``); the stored history is therefore
    non-decreasing. Non-convergence is reported through ``converged``.
    ``callback(state)`` is called after every accepted iteration.
    """
    config = config or ReconstructionConfig()
    state = initial_state(data, projections, config)
    dilution = config.dilution
    step = 1.0
    for it in range(config.max_iterations):
        cfg = replace(config, dilution=dilution)
        try:
            trial = ml_step(state, projections, data, cfg)
        except (ModelSupportError, ReconstructionError) as exc:
            raise type(exc)(f"iteration {it + 1}: {exc}") from exc
        while (trial.log_likelihood < state.log_likelihood - LIKELIHOOD_SLACK
               and dilution > MIN_DILUTION):
            dilution = max(dilution / 2, MIN_DILUTION)
            log.debug("likelihood decreased at iteration %d; dilution -> %g", it + 1, dilution)
            trial = ml_step(state, projections, data, replace(config, dilution=dilution))
        if trial.log_likelihood < state.log_likelihood - LIKELIHOOD_SLACK:
            log.warning("likelihood decreased at iteration %d even at minimum dilution; "
                        "stopping", it + 1)
            return state
        if config.accelerate:
            boosted = _gradient_candidate(state, trial, projections, data, cfg, step)
            if boosted is None:
                step /= 4
            else:
                trial = boosted
                step *= 2
        state = trial
        if callback is not None:
            callback(state)
        if state.converged:
            break
    return state


def fidelity(q1: CoherenceMatrix, q2: CoherenceMatrix) -> float:
    """Uhlmann fidelity of the trace-normalized matrices."""
    if q1.grid != q2.grid:
        raise ValueError("fidelity needs matrices on the same grid")
    t1, t2 = q1.trace, q2.trace
    if t1 <= 0 or t2 <= 0:
        raise ValueError("fidelity is undefined for zero-trace matrices")
    a = q1.entries / t1
    b = q2.entries / t2
    w, v = np.linalg.eigh(a)
    # eigenvalues at round-off level would contribute sqrt(eps) noise
    w[w < ROUNDOFF_EIG * w[-1]] = 0.0
    sqrt_a = (v * np.sqrt(w)) @ v.conj().T
    m = sqrt_a @ b @ sqrt_a
    ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    ev[ev < ROUNDOFF_EIG * max(ev[-1], 0.0)] = 0.0
    f = np.sum(np.sqrt(ev)) ** 2
    return float(min(max(f, 0.0), 1.0))

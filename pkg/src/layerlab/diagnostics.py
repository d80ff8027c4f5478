"""Measurements over trained networks and their trajectories.

This module quantifies the regularities the linear-network trainer is
expected to exhibit:

* the adjacent-layer balancedness matrix ``W[l+1].T @ W[l+1] - W[l] @ W[l].T``
  is conserved by the continuous flow, so its drift along a discrete run
  measures integration error (it should shrink linearly with the step size);
* the difference of squared layer norms is the trace of that matrix and is
  therefore conserved as well;
* with data-aligned initialization, each singular mode evolves by a scalar
  recurrence that ``integrate_mode_ode`` reproduces independently of the
  matrix path;
* the compounded layer strength ``(|W|_F + spread)^depth`` obeys a
  depth-dependent growth-rate bound whose margin constants can be estimated
  from a measured trajectory and whose equality version can be integrated
  forward to predict plateau-then-explosion profiles.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ShapeError
from .init import ModeAlignment
from .linalg import frobenius_norm
from .linear import FlowConfig, LinearNet
from .trajectory import TrajectoryRecord

__all__ = [
    "BoundCheck",
    "BoundParams",
    "BoundSeries",
    "ModeOdeResult",
    "NormGapResult",
    "balancedness_drift",
    "bound_check",
    "bound_trajectory",
    "combined_strength",
    "conservation_constant",
    "estimate_kappas",
    "integrate_mode_ode",
    "layer_norm_spread",
    "min_time_to_strength",
    "mode_strengths",
    "norm_gap",
]

_DIVERGENCE_LIMIT = 1e12

# Snapshots whose end-to-end norm sits below this are degenerate for the
# margin ratios and are dropped with a warning.
_PROD_FLOOR = 1e-9


def conservation_constant(net: LinearNet, pair: int) -> np.ndarray:
    """Balancedness matrix of adjacent layers ``pair`` and ``pair + 1``.

    Returns ``W[pair+1].T @ W[pair+1] - W[pair] @ W[pair].T`` evaluated at
    the current weights (0-based pair index, ``0 <= pair < depth - 1``).
    The continuous-time flow keeps this matrix constant, so its value is
    pinned by the initialization.
    """
    if not 0 <= pair < net.depth - 1:
        raise ShapeError(
            f"pair index {pair} out of range for depth {net.depth}"
        )
    lo, hi = net.weights[pair], net.weights[pair + 1]
    return hi.T @ hi - lo @ lo.T


def balancedness_drift(traj: TrajectoryRecord) -> np.ndarray:
    """Worst-case drift of each balancedness matrix along a trajectory.

    Returns, per adjacent pair, ``max_t |C(t) - C(0)|_F``.  Under exact
    gradient flow this is zero; under discrete steps it scales linearly
    with the step size at fixed physical time.
    """
    if traj.conservation is None or len(traj.conservation) < 2:
        raise ValueError("trajectory must record balancedness at >= 2 snapshots")
    base = traj.conservation[0]
    n_pairs = len(base)
    drift = np.zeros(n_pairs)
    for snapshot in traj.conservation[1:]:
        for p in range(n_pairs):
            drift[p] = max(drift[p], frobenius_norm(snapshot[p] - base[p]))
    return drift


@dataclass(frozen=True)
class NormGapResult:
    """Per-pair series derived from recorded layer norms.

    Attributes:
        gaps: (T, L-1) absolute differences of adjacent Frobenius norms.
        squared_diffs: (T, L-1) differences of squared norms; this equals
            minus the trace of the balancedness matrix and stays constant
            up to integration drift.
    """

    gaps: np.ndarray
    squared_diffs: np.ndarray


def norm_gap(traj: TrajectoryRecord) -> NormGapResult:
    """Adjacent-layer norm gaps and the conserved squared-norm differences."""
    norms = traj.layer_norms
    gaps = np.abs(norms[:, 1:] - norms[:, :-1])
    return NormGapResult(gaps=gaps, squared_diffs=traj.squared_norm_gaps())


def mode_strengths(
    net: LinearNet, alignment: ModeAlignment, tol: float = 1e-6
) -> np.ndarray:
    """Per-layer, per-mode strengths of an aligned network.

    Projects each weight matrix onto the recorded singular bases; see
    ``ModeAlignment.project`` for the residual check that guards against a
    net that has drifted off its alignment.
    """
    return alignment.project(net, tol=tol)


@dataclass(frozen=True)
class ModeOdeResult:
    """Euler trajectory of the decoupled per-mode recurrence."""

    steps: np.ndarray
    times: np.ndarray
    strengths: np.ndarray  # (T, L)


def integrate_mode_ode(s: float, sigma_init, cfg: FlowConfig) -> ModeOdeResult:
    """Integrate one mode's per-layer strengths under the decoupled dynamics.

    Each step updates all layers simultaneously from the same snapshot:

        sigma[l] += eta * (prod of the other layers) * (s - prod of all)

    which is exactly the scalar shadow of the matrix gradient step for an
    aligned network, so this serves as an independent oracle for measured
    mode trajectories.

    Raises:
        DivergenceError: a strength exceeds the blow-up guard.
    """
    sigma = np.array(sigma_init, dtype=np.float64).copy()
    if sigma.ndim != 1 or sigma.size == 0:
        raise ShapeError("sigma_init must be a non-empty 1-D sequence")
    if np.any(sigma <= 0):
        raise ValueError("sigma_init entries must be positive")
    depth = sigma.size

    steps_log, sigma_log = [], []
    for step in range(cfg.steps + 1):
        if not np.all(np.isfinite(sigma)) or np.any(np.abs(sigma) > _DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"mode recurrence diverged at step {step}: {sigma}", step
            )
        if step % cfg.record_every == 0 or step == cfg.steps:
            steps_log.append(step)
            sigma_log.append(sigma.copy())
        if step < cfg.steps:
            # prefix[l] * suffix[l] = product over all layers except l,
            # mirroring the matrix computation factor for factor.
            prefix = np.ones(depth)
            for l in range(1, depth):
                prefix[l] = prefix[l - 1] * sigma[l - 1]
            suffix = np.ones(depth)
            for l in range(depth - 2, -1, -1):
                suffix[l] = suffix[l + 1] * sigma[l + 1]
            full = prefix[-1] * sigma[-1]
            sigma = sigma + cfg.eta * suffix * (s - full) * prefix

    steps_arr = np.array(steps_log)
    return ModeOdeResult(
        steps=steps_arr, times=steps_arr * cfg.eta, strengths=np.array(sigma_log)
    )


def layer_norm_spread(norms) -> float:
    """Largest pairwise gap among a set of layer norms (max minus min)."""
    norms = np.asarray(norms, dtype=np.float64)
    return float(norms.max() - norms.min())


def combined_strength(norms, delta: float, depth: int, ref_layer: int = 0):
    """Compounded layer strength ``(|W[ref]|_F + delta) ** depth``."""
    norms = np.asarray(norms, dtype=np.float64)
    base = norms[..., ref_layer] + delta
    return base**depth


@dataclass(frozen=True)
class BoundParams:
    """Constants of the depth-compounded growth-rate bound.

    Attributes:
        depth: number of weight matrices (>= 2).
        kappa1: margin by which the covariance norm dominates the
            end-to-end norm along the run.
        kappa2: margin by which the end-to-end norm dominates the
            compounded strength, in [0, 1].
        sigma_yx_norm: Frobenius norm of the input-output covariance.
        delta: largest pairwise layer-norm gap at the start of the run.
        u0: compounded strength at the start.
        tau: reciprocal step size of the integration.
    """

    depth: int
    kappa1: float
    kappa2: float
    sigma_yx_norm: float
    delta: float
    u0: float
    tau: float

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.kappa1 <= 0:
            raise ValueError(f"kappa1 must be positive, got {self.kappa1}")
        if not 0.0 <= self.kappa2 <= 1.0:
            raise ValueError(f"kappa2 must lie in [0, 1], got {self.kappa2}")
        if self.sigma_yx_norm <= 0:
            raise ValueError("sigma_yx_norm must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.u0 <= 0:
            raise ValueError("u0 must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.kappa2 > 0 and self.u0 > self.m_cap / self.kappa2:
            raise ValueError(
                f"u0 = {self.u0} must not start above the fixed point "
                f"{self.m_cap / self.kappa2}"
            )

    @property
    def m_cap(self) -> float:
        """The rate constant ``(2 * kappa1 + 1) * sigma_yx_norm``."""
        return (2.0 * self.kappa1 + 1.0) * self.sigma_yx_norm

    def rate(self, u) -> np.ndarray:
        """Right-hand side of the growth bound at strength ``u``.

        ``depth * u**(2 - 2/depth) * (m_cap - kappa2 * u)``; the bound says
        ``tau * dU/dt`` never exceeds this along a measured run.
        """
        u = np.asarray(u, dtype=np.float64)
        exponent = 2.0 * (1.0 - 1.0 / self.depth)
        return self.depth * u**exponent * (self.m_cap - self.kappa2 * u)


@dataclass(frozen=True)
class BoundSeries:
    """Equality-version integration of the growth bound."""

    steps: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def time_to(self, target: float) -> float:
        """First recorded time at which the series reaches ``target``."""
        idx = np.argmax(self.values >= target)
        if self.values[idx] < target:
            raise ValueError(f"series never reaches {target}")
        return float(self.times[idx])

    def max_slope(self) -> float:
        return float(np.max(np.diff(self.values) / np.diff(self.times)))


def bound_trajectory(
    params: BoundParams, steps: int, record_every: int = 1
) -> BoundSeries:
    """Integrate the growth bound at equality with forward Euler.

    Starts from ``params.u0`` and applies ``u += rate(u) / tau`` per step,
    advancing recorded time by ``1 / tau``.  The fixed point
    ``m_cap / kappa2`` is stationary; below it the series is non-decreasing.

    Raises:
        DivergenceError: the series exceeds the blow-up guard.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    u = params.u0
    dt = 1.0 / params.tau
    steps_log, values = [], []
    for step in range(steps + 1):
        if not math.isfinite(u) or abs(u) > _DIVERGENCE_LIMIT:
            raise DivergenceError(f"bound series diverged at step {step}", step)
        if step % record_every == 0 or step == steps:
            steps_log.append(step)
            values.append(u)
        if step < steps:
            u = u + float(params.rate(u)) * dt
    steps_arr = np.array(steps_log)
    return BoundSeries(
        steps=steps_arr, times=steps_arr * dt, values=np.array(values)
    )


def min_time_to_strength(params: BoundParams, u: float) -> float:
    """Closed-form lower bound on the time to reach strength ``u``.

    Valid for ``u0 <= u < m_cap``; returns 0 at ``u0``.  This is the
    very-deep-network form; the companion equality integration in
    ``bound_trajectory`` is finite-depth, and the two are compared (not
    asserted equal) by the test-suite oracles.
    """
    m = params.m_cap
    u0 = params.u0
    if u < u0 or u >= m:
        raise ValueError(f"target strength {u} outside [{u0}, {m})")
    log_term = math.log((u * (m - u0)) / (u0 * (m - u)))
    return (params.kappa2 * params.tau / params.depth) * (
        log_term / m**2 - 1.0 / (m * u) + 1.0 / (m * u0)
    )


def estimate_kappas(
    traj: TrajectoryRecord, min_prod_fraction: float = 0.5
) -> tuple[float, float]:
    """Estimate the two margin constants of the growth bound from a run.

    ``kappa1`` is the smallest recorded ratio of the covariance norm to the
    end-to-end norm.  ``kappa2`` is the smallest recorded ratio of the
    end-to-end norm to the compounded strength, taken over the
    growth-dominant window (snapshots whose end-to-end norm is at least
    ``min_prod_fraction`` of the run's maximum): a small random
    initialization starts essentially unaligned, which floors the early
    ratio at an architecture artifact rather than a property of the growth
    phase the bound describes.  Snapshots with near-zero end-to-end norm
    are excluded from both estimates with a warning.
    """
    if traj.sigma_yx_norm is None:
        raise ValueError("trajectory does not record the covariance norm")
    if not 0.0 <= min_prod_fraction <= 1.0:
        raise ValueError("min_prod_fraction must lie in [0, 1]")
    prod = traj.prod_norms
    valid = prod >= _PROD_FLOOR
    if not np.all(valid):
        warnings.warn(
            f"excluded {int(np.sum(~valid))} snapshots with near-zero "
            "end-to-end norm from the margin estimates",
            stacklevel=2,
        )
    if not np.any(valid):
        raise ValueError("no usable snapshots: end-to-end norm is always ~0")
    kappa1 = float(np.min(traj.sigma_yx_norm / prod[valid]))

    delta = layer_norm_spread(traj.layer_norms[0])
    u = combined_strength(traj.layer_norms, delta, traj.depth)
    window = valid & (prod >= min_prod_fraction * prod[valid].max())
    kappa2 = float(np.min(prod[window] / u[window]))
    return kappa1, kappa2


@dataclass(frozen=True)
class BoundCheck:
    """Measured strength slopes against the growth-bound rate.

    ``slopes[i]`` is the finite difference of the compounded strength over
    recorded interval i, times ``tau``; ``rates[i]`` is the bound's
    right-hand side at the interval's start.
    """

    times: np.ndarray
    strengths: np.ndarray
    slopes: np.ndarray
    rates: np.ndarray

    def max_relative_excess(self) -> float:
        """Worst ``slope / rate`` overshoot; <= 0 when the bound holds."""
        return float(np.max(self.slopes / self.rates - 1.0))


def bound_check(
    traj: TrajectoryRecord, kappa1: float, kappa2: float
) -> BoundCheck:
    """Compare a measured run's strength growth against the bound.

    Builds the compounded strength from the recorded layer norms (spread
    fixed at the initial snapshot), forward-differences it over recorded
    intervals, and evaluates the bound's right-hand side at each interval
    start with the supplied margin constants.
    """
    delta = layer_norm_spread(traj.layer_norms[0])
    params = BoundParams(
        depth=traj.depth,
        kappa1=kappa1,
        kappa2=kappa2,
        sigma_yx_norm=traj.sigma_yx_norm,
        delta=delta,
        u0=float(combined_strength(traj.layer_norms[0], delta, traj.depth)),
        tau=1.0 / traj.eta,
    )
    u = combined_strength(traj.layer_norms, delta, traj.depth)
    # With t = step * eta, dU/dt equals tau times the per-step difference,
    # which is the quantity the bound's right-hand side caps.
    slopes = np.diff(u) / np.diff(traj.times)
    rates = params.rate(u[:-1])
    return BoundCheck(times=traj.times, strengths=u, slopes=slopes, rates=rates)

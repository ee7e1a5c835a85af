"""Point-mass Kalman filter fusing IMU accelerations with VIO corrections.

Each world axis is an independent two-state filter ``[p, v]`` driven by the
gravity-compensated IMU acceleration as a known input. VIO position (and
velocity when present) corrects the state through a chi-square innovation
gate. Attitude is passed through from the IMU and is never estimated.

A health monitor turns repeated rejected or missing corrections, an
exploding position covariance, or a non-finite mean into ``failed``. The
transition to ``failed`` produces exactly one :class:`LandingEvent`, and
``failed`` is latched.

The functions here are pure: every operation returns a new
:class:`EstimatorState`.
"""

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

from vioflight import rotations


class Health(str, enum.Enum):
    VALID = "valid"
    DEGRADED = "degraded"
    FAILED = "failed"


class GateResult(str, enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    STALE = "stale"


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class ImuSample:
    t: float
    a_world: np.ndarray
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        a = np.asarray(self.a_world, dtype=float).reshape(3)
        if not (np.isfinite(self.t) and np.all(np.isfinite(a)) and np.all(np.isfinite(self.q))):
            raise EstimationError("non-finite IMU sample")
        object.__setattr__(self, "a_world", a)
        object.__setattr__(self, "q", rotations.normalize(self.q))


@dataclass(frozen=True)
class VioMeasurement:
    t: float
    p: np.ndarray
    v: np.ndarray = None
    cov_p: np.ndarray = None
    cov_v: np.ndarray = None


@dataclass(frozen=True)
class FilterConfig:
    """Filter tuning. Noise values are tuning defaults, not calibrated numbers.

    ``accel_noise_density`` is the white-noise density of the acceleration
    input (m/s^2/sqrt(Hz)); a scalar applies to all three axes.
    """

    accel_noise_density: object = 0.1
    position_std: float = 0.1
    velocity_std: float = 0.1
    min_variance: float = 1e-8
    gate_probability: float = 0.99
    failure_limit: int = 30
    cov_trace_limit: float = 25.0
    max_measurement_age: float = 0.01

    def __post_init__(self):
        q = np.broadcast_to(np.asarray(self.accel_noise_density, dtype=float), (3,))
        if np.any(q <= 0):
            raise ValueError("accel_noise_density must be positive")
        for name in ("position_std", "velocity_std", "min_variance", "cov_trace_limit", "max_measurement_age"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.gate_probability < 1:
            raise ValueError("gate_probability must be in (0, 1)")
        if int(self.failure_limit) < 1:
            raise ValueError("failure_limit must be at least 1")

    @property
    def noise_density(self):
        return np.broadcast_to(np.asarray(self.accel_noise_density, dtype=float), (3,))


@dataclass(frozen=True)
class LandingEvent:
    t: float
    cause: str


@dataclass(frozen=True)
class EstimatorState:
    t: float
    mean: np.ndarray  # (3, 2): per axis [p, v]
    cov: np.ndarray  # (3, 2, 2)
    attitude: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    health: Health = Health.VALID
    gate_failures: int = 0
    last_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    landing_emitted: bool = False

    @property
    def position(self):
        return self.mean[:, 0].copy()

    @property
    def velocity(self):
        return self.mean[:, 1].copy()

    def position_cov_trace(self):
        return float(self.cov[:, 0, 0].sum())


def initial_state(t, p, v=(0.0, 0.0, 0.0), pos_std=0.1, vel_std=0.1, attitude=(1.0, 0.0, 0.0, 0.0)):
    mean = np.column_stack([np.asarray(p, dtype=float), np.asarray(v, dtype=float)])
    cov = np.zeros((3, 2, 2))
    cov[:, 0, 0] = pos_std**2
    cov[:, 1, 1] = vel_std**2
    return EstimatorState(t=float(t), mean=mean, cov=cov, attitude=rotations.normalize(attitude))


def _symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _transition(dt):
    return np.array([[1.0, dt], [0.0, 1.0]])


def _process_noise(q, dt):
    base = np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    return (q**2)[:, None, None] * base


def predict(state, imu, dt, cfg=None):
    """Propagate by ``dt`` with the IMU acceleration held constant."""
    cfg = cfg or FilterConfig()
    if not (dt > 0 and np.isfinite(dt)):
        raise EstimationError("dt must be positive and finite")
    if imu.t < state.t:
        raise EstimationError("IMU sample older than the state")
    a = imu.a_world
    p, v = state.mean[:, 0], state.mean[:, 1]
    mean = np.column_stack([p + v * dt + 0.5 * a * dt * dt, v + a * dt])
    F = _transition(dt)
    cov = _symmetrize(F @ state.cov @ F.T + _process_noise(cfg.noise_density, dt))
    return replace(state, t=state.t + dt, mean=mean, cov=cov, attitude=imu.q, last_accel=a)


def propagate_to(state, t_query, cfg=None):
    """Predict to ``t_query`` holding the last acceleration input."""
    if t_query < state.t:
        raise EstimationError(f"cannot propagate backwards from {state.t} to {t_query}")
    if t_query == state.t:
        return state
    imu = ImuSample(t_query, state.last_accel, state.attitude)
    out = predict(state, imu, t_query - state.t, cfg)
    return replace(out, t=float(t_query))


@lru_cache(maxsize=16)
def gate_threshold(probability, dof):
    return float(chi2.ppf(probability, dof))


def _measurement_variances(cov, default_std, floor):
    if cov is None:
        return np.full(3, max(default_std**2, floor))
    cov = np.asarray(cov, dtype=float).reshape(3, 3)
    if not np.allclose(cov, cov.T, atol=1e-12) or np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-12:
        raise EstimationError("measurement covariance is not symmetric PSD")
    # axes are decoupled: only the diagonal enters the per-axis updates
    return np.maximum(np.diag(cov), floor)


def update(state, z, cfg=None):
    """Gated linear measurement update; returns ``(state, GateResult)``.

    Measurements older than ``cfg.max_measurement_age`` are dropped as
    stale. A gated-out measurement leaves mean and covariance untouched and
    increments the consecutive failure counter; an accepted one resets it.
    """
    cfg = cfg or FilterConfig()
    if z.t < state.t - cfg.max_measurement_age - 1e-12:
        return state, GateResult.STALE
    r_p = _measurement_variances(z.cov_p, cfg.position_std, cfg.min_variance)
    zp = np.asarray(z.p, dtype=float).reshape(3)
    if z.v is not None:
        r_v = _measurement_variances(z.cov_v, cfg.velocity_std, cfg.min_variance)
        zv = np.asarray(z.v, dtype=float).reshape(3)
        H = np.eye(2)
        y = np.column_stack([zp, zv]) - state.mean
        R = np.zeros((3, 2, 2))
        R[:, 0, 0] = r_p
        R[:, 1, 1] = r_v
    else:
        H = np.array([[1.0, 0.0]])
        y = (zp - state.mean[:, 0])[:, None]
        R = r_p[:, None, None]
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(R))):
        raise EstimationError("non-finite measurement")

    P = state.cov
    S = H @ P @ H.T + R
    S_inv = np.linalg.inv(S)
    d2 = float(np.einsum("ai,aij,aj->", y, S_inv, y))
    dof = y.size
    if d2 > gate_threshold(cfg.gate_probability, dof):
        return replace(state, gate_failures=state.gate_failures + 1), GateResult.REJECTED

    K = P @ H.T @ S_inv
    mean = state.mean + np.einsum("aij,aj->ai", K, y)
    I_KH = np.eye(2) - K @ H
    cov = _symmetrize(I_KH @ P @ np.swapaxes(I_KH, -1, -2) + K @ R @ np.swapaxes(K, -1, -2))
    return replace(state, mean=mean, cov=cov, gate_failures=0), GateResult.ACCEPTED


def register_missing(state):
    """Count an expected correction that never arrived (e.g. a VIO dropout)."""
    return replace(state, gate_failures=state.gate_failures + 1)


def check_health(state, cfg=None):
    """Classify filter health; returns ``(state, LandingEvent or None)``.

    An event is produced only on the transition into ``failed``.
    """
    cfg = cfg or FilterConfig()
    if state.health is Health.FAILED:
        return state, None
    cause = None
    if not (np.all(np.isfinite(state.mean)) and np.all(np.isfinite(state.cov))):
        cause = "non_finite"
    elif state.gate_failures >= cfg.failure_limit:
        cause = "correction_failures"
    elif state.position_cov_trace() > cfg.cov_trace_limit:
        cause = "covariance"
    if cause is not None:
        return replace(state, health=Health.FAILED, landing_emitted=True), LandingEvent(state.t, cause)
    health = Health.DEGRADED if state.gate_failures > 0 else Health.VALID
    return replace(state, health=health), None

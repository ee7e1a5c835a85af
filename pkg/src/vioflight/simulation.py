"""Deterministic closed-loop flight simulation with a synthetic VIO sensor.

The loop runs on a fixed control grid (100 Hz by default):

1. the tracker turns the current estimate and the reference into an
   acceleration command (or the landing command once the estimator failed),
2. the plant, a saturated double integrator, integrates it exactly,
3. the applied acceleration plus optional white noise is the IMU input,
4. VIO frames falling inside the tick are generated from the exact plant
   state at their own timestamps and fused after propagating the filter to
   that time,
5. the filter is propagated to the end of the tick and logged.

Randomness comes from one seed split into named sub-streams (``imu``,
``vio``, ``dropout``) so that switching one noise source on or off does not
change the draws of the others.
"""

import csv
import io
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from vioflight import estimation as est
from vioflight import rotations
from vioflight.shaping import MotionConstraints, shape_trajectory
from vioflight.trajectory import Trajectory, finite_diff, generate_square, read_trajectory

CAMERA_ORIENTATIONS = (0, 10, 30, 90)
STREAMS = ("imu", "vio", "dropout")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlantState:
    t: float
    p: np.ndarray
    v: np.ndarray
    a_cmd_applied: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0


@dataclass(frozen=True)
class PlantLimits:
    a_max: float = 3.0


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 3.0
    kv: float = 4.0


@dataclass(frozen=True)
class VioSensorModel:
    """Synthetic VIO output.

    ``bias_ramp`` (m/s per axis) starts at ``bias_start`` and grows the
    position error linearly; it also shows up as a constant velocity error.
    ``dropout_windows`` is a sequence of ``(start, duration)`` pairs during
    which no frame is delivered.
    """

    rate: float = 30.0
    position_std: float = 0.0
    velocity_std: float = 0.0
    dropout_probability: float = 0.0
    scale: float = 1.0
    bias_ramp: tuple = (0.0, 0.0, 0.0)
    bias_start: float = 0.0
    delay: float = 0.0
    dropout_windows: tuple = ()
    provide_velocity: bool = True
    variance_floor: float = 1e-6

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("sensor rate must be positive")
        if self.position_std < 0 or self.velocity_std < 0:
            raise ConfigError("sensor noise std must be non-negative")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ConfigError("dropout_probability must be in [0, 1]")
        if not self.scale > 0:
            raise ConfigError("scale must be positive")
        if self.delay < 0:
            raise ConfigError("delay must be non-negative")
        object.__setattr__(self, "bias_ramp", tuple(float(x) for x in np.broadcast_to(self.bias_ramp, (3,))))
        object.__setattr__(self, "dropout_windows", tuple((float(a), float(b)) for a, b in self.dropout_windows))


@dataclass(frozen=True)
class ReferenceSpec:
    side: float = 20.0
    velocity: float = 1.0
    altitude: float = 3.0
    sample_period: float = 0.2
    shaped: bool = True
    a_max: float = 0.4
    path: str = None

    def build(self):
        if self.path:
            ref = read_trajectory(self.path)
        else:
            ref = generate_square(self.side, self.velocity, self.sample_period, self.altitude)
        if self.shaped:
            ref, _ = shape_trajectory(ref, MotionConstraints(a_max=self.a_max, sample_period=self.sample_period))
        return ref


@dataclass(frozen=True)
class SimConfig:
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    camera_orientation: int = 90
    plant: PlantLimits = field(default_factory=PlantLimits)
    gains: ControllerGains = field(default_factory=ControllerGains)
    sensor: VioSensorModel = field(default_factory=VioSensorModel)
    filter: est.FilterConfig = field(default_factory=est.FilterConfig)
    imu_noise_std: float = 0.0
    control_rate: float = 100.0
    duration: float = None
    settle_time: float = 5.0
    takeoff_blackout: float = None
    landing_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.camera_orientation not in CAMERA_ORIENTATIONS:
            raise ConfigError(f"camera_orientation must be one of {CAMERA_ORIENTATIONS}")
        if not self.control_rate > 0:
            raise ConfigError("control_rate must be positive")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError("duration must be positive")
        if self.imu_noise_std < 0 or self.settle_time < 0 or not self.landing_rate > 0:
            raise ConfigError("invalid imu_noise_std, settle_time or landing_rate")
        if self.plant.a_max <= 0:
            raise ConfigError("plant a_max must be positive")

    @property
    def blackout(self):
        """VIO-unavailable window at take-off; defaults to 1 s for the down-looking camera."""
        if self.takeoff_blackout is not None:
            return float(self.takeoff_blackout)
        return 1.0 if self.camera_orientation == 90 else 0.0


def make_streams(seed):
    """Independent generators keyed by name, stable across runs and versions."""
    return {name: np.random.default_rng([int(seed), zlib.crc32(name.encode())]) for name in STREAMS}


def _clamp_norm(a, limit):
    n = np.linalg.norm(a)
    if n > limit:
        return a * (limit / n)
    return a


def step_plant(s, a_cmd, dt, limits=PlantLimits()):
    """Exact double-integrator step with the command clamped to ``limits.a_max`` in norm."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    a_cmd = np.asarray(a_cmd, dtype=float)
    if not np.all(np.isfinite(a_cmd)):
        raise ValueError("non-finite acceleration command")
    a = _clamp_norm(a_cmd, limits.a_max)
    p = s.p + s.v * dt + 0.5 * a * dt * dt
    v = s.v + a * dt
    return PlantState(t=s.t + dt, p=p, v=v, a_cmd_applied=a, yaw=s.yaw)


@dataclass(frozen=True)
class ReferencePoint:
    p: np.ndarray
    v: np.ndarray


def track_reference(estimate, ref, gains=ControllerGains(), a_max=PlantLimits().a_max):
    """Position-velocity feedback ``kp (p_ref - p) + kv (v_ref - v)``, saturated."""
    a = gains.kp * (ref.p - estimate.position) + gains.kv * (ref.v - estimate.velocity)
    return _clamp_norm(a, a_max)


class ReferenceSignal:
    """Reference position/velocity at arbitrary times from a sampled trajectory.

    Position is interpolated linearly; velocity interpolates the central
    finite differences. After the last sample the final position is held.
    """

    def __init__(self, traj):
        self.traj = traj
        self.t = np.asarray(traj.t)
        self.p = np.asarray(traj.p)
        if len(traj) >= 3:
            prof = finite_diff(traj)
            v = prof.v.copy()
            v[prof.one_sided] = 0.0
        else:
            v = np.zeros_like(self.p)
        self.v = v

    @property
    def end(self):
        return float(self.t[-1])

    def __call__(self, t):
        if t >= self.t[-1]:
            return ReferencePoint(self.p[-1].copy(), np.zeros(3))
        if t <= self.t[0]:
            return ReferencePoint(self.p[0].copy(), np.zeros(3))
        p = np.array([np.interp(t, self.t, self.p[:, k]) for k in range(3)])
        v = np.array([np.interp(t, self.t, self.v[:, k]) for k in range(3)])
        return ReferencePoint(p, v)


def _in_windows(t, windows):
    return any(start <= t < start + dur for start, dur in windows)


def sample_vio(truth, m, streams):
    """One synthetic VIO frame for the plant state ``truth``, or ``None`` on dropout.

    Noise and dropout draws happen on every call, so a dropped frame does
    not shift later noise values.
    """
    noise_p = streams["vio"].normal(0.0, 1.0, 3) * m.position_std
    noise_v = streams["vio"].normal(0.0, 1.0, 3) * m.velocity_std
    dropped = streams["dropout"].random() < m.dropout_probability
    if dropped or _in_windows(truth.t, m.dropout_windows):
        return None
    bias_rate = np.asarray(m.bias_ramp)
    elapsed = max(0.0, truth.t - m.bias_start)
    p = m.scale * truth.p + bias_rate * elapsed + noise_p
    var_p = max(m.position_std**2, m.variance_floor)
    if m.provide_velocity:
        bias_v = bias_rate if truth.t >= m.bias_start else np.zeros(3)
        v = m.scale * truth.v + bias_v + noise_v
        var_v = max(m.velocity_std**2, m.variance_floor)
        cov_v = var_v * np.eye(3)
    else:
        v = cov_v = None
    return est.VioMeasurement(t=truth.t - m.delay, p=p, v=v, cov_p=var_p * np.eye(3), cov_v=cov_v)


@dataclass
class FlightLog:
    t: np.ndarray
    truth_p: np.ndarray
    truth_v: np.ndarray
    truth_yaw: np.ndarray
    est_p: np.ndarray
    est_v: np.ndarray
    ref_p: np.ndarray
    a_cmd: np.ndarray
    a_applied: np.ndarray
    health: list
    vio: list
    events: list
    reference: Trajectory = None

    @property
    def landing_events(self):
        return [e for e in self.events if e[1] == "landing"]

    def truth_trajectory(self):
        return Trajectory(self.t, self.truth_p, rotations.from_yaw(self.truth_yaw), frame_id="truth")

    def estimate_trajectory(self):
        return Trajectory(self.t, self.est_p, rotations.from_yaw(self.truth_yaw), frame_id="estimate")

    def events_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "event", "cause"))
        for t, name, cause in self.events:
            w.writerow((repr(float(t)), name, cause))
        return buf.getvalue()

    def commands_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ("t", "ref_x", "ref_y", "ref_z", "cmd_ax", "cmd_ay", "cmd_az", "applied_ax", "applied_ay", "applied_az",
             "health")
        )
        for i in range(len(self.t)):
            row = [self.t[i], *self.ref_p[i], *self.a_cmd[i], *self.a_applied[i]]
            w.writerow([repr(float(x)) for x in row] + [self.health[i]])
        return buf.getvalue()

    def vio_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t_frame", "t_stamp", "px", "py", "pz", "status"))
        for t_frame, stamp, p, status in self.vio:
            vals = [t_frame, stamp, *(p if p is not None else (np.nan,) * 3)]
            w.writerow([repr(float(x)) for x in vals] + [status])
        return buf.getvalue()


def _landing_command(estimate, cfg):
    """Zero lateral acceleration; hold a constant descent rate on the estimate."""
    az = cfg.gains.kv * (-cfg.landing_rate - estimate.velocity[2])
    a = np.array([0.0, 0.0, az])
    return _clamp_norm(a, cfg.plant.a_max)


def run_closed_loop(cfg, reference=None):
    """Fly the configured scenario and return the :class:`FlightLog`."""
    ref_traj = reference if reference is not None else cfg.reference.build()
    ref = ReferenceSignal(ref_traj)
    dt = 1.0 / cfg.control_rate
    duration = cfg.duration if cfg.duration is not None else ref.end - ref.t[0] + cfg.settle_time
    t0 = float(ref.t[0])
    n_steps = int(round(duration * cfg.control_rate))
    streams = make_streams(cfg.seed)
    fcfg = cfg.filter
    sensor = cfg.sensor
    blackout_end = t0 + cfg.blackout

    start = ref(t0)
    truth = PlantState(t=t0, p=start.p.copy(), v=np.zeros(3))
    state = est.initial_state(t0, truth.p, truth.v, pos_std=0.01, vel_std=0.01)

    ts, tp, tv, tyaw, ep, ev, rp, acmd, aapp, health = ([] for _ in range(10))
    vio_log, events = [], []

    def record(truth, state, ref_pt, a_cmd):
        ts.append(truth.t)
        tp.append(truth.p)
        tv.append(truth.v)
        tyaw.append(truth.yaw)
        ep.append(state.position)
        ev.append(state.velocity)
        rp.append(ref_pt.p)
        acmd.append(a_cmd)
        aapp.append(truth.a_cmd_applied)
        health.append(state.health.value)

    record(truth, state, start, np.zeros(3))
    frame_period = 1.0 / sensor.rate
    next_frame = 1
    landing = False

    for k in range(1, n_steps + 1):
        t_prev = t0 + (k - 1) * dt
        t_now = t0 + k * dt
        ref_pt = ref(t_prev)
        if landing:
            a_cmd = _landing_command(state, cfg)
        else:
            a_cmd = track_reference(state, ref_pt, cfg.gains, cfg.plant.a_max)
        prev = truth
        truth = step_plant(prev, a_cmd, dt, cfg.plant)
        truth = replace(truth, t=t_now)
        a_meas = truth.a_cmd_applied
        if cfg.imu_noise_std > 0:
            a_meas = a_meas + streams["imu"].normal(0.0, cfg.imu_noise_std, 3)
        state = replace(state, last_accel=a_meas, attitude=rotations.from_yaw(truth.yaw))

        while t0 + next_frame * frame_period <= t_now + 1e-12:
            tf = t0 + next_frame * frame_period
            next_frame += 1
            tau = tf - t_prev
            at_frame = PlantState(
                t=tf,
                p=prev.p + prev.v * tau + 0.5 * truth.a_cmd_applied * tau * tau,
                v=prev.v + truth.a_cmd_applied * tau,
                yaw=truth.yaw,
            )
            z = sample_vio(at_frame, sensor, streams)
            if tf < blackout_end:
                vio_log.append((tf, tf, None, "blackout"))
                continue
            if landing:
                vio_log.append((tf, tf, None if z is None else z.p, "ignored"))
                continue
            state = est.propagate_to(state, max(tf, state.t), fcfg)
            if z is None:
                state = est.register_missing(state)
                vio_log.append((tf, tf, None, "dropped"))
            else:
                state, gate = est.update(state, z, fcfg)
                vio_log.append((tf, z.t, z.p, gate.value))
            before = state.health
            state, event = est.check_health(state, fcfg)
            if event is not None:
                events.append((event.t, "landing", event.cause))
                landing = True
            elif state.health is not before:
                events.append((state.t, "health", state.health.value))

        state = est.propagate_to(state, t_now, fcfg)
        state = replace(state, t=t_now)
        record(truth, state, ref(t_now), a_cmd)
        if landing and truth.p[2] <= 0.0:
            events.append((t_now, "touchdown", "ground_contact"))
            break

    return FlightLog(
        t=np.array(ts),
        truth_p=np.array(tp),
        truth_v=np.array(tv),
        truth_yaw=np.array(tyaw),
        est_p=np.array(ep),
        est_v=np.array(ev),
        ref_p=np.array(rp),
        a_cmd=np.array(acmd),
        a_applied=np.array(aapp),
        health=health,
        vio=vio_log,
        events=events,
        reference=ref_traj,
    )

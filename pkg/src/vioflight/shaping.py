"""Trajectory shaping under VIO motion constraints.

A constant-speed, equidistantly sampled path usually demands large
accelerations at its corners. Shaping finds the samples whose
finite-difference acceleration (or velocity) exceeds the limits and adds
samples around them, which, because the output is re-stamped at a fixed
period, slows the traversal there. The check is repeated until nothing
violates the limits or the iteration budget runs out.

How samples are added: the output is parametrized by arc length along the
input polyline. Every iteration lowers a per-arc-length speed cap around each
violating sample to half of its current local speed. The sample positions
are then rebuilt from the largest speed profile that respects the caps and
an along-path acceleration of ``RAMP_FRACTION * a_max``, starting and ending
at rest. The profile's acceleration is piecewise constant in time, so
sampling it at a fixed period keeps second differences on straight
stretches within the bound. What is left over at turns drops as the local
caps shrink. All output samples lie on the input path.
"""

from dataclasses import dataclass

import numpy as np

from vioflight.trajectory import DEFAULT_SAMPLE_PERIOD, Trajectory, TrajectoryError, finite_diff

DEFAULT_A_MAX = 0.4
DEFAULT_V_MAX = 10.0
DEFAULT_MAX_ITER = 50
TOLERANCE = 1e-9

RAMP_FRACTION = 0.8
CAP_FACTOR = 0.5
# arc-length grid resolution relative to the shortest input step
_GRID_DIVISIONS = 50


@dataclass(frozen=True)
class MotionConstraints:
    v_max: float = DEFAULT_V_MAX
    a_max: float = DEFAULT_A_MAX
    sample_period: float = DEFAULT_SAMPLE_PERIOD

    def __post_init__(self):
        for name in ("v_max", "a_max", "sample_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class ShapingReport:
    iterations: int
    inserted_samples: int
    max_accel_before: float
    max_accel_after: float
    max_speed_after: float
    max_path_deviation: float
    converged: bool
    accel_history: tuple = ()

    def as_row(self):
        return {
            "iterations": self.iterations,
            "inserted_samples": self.inserted_samples,
            "max_accel_before": self.max_accel_before,
            "max_accel_after": self.max_accel_after,
            "max_speed_after": self.max_speed_after,
            "max_path_deviation": self.max_path_deviation,
            "converged": int(self.converged),
        }


def _interior_extrema(traj):
    prof = finite_diff(traj)
    inner = ~prof.one_sided
    acc = np.linalg.norm(prof.a[inner], axis=1)
    vel = np.linalg.norm(prof.v[inner], axis=1)
    return acc, vel, np.flatnonzero(inner)


def find_violations(traj, c):
    """Interior sample indices whose speed or acceleration exceeds the limits."""
    if len(traj) < 3:
        raise TrajectoryError("constraint check needs at least 3 samples")
    acc, vel, idx = _interior_extrema(traj)
    bad = (acc > c.a_max + TOLERANCE) | (vel > c.v_max + TOLERANCE)
    return idx[bad].tolist()


def validate(traj, c):
    """Evaluate ``traj`` against the constraints without modifying it."""
    if len(traj) < 3:
        raise TrajectoryError("constraint check needs at least 3 samples")
    acc, vel, _ = _interior_extrema(traj)
    ok = not find_violations(traj, c)
    amax = float(acc.max()) if len(acc) else 0.0
    return ShapingReport(
        iterations=0,
        inserted_samples=0,
        max_accel_before=amax,
        max_accel_after=amax,
        max_speed_after=float(vel.max()) if len(vel) else 0.0,
        max_path_deviation=0.0,
        converged=ok,
    )


class _Path:
    """Arc-length parametrization of a polyline (zero-length steps dropped)."""

    def __init__(self, traj):
        p = np.asarray(traj.p)
        t = np.asarray(traj.t)
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 0])
        # merge repeated positions; the time of the first copy is kept
        self.vertices = p[keep]
        self.vertex_q = np.asarray(traj.q)[keep]
        self.vertex_t = t[keep]
        seg = np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)
        if len(seg) == 0:
            raise TrajectoryError("trajectory does not move; nothing to shape")
        self.seg = seg
        self.arc = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.arc[-1])
        # time spent on each segment of the input, for the nominal speed
        vt = np.asarray(traj.t)[keep]
        self.seg_dt = np.diff(vt)
        # distinct positions can share a kept timestamp only if duplicates came first
        self.seg_dt = np.where(self.seg_dt > 0, self.seg_dt, np.nan)

    def positions(self, s):
        s = np.clip(s, 0.0, self.length)
        j = np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.seg) - 1)
        frac = (s - self.arc[j]) / self.seg[j]
        return self.vertices[j] + frac[:, None] * (self.vertices[j + 1] - self.vertices[j]), j

    def segment_speeds(self):
        speed = self.seg / self.seg_dt
        fallback = np.nanmax(speed) if np.any(np.isfinite(speed)) else 1.0
        return np.where(np.isfinite(speed), speed, fallback)


def _speed_profile(caps, ds, accel):
    """Largest speed-squared profile under per-node caps and an accel bound.

    Solves ``w_j = min(cap_j^2, w_{j-1} + 2 a ds)`` forward and the mirrored
    recursion backward as running minima; both ends are pinned to rest.
    """
    w = caps**2
    w[0] = 0.0
    w[-1] = 0.0
    ramp = 2.0 * accel * ds * np.arange(len(w))
    w = np.minimum.accumulate(w - ramp) + ramp
    ramp_back = ramp[::-1]
    w = (np.minimum.accumulate((w - ramp_back)[::-1]))[::-1] + ramp_back
    return np.sqrt(np.maximum(w, 0.0))


def _sample_profile(v, ds, dt):
    """Arc positions of a profile with piecewise-linear ``v^2`` sampled every ``dt``."""
    v0, v1 = v[:-1], v[1:]
    acc = (v1**2 - v0**2) / (2.0 * ds)
    with np.errstate(divide="ignore", invalid="ignore"):
        cell_t = np.where(np.abs(acc) > 1e-15, (v1 - v0) / acc, ds / np.maximum(v0, 1e-300))
    T = np.concatenate([[0.0], np.cumsum(cell_t)])
    total = T[-1]
    n = int(np.floor(total / dt + 1e-9))
    times = dt * np.arange(n + 1)
    j = np.clip(np.searchsorted(T, times, side="right") - 1, 0, len(cell_t) - 1)
    tau = times - T[j]
    s = ds * j + v0[j] * tau + 0.5 * acc[j] * tau**2
    s = np.minimum(np.maximum.accumulate(s), ds * (len(v) - 1))
    arc_end = ds * (len(v) - 1)
    if arc_end - s[-1] > 1e-12 * max(1.0, arc_end):
        s = np.append(s, arc_end)
    else:
        s[-1] = arc_end
    return s


def polyline_hausdorff(a, b, subdivisions=4):
    """Hausdorff distance between two polylines given as vertex arrays.

    Each polyline is densified with ``subdivisions`` points per segment and
    compared against the exact segments of the other.
    """
    return max(_directed(a, b, subdivisions), _directed(b, a, subdivisions))


def _densify(pts, k):
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return pts
    f = np.arange(k) / k
    seg = pts[:-1, None, :] + f[None, :, None] * (pts[1:] - pts[:-1])[:, None, :]
    return np.vstack([seg.reshape(-1, pts.shape[1]), pts[-1:]])


def _merge_collinear(pts, tol=1e-9):
    """Drop vertices where the polyline continues straight on; the set of
    points covered by the segments is unchanged."""
    if len(pts) < 3:
        return pts
    d = np.diff(pts, axis=0)
    n = np.linalg.norm(d, axis=1)
    keep_seg = n > 0
    pts = np.vstack([pts[:1], pts[1:][keep_seg]])
    if len(pts) < 3:
        return pts
    u = np.diff(pts, axis=0)
    u /= np.linalg.norm(u, axis=1)[:, None]
    straight = np.linalg.norm(u[1:] - u[:-1], axis=1) <= tol
    keep = np.concatenate([[True], ~straight, [True]])
    return pts[keep]


def _directed(a, b, k, budget=1 << 21):
    pts = _densify(a, k)
    b = _merge_collinear(np.asarray(b, dtype=float))
    if len(b) == 1:
        return float(np.linalg.norm(pts - b[0], axis=1).max())
    # bound the (points x segments) work arrays to roughly ``budget`` entries
    chunk = max(1, budget // len(b))
    s0, s1 = b[:-1], b[1:]
    d = s1 - s0
    dd = np.maximum((d**2).sum(axis=1), 1e-300)
    worst = 0.0
    for start in range(0, len(pts), chunk):
        x = pts[start : start + chunk]
        rel = x[:, None, :] - s0[None, :, :]
        u = np.clip((rel * d[None]).sum(axis=2) / dd[None], 0.0, 1.0)
        dist = np.linalg.norm(rel - u[..., None] * d[None], axis=2).min(axis=1)
        worst = max(worst, float(dist.max()))
    return worst


def shape_trajectory(traj, c, max_iter=DEFAULT_MAX_ITER):
    """Slow the trajectory down around constraint violations.

    Returns ``(shaped, report)``. A trajectory that already satisfies the
    constraints comes back unchanged. If violations remain after
    ``max_iter`` iterations the attempt with the lowest peak acceleration
    is returned with ``converged=False``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if len(traj) < 3:
        raise TrajectoryError("shaping needs at least 3 samples")
    acc0, _, _ = _interior_extrema(traj)
    before = float(acc0.max())
    violations = find_violations(traj, c)
    if not violations:
        rep = validate(traj, c)
        return traj, ShapingReport(0, 0, before, before, rep.max_speed_after, 0.0, True, (before,))

    path = _Path(traj)
    dt = c.sample_period
    ds = min(path.seg.min(), path.length) / _GRID_DIVISIONS
    n_nodes = int(np.ceil(path.length / ds)) + 1
    ds = path.length / (n_nodes - 1)
    grid = ds * np.arange(n_nodes)

    # nominal speed of each input segment, limited by v_max
    seg_speed = np.minimum(path.segment_speeds(), c.v_max)
    seg_of_node = np.clip(np.searchsorted(path.arc, grid, side="right") - 1, 0, len(path.seg) - 1)
    caps = seg_speed[seg_of_node].copy()
    on_vertex = np.searchsorted(path.arc, grid)
    # a node sitting on an interior vertex takes the lower of both segment speeds
    hit = (on_vertex > 0) & (on_vertex < len(path.seg)) & np.isclose(path.arc[np.minimum(on_vertex, len(path.arc) - 1)], grid)
    caps[hit] = np.minimum(caps[hit], seg_speed[on_vertex[hit] - 1])

    # caps are driven by the latest candidate; the kept result only changes
    # when a candidate is no worse, so the peak acceleration never goes up
    current = traj
    s_candidate = _arc_positions(path, traj)
    history = [before]
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        _lower_caps(caps, grid, ds, s_candidate, violations, dt)
        v = _speed_profile(caps, ds, RAMP_FRACTION * c.a_max)
        s_candidate = _sample_profile(v, ds, dt)
        p, seg_idx = path.positions(s_candidate)
        candidate = Trajectory(
            traj.t[0] + dt * np.arange(len(s_candidate)), p, path.vertex_q[seg_idx], frame_id=traj.frame_id
        )
        acc, _, _ = _interior_extrema(candidate)
        violations = find_violations(candidate, c)
        if float(acc.max()) <= history[-1]:
            current = candidate
            history.append(float(acc.max()))
        else:
            history.append(history[-1])
        if not violations:
            break

    acc, vel, _ = _interior_extrema(current)
    report = ShapingReport(
        iterations=iterations,
        inserted_samples=len(current) - len(traj),
        max_accel_before=before,
        max_accel_after=float(acc.max()),
        max_speed_after=float(vel.max()),
        max_path_deviation=polyline_hausdorff(traj.p, current.p),
        converged=not find_violations(current, c),
        accel_history=tuple(history),
    )
    return current, report


def _arc_positions(path, traj):
    """Arc-length coordinate of each sample of the (unshaped) input."""
    p = np.asarray(traj.p)
    seg = np.concatenate([[0.0], np.linalg.norm(np.diff(p, axis=0), axis=1)])
    return np.cumsum(seg)


def _lower_caps(caps, grid, ds, s, violations, dt):
    """Halve the allowed speed on the stretch around each violating sample."""
    for i in violations:
        lo = s[max(i - 1, 0)]
        hi = s[min(i + 1, len(s) - 1)]
        local_speed = 0.5 * (hi - lo) / dt
        j0 = int(np.floor(lo / ds))
        j1 = int(np.ceil(hi / ds))
        sl = slice(max(j0, 0), min(j1, len(caps) - 1) + 1)
        caps[sl] = np.minimum(caps[sl], CAP_FACTOR * local_speed)

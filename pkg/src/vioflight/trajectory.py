"""Trajectory containers, TUM text I/O, time association and kinematics.

A :class:`Trajectory` is stored column-wise (``t``, ``p``, ``q`` arrays) so
that the numeric code can work on whole arrays; :class:`TimedPose` is the
per-sample view handed out by indexing and iteration.
"""

from dataclasses import dataclass, field

import numpy as np

from vioflight import rotations

DEFAULT_MAX_DT = 0.02
DEFAULT_SAMPLE_PERIOD = 0.2


class TrajectoryError(ValueError):
    """Raised for invalid trajectory content."""


class TrajectoryFormatError(TrajectoryError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AssociationError(TrajectoryError):
    pass


@dataclass(frozen=True)
class TimedPose:
    t: float
    p: np.ndarray
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        q = np.asarray(self.q, dtype=float).reshape(4)
        if not (np.isfinite(self.t) and np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise TrajectoryError("pose components must be finite")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", rotations.normalize(q))


class Trajectory:
    """Ordered pose series with strictly increasing timestamps.

    Arrays are copied on construction and marked read-only.
    """

    def __init__(self, t, p, q=None, frame_id=""):
        t = np.array(t, dtype=float).reshape(-1)
        p = np.array(p, dtype=float).reshape(-1, 3)
        if q is None:
            q = np.tile([1.0, 0.0, 0.0, 0.0], (len(t), 1))
        q = np.array(q, dtype=float).reshape(-1, 4)
        if len(t) == 0:
            raise TrajectoryError("trajectory must contain at least one pose")
        if not (len(t) == len(p) == len(q)):
            raise TrajectoryError("t, p and q lengths differ")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise TrajectoryError("pose components must be finite")
        if np.any(np.diff(t) <= 0):
            bad = int(np.argmax(np.diff(t) <= 0)) + 1
            raise TrajectoryError(f"timestamps not strictly increasing at index {bad}")
        q = rotations.normalize(q)
        for arr in (t, p, q):
            arr.flags.writeable = False
        self.t, self.p, self.q = t, p, q
        self.frame_id = frame_id

    @classmethod
    def from_poses(cls, poses, frame_id=""):
        poses = list(poses)
        if not poses:
            raise TrajectoryError("trajectory must contain at least one pose")
        return cls(
            [x.t for x in poses],
            np.stack([x.p for x in poses]),
            np.stack([x.q for x in poses]),
            frame_id=frame_id,
        )

    @property
    def poses(self):
        return [self[i] for i in range(len(self))]

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return TimedPose(self.t[i], self.p[i], self.q[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return f"Trajectory(n={len(self)}, t=[{self.t[0]:.3f}, {self.t[-1]:.3f}], frame_id={self.frame_id!r})"

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Trajectory(self.t[idx], self.p[idx], self.q[idx], frame_id=self.frame_id)

    def path_length(self):
        return float(np.linalg.norm(np.diff(self.p, axis=0), axis=1).sum())


@dataclass(frozen=True)
class KinematicProfile:
    """Finite-difference velocity and acceleration per sample.

    ``one_sided`` marks the endpoint samples whose derivatives come from
    one-sided stencils; constraint checks skip them by default.
    """

    t: np.ndarray
    v: np.ndarray
    a: np.ndarray
    one_sided: np.ndarray


def parse_trajectory(text, format="tum", frame_id=""):
    """Parse TUM-style ``t px py pz qx qy qz qw`` lines into a trajectory.

    Blank lines and lines starting with ``#`` are skipped. Errors carry the
    1-based line number of the offending line.
    """
    if format != "tum":
        raise ValueError(f"unsupported trajectory format {format!r}")
    if not isinstance(text, str):
        text = text.read()
    rows = []
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise TrajectoryFormatError(f"expected 8 fields, got {len(fields)}", lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise TrajectoryFormatError(str(exc), lineno) from None
        if not all(np.isfinite(values)):
            raise TrajectoryFormatError("non-finite value", lineno)
        if values[7] == 0 and not any(values[4:7]):
            raise TrajectoryFormatError("zero quaternion", lineno)
        if rows and values[0] <= rows[-1][0]:
            raise TrajectoryFormatError("timestamps not strictly increasing", lineno)
        rows.append(values)
        lines.append(lineno)
    if not rows:
        raise TrajectoryFormatError("no poses in input")
    data = np.asarray(rows)
    # file order is qx qy qz qw; internal order is w x y z
    q = data[:, [7, 4, 5, 6]]
    return Trajectory(data[:, 0], data[:, 1:4], q, frame_id=frame_id)


def read_trajectory(path, frame_id=None):
    with open(path, encoding="utf-8") as fh:
        return parse_trajectory(fh.read(), frame_id=str(path) if frame_id is None else frame_id)


def _format_time(t):
    mantissa, exp = f"{t:.16e}".split("e")
    return f"{mantissa}e{int(exp)}"


def _format_value(x):
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def serialize_trajectory(traj, format="tum", header=True):
    """Render a trajectory as TUM text.

    Timestamps carry 17 significant digits and the remaining fields use the
    shortest exact float representation, so parsing the output gives back
    the same doubles.
    """
    if format != "tum":
        raise ValueError(f"unsupported trajectory format {format!r}")
    out = ["# t px py pz qx qy qz qw"] if header else []
    for t, p, q in zip(traj.t, traj.p, traj.q):
        fields = [_format_time(t)]
        fields += [_format_value(v) for v in p]
        fields += [_format_value(v) for v in (q[1], q[2], q[3], q[0])]
        out.append(" ".join(fields))
    return "\n".join(out) + "\n"


def write_trajectory(path, traj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_trajectory(traj))


def associate(gt, est, max_dt=DEFAULT_MAX_DT):
    """Match every estimate pose to its nearest ground-truth pose in time.

    A match is kept when the time gap is at most ``max_dt``. When two
    estimate poses pick the same ground-truth pose, the closer one wins and
    the other stays unmatched. Returns ``(gt_index, est_index)`` pairs
    sorted by time.
    """
    if max_dt <= 0:
        raise ValueError("max_dt must be positive")
    gt_t = np.asarray(gt.t)
    est_t = np.asarray(est.t)
    right = np.clip(np.searchsorted(gt_t, est_t), 0, len(gt_t) - 1)
    left = np.clip(right - 1, 0, len(gt_t) - 1)
    use_left = np.abs(gt_t[left] - est_t) <= np.abs(gt_t[right] - est_t)
    nearest = np.where(use_left, left, right)
    gap = np.abs(gt_t[nearest] - est_t)

    best = {}
    for j in np.flatnonzero(gap <= max_dt):
        i = int(nearest[j])
        if i not in best or gap[j] < gap[best[i]]:
            best[i] = int(j)
    if not best:
        raise AssociationError(f"zero pairs found within max_dt={max_dt}")
    return sorted(best.items(), key=lambda pair: est_t[pair[1]])


def finite_diff(traj):
    """Central-difference velocity and acceleration with local time steps.

    Interior samples use the three-point stencil for non-uniform spacing,
    exact on quadratic motion. Endpoints take the derivatives of the
    quadratic through the three nearest samples and are flagged one-sided.
    """
    t = np.asarray(traj.t)
    p = np.asarray(traj.p)
    n = len(t)
    if n < 3:
        raise TrajectoryError("finite differences need at least 3 samples")
    v = np.empty_like(p)
    a = np.empty_like(p)
    h1 = (t[1:-1] - t[:-2])[:, None]
    h2 = (t[2:] - t[1:-1])[:, None]
    d1 = (p[1:-1] - p[:-2]) / h1
    d2 = (p[2:] - p[1:-1]) / h2
    v[1:-1] = (h1 * d2 + h2 * d1) / (h1 + h2)
    a[1:-1] = 2.0 * (d2 - d1) / (h1 + h2)

    # endpoints: derivative of the interpolating quadratic
    a[0] = a[1]
    a[-1] = a[-2]
    v[0] = d1[0] - 0.5 * a[1] * h1[0]
    v[-1] = d2[-1] + 0.5 * a[-2] * h2[-1]

    one_sided = np.zeros(n, dtype=bool)
    one_sided[[0, -1]] = True
    return KinematicProfile(t=t.copy(), v=v, a=a, one_sided=one_sided)


def generate_square(side, velocity, sample_period=DEFAULT_SAMPLE_PERIOD, altitude=3.0, frame_id="world"):
    """Constant-speed closed square at fixed altitude and heading.

    The perimeter is cut into ``round(4 * side / (velocity * sample_period))``
    equal steps, so the step length equals ``velocity * sample_period`` when
    that divides the perimeter and is the nearest equal split otherwise.
    Samples start and end on the first corner ``(0, 0, altitude)``.
    """
    for name, val in (("side", side), ("velocity", velocity), ("sample_period", sample_period), ("altitude", altitude)):
        if not val > 0:
            raise ValueError(f"{name} must be positive")
    spacing = velocity * sample_period
    if spacing > side:
        raise ValueError(f"sample spacing {spacing} m exceeds the side length {side} m")
    perimeter = 4.0 * side
    steps = max(4, int(round(perimeter / spacing)))
    s = np.linspace(0.0, perimeter, steps + 1)
    corners = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side], [0.0, 0.0]])
    xy = np.column_stack(
        [np.interp(s, side * np.arange(5), corners[:, 0]), np.interp(s, side * np.arange(5), corners[:, 1])]
    )
    p = np.column_stack([xy, np.full(len(s), float(altitude))])
    t = sample_period * np.arange(len(s))
    return Trajectory(t, p, frame_id=frame_id)

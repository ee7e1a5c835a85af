"""Absolute trajectory error and relative pose error.

Per matched pair ``i`` with ground-truth pose ``Q_i`` and aligned estimate
``S P_i`` the trajectory error is ``F_i = Q_i^-1 S P_i``; ATE is the RMS of
its translation. RPE compares relative motions over a fixed interval:
``E_i = (Q_i^-1 Q_{i+k})^-1 (P_i^-1 P_{i+k})``, with ``k`` the interval in
samples, and is again reduced by RMS of the translation part.

Rotation parts are kept on every :class:`PoseError` but the headline numbers
use translation only. With ``lateral_only`` the z component of each
translation is dropped before taking the norm.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from vioflight import rotations
from vioflight.alignment import apply_alignment, compute_alignment, resolve_mode
from vioflight.trajectory import DEFAULT_MAX_DT, associate

DEFAULT_DELTA = 1.0


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class PoseError:
    rotation: np.ndarray
    translation: np.ndarray
    t: float


@dataclass
class MetricReport:
    ate: float
    rpe: float
    n_pairs: int
    delta: float
    lateral_only: bool
    per_sample_errors: np.ndarray
    align: str = "rigid"
    delta_samples: int = 0
    per_sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rpe_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rpe_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alignment: object = None

    CSV_HEADER = ("ate", "rpe", "n_pairs", "delta", "delta_samples", "lateral_only", "align")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        w.writerow(
            [repr(self.ate), repr(self.rpe), self.n_pairs, repr(self.delta), self.delta_samples,
             int(self.lateral_only), self.align]
        )
        return buf.getvalue()

    def per_sample_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("kind", "t", "error"))
        for t, e in zip(self.per_sample_times, self.per_sample_errors):
            w.writerow(("ate", repr(float(t)), repr(float(e))))
        for t, e in zip(self.rpe_times, self.rpe_errors):
            w.writerow(("rpe", repr(float(t)), repr(float(e))))
        return buf.getvalue()


def _relative(qa, pa, qb, pb):
    """Pose ``A^-1 B`` for stacked poses given as (quaternion, position)."""
    qa_inv = rotations.conjugate(qa)
    Ra_T = np.swapaxes(rotations.to_matrix(qa), -1, -2)
    q = rotations.multiply(qa_inv, qb)
    p = np.einsum("...ij,...j->...i", Ra_T, pb - pa)
    return q, p


def _to_errors(q, p, t):
    q = rotations.normalize(q)
    return [PoseError(rotation=q[i], translation=p[i], t=float(t[i])) for i in range(len(t))]


def _pair_index(pairs):
    if len(pairs) == 0:
        raise MetricError("no pose pairs")
    idx = np.asarray(pairs, dtype=int).reshape(-1, 2)
    return idx[:, 0], idx[:, 1]


def trajectory_errors(gt, est_aligned, pairs):
    """``F_i = Q_i^-1 (S P_i)`` for every pair; ``est_aligned`` already holds ``S P``."""
    gi, ei = _pair_index(pairs)
    q, p = _relative(gt.q[gi], gt.p[gi], est_aligned.q[ei], est_aligned.p[ei])
    return _to_errors(q, p, gt.t[gi])


def _translation_norms(errors, lateral_only):
    if len(errors) == 0:
        raise MetricError("empty error list")
    tr = np.array([e.translation for e in errors], dtype=float)
    if lateral_only:
        tr = tr[:, :2]
    return np.linalg.norm(tr, axis=1)


def rmse(values):
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(values**2)))


def ate(errors, lateral_only=False):
    return rmse(_translation_norms(errors, lateral_only))


def delta_to_samples(times, delta):
    """Convert an interval in seconds to a sample offset using the median spacing."""
    if not delta > 0:
        raise MetricError("delta must be positive")
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        raise MetricError("need at least two pairs to span an interval")
    step = float(np.median(np.diff(times)))
    return max(1, int(round(delta / step)))


def rpe_errors(gt, est, pairs, delta=DEFAULT_DELTA):
    """Local pose errors over an interval of ``delta`` seconds."""
    gi, ei = _pair_index(pairs)
    n = len(gi)
    k = delta_to_samples(gt.t[gi], delta)
    if k >= n:
        raise MetricError(f"trajectory spans {n} pairs, shorter than the interval of {k} samples")
    q_gt, p_gt = _relative(gt.q[gi[:-k]], gt.p[gi[:-k]], gt.q[gi[k:]], gt.p[gi[k:]])
    q_est, p_est = _relative(est.q[ei[:-k]], est.p[ei[:-k]], est.q[ei[k:]], est.p[ei[k:]])
    q, p = _relative(q_gt, p_gt, q_est, p_est)
    return _to_errors(q, p, gt.t[gi[:-k]])


def rpe(errors, lateral_only=False):
    return rmse(_translation_norms(errors, lateral_only))


def evaluate(gt, est, align="rigid", delta=DEFAULT_DELTA, lateral_only=True, max_dt=DEFAULT_MAX_DT):
    """Associate, align, and compute ATE and RPE in one call."""
    align = resolve_mode(align)
    pairs = associate(gt, est, max_dt)
    gi, ei = _pair_index(pairs)
    S = compute_alignment(gt.p[gi], est.p[ei], align)
    est_aligned = apply_alignment(S, est)

    f_err = trajectory_errors(gt, est_aligned, pairs)
    e_err = rpe_errors(gt, est_aligned, pairs, delta)
    ate_norms = _translation_norms(f_err, lateral_only)
    rpe_norms = _translation_norms(e_err, lateral_only)
    return MetricReport(
        ate=rmse(ate_norms),
        rpe=rmse(rpe_norms),
        n_pairs=len(pairs),
        delta=float(delta),
        lateral_only=bool(lateral_only),
        per_sample_errors=ate_norms,
        align=align,
        delta_samples=delta_to_samples(gt.t[gi], delta),
        per_sample_times=np.array([e.t for e in f_err]),
        rpe_errors=rpe_norms,
        rpe_times=np.array([e.t for e in e_err]),
        alignment=S,
    )

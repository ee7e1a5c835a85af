"""Ground-footprint geometry of a pitched pinhole camera.

Quantifies two things that drive feature tracking on a flying camera:
how much of the ground seen in one frame is still visible in the next
(``frame_overlap``) and how far a ground feature moves in the image between
frames (``pixel_displacement``).

World frame: x forward (direction of flight), y left, z up; the ground
plane is ``z = -altitude`` relative to the camera. Pitch is measured down
from the horizon, so 0 is forward-looking and 90 is nadir.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
from shapely import affinity
from shapely.geometry import Polygon


class OpenFootprintError(ValueError):
    """The requested ray or footprint does not intersect the ground."""


@dataclass(frozen=True)
class CameraModel:
    pitch: float = 90.0
    hfov: float = 91.2
    vfov: float = None
    width: int = 640
    height: int = 360
    fps: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.pitch <= 90.0:
            raise ValueError("pitch must be within [0, 90] degrees")
        if self.vfov is None:
            # square pixels: same focal length on both axes
            vfov = 2.0 * math.degrees(math.atan((self.height / 2.0) / self.focal_length))
            object.__setattr__(self, "vfov", vfov)
        for name in ("hfov", "vfov"):
            if not 0.0 < getattr(self, name) < 180.0:
                raise ValueError(f"{name} must be within (0, 180) degrees")
        if self.width <= 0 or self.height <= 0 or not self.fps > 0:
            raise ValueError("resolution and fps must be positive")

    @property
    def focal_length(self):
        """Horizontal focal length in pixels."""
        return (self.width / 2.0) / math.tan(math.radians(self.hfov) / 2.0)


@dataclass(frozen=True)
class FlightCondition:
    altitude: float = 3.0
    velocity: float = 5.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")


@dataclass(frozen=True)
class Footprint:
    corners: np.ndarray  # (4, 2) ground xy, or None when open
    closed: bool

    @property
    def polygon(self):
        if not self.closed:
            raise OpenFootprintError("footprint is unbounded (horizon in view)")
        return Polygon(self.corners)

    @property
    def area(self):
        return self.polygon.area


def _camera_to_world(pitch_deg):
    """Columns: camera right, down, forward (optical axis) in world coordinates."""
    th = math.radians(pitch_deg)
    forward = np.array([math.cos(th), 0.0, -math.sin(th)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def _corner_rays(cam):
    tx = math.tan(math.radians(cam.hfov) / 2.0)
    ty = math.tan(math.radians(cam.vfov) / 2.0)
    # image corners in image order: top-left, top-right, bottom-right, bottom-left
    cam_rays = np.array([[-tx, -ty, 1.0], [tx, -ty, 1.0], [tx, ty, 1.0], [-tx, ty, 1.0]])
    return cam_rays @ _camera_to_world(cam.pitch).T


def _hit_ground(ray, altitude):
    if ray[2] >= -1e-12:
        return None
    lam = altitude / -ray[2]
    return lam * ray


def ground_footprint(cam, cond):
    """Intersect the four corner rays with the ground plane."""
    pts = []
    for ray in _corner_rays(cam):
        hit = _hit_ground(ray, cond.altitude)
        if hit is None:
            return Footprint(corners=None, closed=False)
        pts.append(hit[:2])
    return Footprint(corners=np.array(pts), closed=True)


def frame_overlap(cam, cond):
    """Area fraction of a footprint still covered one frame later.

    The next footprint is the current one shifted by ``velocity / fps``
    along the flight direction and rotated by ``yaw_rate / fps`` about its
    centroid.
    """
    fp = ground_footprint(cam, cond)
    poly = fp.polygon
    shift = cond.velocity / cam.fps
    turn = math.degrees(cond.yaw_rate / cam.fps)
    moved = affinity.translate(poly, xoff=shift)
    if turn:
        moved = affinity.rotate(moved, turn, origin="centroid")
    return float(poly.intersection(moved).area / poly.area)


def pixel_displacement(cam, cond):
    """Image motion of a ground feature per frame, in pixels.

    Uses ``f * d / r`` with ``d = velocity / fps`` the ground travel per
    frame and ``r`` the range along the optical axis to the ground, which is
    the altitude at nadir.
    """
    axis = _camera_to_world(cam.pitch)[:, 2]
    hit = _hit_ground(axis, cond.altitude)
    if hit is None:
        raise OpenFootprintError(f"optical axis at pitch {cam.pitch} deg does not reach the ground")
    rng = float(np.linalg.norm(hit))
    d = cond.velocity / cam.fps
    return cam.focal_length * d / rng


SWEEP_HEADER = (
    "pitch_deg", "fps", "velocity", "altitude", "yaw_rate", "focal_px", "closed", "footprint_area", "overlap",
    "px_per_frame",
)


def sweep(pitches, fps_values, velocities, altitude=3.0, yaw_rate=0.0, hfov=91.2, vfov=None, width=640, height=360):
    """Cross-product sweep rows in pitch, fps, velocity order.

    Overlap and area are ``None`` where the footprint is open; the pixel
    displacement is ``None`` when the optical axis misses the ground.
    """
    for v in velocities:
        if v < 0:
            raise ValueError("velocity must be non-negative")
    rows = []
    for pitch, fps, v in itertools.product(pitches, fps_values, velocities):
        cam = CameraModel(pitch=pitch, hfov=hfov, vfov=vfov, width=width, height=height, fps=fps)
        cond = FlightCondition(altitude=altitude, velocity=v, yaw_rate=yaw_rate)
        fp = ground_footprint(cam, cond)
        area = overlap = px = None
        if fp.closed:
            area = fp.area
            overlap = frame_overlap(cam, cond)
        try:
            px = pixel_displacement(cam, cond)
        except OpenFootprintError:
            pass
        rows.append(
            dict(pitch_deg=pitch, fps=fps, velocity=v, altitude=altitude, yaw_rate=yaw_rate,
                 focal_px=cam.focal_length, closed=int(fp.closed), footprint_area=area, overlap=overlap,
                 px_per_frame=px)
        )
    return rows


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in rows:
        w.writerow(["" if row[k] is None else repr(float(row[k])) if isinstance(row[k], float) else row[k]
                    for k in SWEEP_HEADER])
    return buf.getvalue()

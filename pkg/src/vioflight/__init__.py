"""Evaluation, shaping and closed-loop simulation tools for VIO-driven UAV flight."""

from vioflight.alignment import AlignmentTransform, apply_alignment, compute_alignment
from vioflight.metrics import MetricReport, evaluate
from vioflight.shaping import MotionConstraints, ShapingReport, shape_trajectory
from vioflight.trajectory import Trajectory, associate, finite_diff, generate_square, read_trajectory, write_trajectory

__version__ = "0.1.0"

__all__ = [
    "AlignmentTransform",
    "MetricReport",
    "MotionConstraints",
    "ShapingReport",
    "Trajectory",
    "apply_alignment",
    "associate",
    "compute_alignment",
    "evaluate",
    "finite_diff",
    "generate_square",
    "read_trajectory",
    "shape_trajectory",
    "write_trajectory",
]

"""Coverage and proximity objectives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import CameraView, contains_points
from .robot import MotionEnvelope, TargetPointSet


@dataclass(frozen=True)
class ObjectiveVector:
    coverage: float
    distance: float

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")
        if not (self.distance >= 0.0 and np.isfinite(self.distance)):
            raise ValueError("distance must be finite and non-negative")

    def minimized(self) -> tuple[float, float]:
        """Both objectives oriented for minimization."""
        return -self.coverage, self.distance


def coverage_mask(views: Sequence[CameraView], points: np.ndarray) -> np.ndarray:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    covered = np.zeros(len(P), dtype=bool)
    for v in views:
        covered |= contains_points(v, P)
    return covered


def coverage(views: Sequence[CameraView], envelope: MotionEnvelope | np.ndarray) -> float:
    """Fraction of envelope points inside at least one frustum."""
    P = envelope.points if isinstance(envelope, MotionEnvelope) else np.asarray(envelope)
    if len(P) == 0:
        raise ValueError("empty envelope")
    return int(coverage_mask(views, P).sum()) / len(P)


def centroid(points: np.ndarray) -> np.ndarray:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise ValueError("centroid of an empty point set")
    return P.mean(axis=0)


def view_distances_pick(views: Sequence[CameraView], envelope: MotionEnvelope) -> np.ndarray:
    c = centroid(envelope.points)
    return np.array([float(np.linalg.norm(c - v.position)) for v in views])


def view_distances_place(views: Sequence[CameraView], targets: TargetPointSet) -> np.ndarray:
    """Per-view mean over states of the object-centroid distance."""
    cents = targets.centroids
    return np.array([float(np.mean(np.linalg.norm(cents - v.position, axis=1))) for v in views])


def distance_pick(views: Sequence[CameraView], envelope: MotionEnvelope) -> float:
    if not views:
        raise ValueError("need at least one view")
    return float(np.mean(view_distances_pick(views, envelope)))


def distance_place(views: Sequence[CameraView], targets: TargetPointSet) -> float:
    if not views:
        raise ValueError("need at least one view")
    return float(np.mean(view_distances_place(views, targets)))

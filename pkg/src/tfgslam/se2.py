"""SE(2) pose primitives shared by the estimator, planner, and simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - theta) % TWO_PI


@dataclass(frozen=True)
class Pose2:
    """A planar pose (x, y, heading); heading is stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @staticmethod
    def from_array(v: np.ndarray) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def pose_compose(a: Pose2, b: Pose2) -> Pose2:
    """Return a + b with b expressed in a's frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def pose_inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), -a.theta)


def pose_between(a: Pose2, b: Pose2) -> Pose2:
    """Return the relative pose of b expressed in a's frame, so a + result == b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def point_in_robot_frame(x: Pose2, p: np.ndarray) -> np.ndarray:
    """Project a world point into the frame of pose x."""
    c, s = math.cos(x.theta), math.sin(x.theta)
    dx, dy = p[0] - x.x, p[1] - x.y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def point_to_world(x: Pose2, p_local: np.ndarray) -> np.ndarray:
    """Inverse of point_in_robot_frame."""
    c, s = math.cos(x.theta), math.sin(x.theta)
    return np.array(
        [x.x + c * p_local[0] - s * p_local[1], x.y + s * p_local[0] + c * p_local[1]]
    )


def compose_jacobians(a: Pose2, b: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of pose_compose(a, b) with respect to a and b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    ja = np.array(
        [
            [1.0, 0.0, -s * b.x - c * b.y],
            [0.0, 1.0, c * b.x - s * b.y],
            [0.0, 0.0, 1.0],
        ]
    )
    jb = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return ja, jb

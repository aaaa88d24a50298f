"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the library's own solve/assembly paths:
dense least squares goes through scipy.optimize, Jacobians through central
finite differences, and covariances through plain Monte-Carlo statistics.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.optimize

from tfgslam.factor_graph import (
    FactorGraph,
    GraphEstimate,
    LandmarkPrior,
    MarginalInfo,
    Measurement,
    Odometry,
    PosePrior,
    factor_blocks,
    marginal_landmark_info,
    assemble_information,
)
from tfgslam.se2 import Pose2, point_in_robot_frame, pose_between, wrap_angle
from tfgslam.tfg import TopologicalFeatureGraph
from tfgslam.factor_graph import LandmarkEstimate


def random_pose(rng: np.random.Generator, scale: float = 5.0) -> Pose2:
    return Pose2(
        rng.uniform(-scale, scale),
        rng.uniform(-scale, scale),
        rng.uniform(-math.pi, math.pi),
    )


def finite_difference_jacobian(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of fn at x."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x))
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        hi = np.zeros_like(x)
        hi[i] = h
        jac[:, i] = (np.asarray(fn(x + hi)) - np.asarray(fn(x - hi))) / (2 * h)
    return jac


def whitened_residual_stack(graph: FactorGraph):
    """Residual function over a flat vector, for scipy least-squares oracles.

    Variable packing: landmarks in sorted-id order (2 each), then poses in
    insertion order (3 each).  Residuals are whitened with the Cholesky
    factor of each factor's information so that 0.5*||f(x)||^2 matches the
    graph cost.
    """
    keys = graph.variable_keys()

    def unpack(x: np.ndarray) -> GraphEstimate:
        est = GraphEstimate()
        offset = 0
        for kind, vid in keys:
            if kind == "l":
                est.landmarks[vid] = x[offset : offset + 2].copy()
                offset += 2
            else:
                est.poses[vid] = Pose2(x[offset], x[offset + 1], x[offset + 2])
                offset += 3
        return est

    def pack(est: GraphEstimate) -> np.ndarray:
        parts = []
        for kind, vid in keys:
            if kind == "l":
                parts.append(est.landmarks[vid])
            else:
                p = est.poses[vid]
                parts.append(np.array([p.x, p.y, p.theta]))
        return np.concatenate(parts)

    def residuals(x: np.ndarray) -> np.ndarray:
        est = unpack(x)
        parts = []
        for f in graph.factors:
            r, omega, _ = factor_blocks(f, est)
            parts.append(np.linalg.cholesky(omega).T @ r)
        return np.concatenate(parts)

    return residuals, pack, unpack


def scipy_map_oracle(graph: FactorGraph, initial: GraphEstimate) -> GraphEstimate:
    """Independent dense MAP solve via scipy.optimize.least_squares."""
    residuals, pack, unpack = whitened_residual_stack(graph)
    sol = scipy.optimize.least_squares(
        residuals, pack(initial), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    return unpack(sol.x)


def dense_normal_equations_oracle(
    graph: FactorGraph, initial: GraphEstimate, iterations: int = 200
) -> GraphEstimate:
    """Brute-force MAP oracle: dense normal equations with FD Jacobians,
    iterated until the step reaches machine precision."""
    residuals, pack, unpack = whitened_residual_stack(graph)
    x = pack(initial)
    for _ in range(iterations):
        jac = finite_difference_jacobian(residuals, x)
        r = residuals(x)
        step = np.linalg.solve(jac.T @ jac, -(jac.T @ r))
        x = x + step
        if np.linalg.norm(step) < 1e-14:
            break
    return unpack(x)


def make_noiseless_world(
    rng: np.random.Generator, n_poses: int = 5, n_landmarks: int = 6
):
    """Ground truth poses/landmarks with exact odometry and measurements."""
    truth_poses = [Pose2(0.0, 0.0, 0.0)]
    for _ in range(n_poses - 1):
        step = Pose2(rng.uniform(0.4, 1.2), rng.uniform(-0.3, 0.3), rng.uniform(-0.6, 0.6))
        prev = truth_poses[-1]
        truth_poses.append(
            Pose2(
                prev.x + math.cos(prev.theta) * step.x - math.sin(prev.theta) * step.y,
                prev.y + math.sin(prev.theta) * step.x + math.cos(prev.theta) * step.y,
                prev.theta + step.theta,
            )
        )
    truth_landmarks = {
        lid: np.array([rng.uniform(-2.0, 5.0), rng.uniform(-2.0, 5.0)])
        for lid in range(n_landmarks)
    }
    return truth_poses, truth_landmarks


def build_noiseless_graph(
    truth_poses, truth_landmarks, info_scale: float = 1e4
) -> FactorGraph:
    """Graph whose factors carry exact data generated from the truth."""
    graph = FactorGraph()
    for pid, pose in enumerate(truth_poses):
        graph.add_pose(pid, pose)
    for lid, pos in truth_landmarks.items():
        graph.add_landmark(lid, pos)
    graph.add_factor(PosePrior(0, truth_poses[0], info_scale * np.eye(3)))
    for pid in range(len(truth_poses) - 1):
        delta = pose_between(truth_poses[pid], truth_poses[pid + 1])
        graph.add_factor(Odometry(pid, pid + 1, delta, info_scale * np.eye(3)))
    for pid, pose in enumerate(truth_poses):
        for lid, pos in truth_landmarks.items():
            z = point_in_robot_frame(pose, pos)
            graph.add_factor(Measurement(pid, lid, z, info_scale * np.eye(2)))
    return graph


def u_room_tfg(observed_var: float = 0.01) -> TopologicalFeatureGraph:
    """A U-shaped mapped room, open on the right between (8,0) and (8,6).

    Walls carry features at 1 m spacing with chained surface edges; the
    marginal is block diagonal with the given per-landmark variance.  The
    opening is the only frontier, so candidates near x=8 trade exploitation
    against exploration while candidates deep inside the U see the most
    mapped features.
    """
    points: list[tuple[float, float]] = []
    for y in range(6, -1, -1):  # left wall, top to bottom
        points.append((0.0, float(y)))
    for x in range(1, 9):  # bottom wall
        points.append((float(x), 0.0))
    chain_a = list(range(len(points)))
    top = [(float(x), 6.0) for x in range(1, 9)]
    chain_b = [0] + list(range(len(points), len(points) + len(top)))
    points.extend(top)

    landmarks = {i: LandmarkEstimate(i, np.array(p)) for i, p in enumerate(points)}
    from tfgslam.tfg import SurfaceEdge

    edges = [SurfaceEdge(a, b) for a, b in zip(chain_a, chain_a[1:])]
    edges += [SurfaceEdge(a, b) for a, b in zip(chain_b, chain_b[1:])]
    order = sorted(landmarks)
    lam = (1.0 / observed_var) * np.eye(2 * len(order))
    marginal = MarginalInfo(order, lam)
    return TopologicalFeatureGraph(landmarks, edges, marginal, {})


def random_scene(
    rng: np.random.Generator,
    n_landmarks: int = 6,
    n_poses: int = 3,
    meas_sigma: float = 0.05,
    odo_sigma: float = 0.02,
    prior_var: float = 100.0,
):
    """A solved random scene: noisy graph at its MAP plus the matching map.

    Returns (graph, tfg) with the graph estimates set to the MAP and the
    map carrying the landmark marginal at that linearization.
    """
    from tfgslam.factor_graph import map_solve

    truth_poses = [random_pose(rng, 2.0) for _ in range(n_poses)]
    truth_landmarks = {
        lid: np.array([rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)])
        for lid in range(n_landmarks)
    }
    graph = FactorGraph()
    for pid, pose in enumerate(truth_poses):
        graph.add_pose(pid, pose)
    for lid, pos in truth_landmarks.items():
        graph.add_landmark(lid, pos)
    graph.add_factor(PosePrior(0, truth_poses[0], 1e4 * np.eye(3)))
    odo_info = np.diag([1 / odo_sigma**2, 1 / odo_sigma**2, 1 / (2 * odo_sigma) ** 2])
    for pid in range(n_poses - 1):
        delta = pose_between(truth_poses[pid], truth_poses[pid + 1])
        noisy = Pose2(
            delta.x + rng.normal(0, odo_sigma),
            delta.y + rng.normal(0, odo_sigma),
            delta.theta + rng.normal(0, 2 * odo_sigma),
        )
        graph.add_factor(Odometry(pid, pid + 1, noisy, odo_info))
    meas_info = (1 / meas_sigma**2) * np.eye(2)
    prior_info = (1 / prior_var) * np.eye(2)
    for lid, pos in truth_landmarks.items():
        graph.add_factor(LandmarkPrior(lid, pos, prior_info))
        for pid, pose in enumerate(truth_poses):
            z = point_in_robot_frame(pose, pos) + rng.normal(0, meas_sigma, size=2)
            graph.add_factor(Measurement(pid, lid, z, meas_info))
    solved = map_solve(graph)
    graph.set_estimate(solved.estimate)
    marginal = marginal_landmark_info(assemble_information(graph, solved.estimate))
    landmarks = {
        lid: LandmarkEstimate(lid, solved.estimate.landmarks[lid]) for lid in truth_landmarks
    }
    tfg = TopologicalFeatureGraph(landmarks, [], marginal, {})
    return graph, tfg

"""Scenario files: world geometry, noise, sensing, and run budgets in YAML.

A scenario fully determines a benchmark run up to the seed.  Covariances may
be given as full matrices or as diagonal shorthand; an optional partial_map
section supplies a prebuilt map (landmarks with marginal variances plus
surface edges) for information-map scoring without running the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ScenarioParseError
from .factor_graph import LandmarkEstimate, MarginalInfo
from .info_gain import ExplorationPrior, SensorSpec
from .planner import RoadmapParams
from .se2 import Pose2
from .sim import NoiseModel, SimConfig, WorldModel, place_boundary_landmarks
from .tfg import SurfaceEdge, TopologicalFeatureGraph


@dataclass
class Scenario:
    name: str
    world: WorldModel
    config: SimConfig  # seed placeholder; use config.with_seed(seed) per run
    partial_map: TopologicalFeatureGraph | None = None
    infomap_viewheight: float | None = None


def _matrix(value, dim: int, what: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{what}: not numeric") from exc
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1 and arr.shape == (dim,):
        return np.diag(arr)
    if arr.shape == (dim, dim):
        return arr
    raise ScenarioParseError(f"{what}: expected scalar, {dim}-vector, or {dim}x{dim} matrix")


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioParseError(f"{where}: missing required key {key!r}")
    return mapping[key]


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioParseError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path}: scenario must be a mapping")
    return parse_scenario(data, name=data.get("name", path.stem))


def parse_scenario(data: dict, name: str = "scenario") -> Scenario:
    try:
        bounds = tuple(float(v) for v in _require(data, "bounds", name))
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{name}: bad bounds") from exc
    if len(bounds) != 4 or bounds[0] >= bounds[2] or bounds[1] >= bounds[3]:
        raise ScenarioParseError(f"{name}: bounds must be (xmin, ymin, xmax, ymax)")

    polygons = [np.asarray(p, dtype=float) for p in data.get("polygons", [])]
    for p in polygons:
        if p.ndim != 2 or p.shape[1] != 2:
            raise ScenarioParseError(f"{name}: polygons must be lists of [x, y] vertices")

    if "landmarks" in data:
        landmarks = {
            int(item[0]): np.array([float(item[1]), float(item[2])])
            for item in data["landmarks"]
        }
    else:
        spacing = float(data.get("landmark_spacing", 1.0))
        landmarks = place_boundary_landmarks(polygons, spacing)
    try:
        world = WorldModel(polygons, landmarks, bounds)
    except ValueError as exc:
        raise ScenarioParseError(f"{name}: {exc}") from exc

    start_raw = data.get("start", [0.0, 0.0, 0.0])
    if len(start_raw) != 3:
        raise ScenarioParseError(f"{name}: start must be [x, y, theta]")
    start = Pose2(*map(float, start_raw))

    sensor = data.get("sensor", {})
    rng_ = float(sensor.get("range", 10.0))
    if "fov_deg" in sensor:
        fov = math.radians(float(sensor["fov_deg"]))
    else:
        fov = float(sensor.get("fov", math.radians(124.0)))

    r_cov = _matrix(data.get("measurement_noise", 0.0025), 2, f"{name}: measurement_noise")
    q_cov = _matrix(data.get("odometry_noise", [1e-4, 1e-4, 1e-5]), 3, f"{name}: odometry_noise")
    r_info = np.linalg.inv(r_cov) if np.min(np.linalg.eigvalsh(r_cov)) > 0 else np.linalg.inv(
        r_cov + 1e-8 * np.eye(2)
    )
    try:
        sensing = SensorSpec(rng_, fov, r_info)
    except ValueError as exc:
        raise ScenarioParseError(f"{name}: {exc}") from exc

    sigma_u = _matrix(data.get("sigma_u", 100.0), 2, f"{name}: sigma_u")
    density = float(data.get("new_landmark_density", 1.0))
    try:
        prior = ExplorationPrior(sigma_u, r_info, density)
    except ValueError as exc:
        raise ScenarioParseError(f"{name}: {exc}") from exc

    planner = data.get("planner", {})
    roadmap = RoadmapParams(
        bounds=bounds,
        n_samples=int(planner.get("n_samples", 30)),
        connect_radius=float(planner.get("connect_radius", rng_)),
        chance_delta=float(planner.get("delta", 0.05)),
        robot_radius=float(data.get("robot_radius", 0.2)),
        clearance_weight=float(planner.get("w_c", 1.0)),
        d_safe=planner.get("d_safe"),
        collision_samples=int(planner.get("collision_samples", 128)),
        cov_growth=float(planner.get("cov_growth", 1e-4)),
        max_path_length=float(planner.get("max_path_length", math.inf)),
        inflation=float(planner.get("inflation", 0.15)),
    )

    config = SimConfig(
        start=start,
        sensing=sensing,
        prior=prior,
        noise=NoiseModel(q_cov, r_cov, int(data.get("seed", 0))),
        roadmap=roadmap,
        stage_budget=int(data.get("stage_budget", 40)),
        gain_epsilon=float(data.get("gain_epsilon", 1e-3)),
        step_translation=float(data.get("step_translation", 0.25)),
        step_rotation=float(data.get("step_rotation", 0.2)),
    )

    partial = None
    if "partial_map" in data:
        partial = _parse_partial_map(data["partial_map"], name)

    return Scenario(name=name, world=world, config=config, partial_map=partial)


def _parse_partial_map(section: dict, name: str) -> TopologicalFeatureGraph:
    entries = _require(section, "landmarks", f"{name}.partial_map")
    landmarks: dict[int, LandmarkEstimate] = {}
    variances: dict[int, np.ndarray] = {}
    for item in entries:
        lid = int(item[0])
        landmarks[lid] = LandmarkEstimate(lid, np.array([float(item[1]), float(item[2])]))
        var = float(item[3]) if len(item) > 3 else 0.01
        if var <= 0:
            raise ScenarioParseError(f"{name}.partial_map: variance must be positive")
        variances[lid] = var * np.eye(2)
    edges = [SurfaceEdge(int(a), int(b)) for a, b in section.get("edges", [])]
    order = sorted(landmarks)
    lam = np.zeros((2 * len(order), 2 * len(order)))
    for i, lid in enumerate(order):
        lam[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = np.linalg.inv(variances[lid])
    try:
        return TopologicalFeatureGraph(landmarks, edges, MarginalInfo(order, lam), {})
    except Exception as exc:
        raise ScenarioParseError(f"{name}.partial_map: {exc}") from exc

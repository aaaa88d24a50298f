"""Deterministic 2D world simulator and the sequential goal-point loop.

The world is a set of simple polygons carrying uniquely identifiable point
features on their boundaries.  The robot follows planned polylines exactly
(the path-following controller is abstracted away); odometry and feature
measurements are corrupted by seeded Gaussian noise, so every run is a pure
function of (world, config, seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollisionWithTruth,
    NoFeasibleGoal,
    NoReachableCandidate,
    SamplingExhausted,
    Unreachable,
)
from .factor_graph import (
    FactorGraph,
    LandmarkEstimate,
    LandmarkPrior,
    Measurement,
    Odometry,
    PosePrior,
    assemble_information,
    landmark_entropy,
    logdet_psd,
    map_solve,
    marginal_landmark_info,
    compress_between_goals,
)
from .info_gain import CandidateGoal, ExplorationPrior, SensorSpec, score_candidates
from .planner import PlannedPath, RoadmapNode, RoadmapParams, build_roadmap, plan_next, sample_free, shortest_path
from .se2 import Pose2, point_in_robot_frame, point_to_world, pose_compose, wrap_angle
from .tfg import (
    TopologicalFeatureGraph,
    learn_edges,
    rays_hit_segments,
    segment_intersects,
    segment_to_segments_distance,
)

Bounds = tuple[float, float, float, float]
PolyEdgeKey = tuple[int, int]  # (polygon index, edge index)


def rect_polygon(xmin: float, ymin: float, xmax: float, ymax: float) -> np.ndarray:
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)


def _polygon_edges(poly: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    n = len(poly)
    return [(poly[i], poly[(i + 1) % n]) for i in range(n)]


def _check_simple(poly: np.ndarray) -> None:
    edges = _polygon_edges(poly)
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex
            if segment_intersects(edges[i], edges[j]):
                raise ValueError(f"polygon is self-intersecting at edges {i} and {j}")


@dataclass
class WorldModel:
    """Ground truth: polygonal obstacles with boundary features."""

    obstacles: list[np.ndarray]
    true_landmarks: dict[int, np.ndarray]
    bounds: Bounds

    def __post_init__(self) -> None:
        self.obstacles = [np.asarray(p, dtype=float) for p in self.obstacles]
        for poly in self.obstacles:
            if len(poly) < 3:
                raise ValueError("polygons need at least three vertices")
            _check_simple(poly)
        self.true_landmarks = {
            lid: np.asarray(p, dtype=float) for lid, p in self.true_landmarks.items()
        }
        self._edge_segments: dict[PolyEdgeKey, tuple[np.ndarray, np.ndarray]] = {}
        for pi, poly in enumerate(self.obstacles):
            for ei, seg in enumerate(_polygon_edges(poly)):
                self._edge_segments[(pi, ei)] = seg
        self._landmark_edges: dict[int, set[PolyEdgeKey]] = {}
        for lid, p in self.true_landmarks.items():
            keys = {
                key
                for key, seg in self._edge_segments.items()
                if _point_segment_distance(p, seg) <= 1e-7
            }
            if not keys:
                raise ValueError(f"landmark {lid} does not lie on any polygon boundary")
            self._landmark_edges[lid] = keys
        self._edge_landmarks: dict[PolyEdgeKey, list[int]] = {}
        for key, seg in self._edge_segments.items():
            a, b = seg
            ab = b - a
            denom = float(ab @ ab)
            members = [
                (float((self.true_landmarks[lid] - a) @ ab) / denom, lid)
                for lid in sorted(self.true_landmarks)
                if key in self._landmark_edges[lid]
            ]
            members.sort()
            self._edge_landmarks[key] = [lid for _, lid in members]
        # batch arrays for vectorized occlusion queries
        self._edge_keys = list(self._edge_segments)
        if self._edge_keys:
            self._seg_a = np.array([self._edge_segments[k][0] for k in self._edge_keys])
            self._seg_b = np.array([self._edge_segments[k][1] for k in self._edge_keys])
        else:
            self._seg_a = np.zeros((0, 2))
            self._seg_b = np.zeros((0, 2))
        key_index = {k: i for i, k in enumerate(self._edge_keys)}
        self._lm_ids = sorted(self.true_landmarks)
        self._lm_pos = (
            np.array([self.true_landmarks[lid] for lid in self._lm_ids])
            if self._lm_ids
            else np.zeros((0, 2))
        )
        self._own_mask = np.zeros((len(self._lm_ids), len(self._edge_keys)), dtype=bool)
        for i, lid in enumerate(self._lm_ids):
            for k in self._landmark_edges[lid]:
                self._own_mask[i, key_index[k]] = True

    def edge_segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(self._edge_segments.values())

    def landmark_on_edges(self, lid: int) -> set[PolyEdgeKey]:
        return self._landmark_edges[lid]


def place_boundary_landmarks(
    obstacles: list[np.ndarray], spacing: float
) -> dict[int, np.ndarray]:
    """Features along every polygon edge at roughly the given spacing.

    Every vertex carries a feature so that wall chains continue around
    corners; interior points are spaced evenly along each edge.
    """
    points: list[np.ndarray] = []
    for poly in obstacles:
        for a, b in _polygon_edges(np.asarray(poly, dtype=float)):
            length = float(np.linalg.norm(b - a))
            n = max(1, int(round(length / spacing)))
            for t in np.linspace(0.0, 1.0, n + 1):
                points.append(a + t * (b - a))
    out: dict[int, np.ndarray] = {}
    for p in points:
        if any(np.linalg.norm(p - q) <= 1e-9 for q in out.values()):
            continue
        out[len(out)] = p
    return out


def _point_segment_distance(p: np.ndarray, seg) -> float:
    a, b = seg
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


@dataclass(frozen=True)
class NoiseModel:
    """Per-step odometry covariance, measurement covariance, and the run seed."""

    q: np.ndarray
    r: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", _check_cov(self.q, 3, "odometry covariance"))
        object.__setattr__(self, "r", _check_cov(self.r, 2, "measurement covariance"))


def _check_cov(m: np.ndarray, dim: int, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (dim, dim):
        raise ValueError(f"{what} must be {dim}x{dim}")
    if not np.allclose(m, m.T, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{what} must be symmetric")
    if np.min(np.linalg.eigvalsh(m)) < -1e-12:
        raise ValueError(f"{what} must be positive semidefinite")
    return 0.5 * (m + m.T)


def _cov_sqrt(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def information_from_covariance(cov: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Invert a covariance, regularizing exactly singular ones with a floor."""
    cov = np.asarray(cov, dtype=float)
    try:
        np.linalg.cholesky(cov)
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        return np.linalg.inv(cov + floor * np.eye(cov.shape[0]))


# -- motion and sensing ---------------------------------------------------------


def step_motion(
    x_true: Pose2,
    delta: Pose2,
    noise: NoiseModel,
    rng: np.random.Generator,
    world: WorldModel | None = None,
    robot_radius: float = 0.0,
) -> tuple[Pose2, Pose2]:
    """Advance the true pose by the commanded delta; report noisy odometry.

    The true pose follows the command exactly; the reported odometry is the
    command plus a draw from the odometry noise.  Raises CollisionWithTruth
    when the true motion segment passes within the robot radius of a true
    obstacle edge, which signals a planner failure.
    """
    new_true = pose_compose(x_true, delta)
    if world is not None and world._seg_a.shape[0]:
        d = segment_to_segments_distance(x_true.xy, new_true.xy, world._seg_a, world._seg_b)
        dmin = float(d.min())
        if dmin < robot_radius or dmin == 0.0:
            raise CollisionWithTruth(
                f"true motion from ({x_true.x:.3f},{x_true.y:.3f}) hit an obstacle"
            )
    v = _cov_sqrt(noise.q) @ rng.standard_normal(3)
    odometry = Pose2(delta.x + v[0], delta.y + v[1], delta.theta + v[2])
    return new_true, odometry


def sense(
    x_true: Pose2,
    world: WorldModel,
    sensing: SensorSpec,
    noise: NoiseModel,
    full_rotation: bool,
    rng: np.random.Generator,
) -> tuple[list[tuple[int, np.ndarray]], list[tuple[int, int]]]:
    """Noisy robot-frame feature measurements plus the segmented scan.

    The scan groups visible features by the polygon edge they lie on; a
    feature hidden inside a run splits the component, so only features that
    are mutually adjacent among the visible ones share a component id.
    """
    fov = 2.0 * math.pi if full_rotation else sensing.fov
    eye = x_true.xy
    visible: list[int] = []
    if world._lm_ids:
        offs = world._lm_pos - eye
        dist = np.linalg.norm(offs, axis=1)
        keep = (dist <= sensing.range) & (dist > 0.0)
        if fov < 2.0 * math.pi - 1e-12:
            bearings = np.arctan2(offs[:, 1], offs[:, 0]) - x_true.theta
            bearings = (bearings + math.pi) % (2.0 * math.pi) - math.pi
            keep &= np.abs(bearings) <= fov / 2.0 + 1e-12
        idx = np.nonzero(keep)[0]
        if idx.size:
            tips = eye + offs[idx] * (1.0 - 1e-9)
            hits = rays_hit_segments(eye, tips, world._seg_a, world._seg_b)
            hits[world._own_mask[idx]] = False
            visible = [world._lm_ids[i] for i, ok in zip(idx, ~hits.any(axis=1)) if ok]

    chol_r = _cov_sqrt(noise.r)
    measurements = [
        (lid, point_in_robot_frame(x_true, world.true_landmarks[lid]) + chol_r @ rng.standard_normal(2))
        for lid in visible
    ]

    visible_set_ = set(visible)
    scan: list[tuple[int, int]] = []
    component = 0
    for key in sorted(world._edge_landmarks):
        run: list[int] = []
        for lid in world._edge_landmarks[key]:
            if lid in visible_set_:
                run.append(lid)
            else:
                component += _flush_run(scan, run, component)
                run = []
        component += _flush_run(scan, run, component)
    return measurements, scan


def _flush_run(scan: list[tuple[int, int]], run: list[int], component: int) -> int:
    if not run:
        return 0
    scan.extend((component, lid) for lid in run)
    return 1


# -- the stage loop ---------------------------------------------------------------


@dataclass
class SimConfig:
    start: Pose2
    sensing: SensorSpec
    prior: ExplorationPrior
    noise: NoiseModel
    roadmap: RoadmapParams
    stage_budget: int = 40
    gain_epsilon: float = 1e-3
    step_translation: float = 0.25
    step_rotation: float = 0.2
    pose_prior_information: np.ndarray = field(
        default_factory=lambda: np.diag([1e6, 1e6, 1e6])
    )

    def with_seed(self, seed: int) -> "SimConfig":
        noise = NoiseModel(self.noise.q, self.noise.r, seed)
        return SimConfig(
            start=self.start,
            sensing=self.sensing,
            prior=self.prior,
            noise=noise,
            roadmap=self.roadmap,
            stage_budget=self.stage_budget,
            gain_epsilon=self.gain_epsilon,
            step_translation=self.step_translation,
            step_rotation=self.step_rotation,
            pose_prior_information=self.pose_prior_information,
        )


@dataclass
class StageRecord:
    stage: int
    goal: Pose2
    path: PlannedPath | None
    entropy_before: float
    entropy_after: float
    coverage: float
    position_error: float
    dr_error: float
    distance_travelled: float
    observed_ids: tuple[int, ...]
    predicted_gain: float | None


@dataclass
class RunResult:
    records: list[StageRecord]
    graph: FactorGraph
    tfg: TopologicalFeatureGraph
    status: str  # budget_exhausted | gain_converged | frontier_exhausted
    roadmaps: list = field(default_factory=list)
    candidates: list = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return self.records[-1].coverage if self.records else 0.0

    @property
    def final_entropy(self) -> float:
        return self.records[-1].entropy_after if self.records else 0.0

    @property
    def position_rmse(self) -> float:
        errs = [r.position_error for r in self.records]
        return float(np.sqrt(np.mean(np.square(errs)))) if errs else 0.0

    @property
    def dead_reckoning_rmse(self) -> float:
        errs = [r.dr_error for r in self.records]
        return float(np.sqrt(np.mean(np.square(errs)))) if errs else 0.0

    @property
    def distance_travelled(self) -> float:
        return self.records[-1].distance_travelled if self.records else 0.0

    def landmark_rmse(self, world: WorldModel) -> float:
        errs = [
            float(np.linalg.norm(lm.position - world.true_landmarks[lid]))
            for lid, lm in self.graph.landmarks.items()
            if lid in world.true_landmarks
        ]
        return float(np.sqrt(np.mean(np.square(errs)))) if errs else 0.0


def unobserved_landmark_entropy(sigma_u: np.ndarray) -> float:
    """Entropy contribution (constant dropped) of one landmark under its prior."""
    return 0.5 * logdet_psd(np.asarray(sigma_u, dtype=float))


def library_entropy(marginal, total_landmarks: int, sigma_u: np.ndarray) -> float:
    """Map entropy over the full feature library.

    Observed landmarks contribute the marginal-information entropy; features
    never seen contribute their prior entropy, which keeps stage-to-stage
    values comparable as the map grows.
    """
    n_unseen = total_landmarks - len(marginal.landmark_order)
    return landmark_entropy(marginal) + n_unseen * unobserved_landmark_entropy(sigma_u)


def transit_commands(
    start: Pose2,
    waypoints: tuple[Pose2, ...],
    final_heading: float,
    max_translation: float,
    max_rotation: float,
) -> list[Pose2]:
    """Split a polyline into bounded rotate-then-translate step deltas."""
    deltas: list[Pose2] = []
    heading = start.theta
    position = start.xy
    targets = [w.xy for w in waypoints[1:]] if len(waypoints) > 1 else []
    for target in targets:
        offset = target - position
        dist = float(np.linalg.norm(offset))
        if dist < 1e-12:
            continue
        want = math.atan2(offset[1], offset[0])
        deltas.extend(_rotation_steps(heading, want, max_rotation))
        heading = want
        n = max(1, int(math.ceil(dist / max_translation)))
        deltas.extend(Pose2(dist / n, 0.0, 0.0) for _ in range(n))
        position = target
    deltas.extend(_rotation_steps(heading, final_heading, max_rotation))
    return deltas


def _rotation_steps(current: float, target: float, max_rotation: float) -> list[Pose2]:
    turn = wrap_angle(target - current)
    if abs(turn) < 1e-12:
        return []
    n = max(1, int(math.ceil(abs(turn) / max_rotation)))
    return [Pose2(0.0, 0.0, turn / n) for _ in range(n)]


def pose_position_covariance(info, pose_id: int) -> np.ndarray:
    """Marginal covariance of one pose's position from the assembled joint."""
    dense = info.matrix.toarray()
    cov = np.linalg.inv(dense)
    offset = info.landmark_dim + 3 * info.pose_order.index(pose_id)
    return cov[offset : offset + 2, offset : offset + 2]


def map_relative_position_covariance(info, pose_id: int, landmark_id: int) -> np.ndarray:
    """Covariance of the pose position relative to one landmark.

    Collision risk depends on where the robot is relative to the estimated
    walls, not relative to the world origin: common-mode drift moves the
    robot and its local map together.  cov(x - l) subtracts exactly that
    common mode out of the joint covariance.
    """
    dense = info.matrix.toarray()
    cov = np.linalg.inv(dense)
    px = info.landmark_dim + 3 * info.pose_order.index(pose_id)
    lx = 2 * info.landmark_order.index(landmark_id)
    c_xx = cov[px : px + 2, px : px + 2]
    c_ll = cov[lx : lx + 2, lx : lx + 2]
    c_xl = cov[px : px + 2, lx : lx + 2]
    rel = c_xx + c_ll - c_xl - c_xl.T
    return 0.5 * (rel + rel.T)


def run_active_slam(world: WorldModel, config: SimConfig) -> RunResult:
    """Sequential goal-point exploration driven by expected entropy reduction."""
    return _run_loop(world, config, policy="active_tfg")


def run_nearest_frontier(world: WorldModel, config: SimConfig) -> RunResult:
    """Baseline: go to the reachable sample nearest to any open-sided feature."""
    return _run_loop(world, config, policy="nearest_frontier")


def _run_loop(world: WorldModel, config: SimConfig, policy: str) -> RunResult:
    rng = np.random.default_rng(config.noise.seed)
    q_info = information_from_covariance(config.noise.q)
    r_info = information_from_covariance(config.noise.r)
    sigma_u_info = np.linalg.inv(config.prior.sigma_u)

    graph = FactorGraph()
    graph.add_pose(0, config.start)
    graph.add_factor(PosePrior(0, config.start, config.pose_prior_information))

    true_pose = config.start
    dr_pose = config.start
    tfg = TopologicalFeatureGraph({}, [])
    records: list[StageRecord] = []
    roadmaps: list = []
    candidate_log: list = []
    previous_goals: list[Pose2] = []
    prev_goal_pid: int | None = None
    cur_pid = 0
    next_pid = 1
    planned_goal = config.start
    path: PlannedPath | None = None
    distance = 0.0
    total = len(world.true_landmarks)
    status = "budget_exhausted"
    entropy_before = total * unobserved_landmark_entropy(config.prior.sigma_u)

    for stage in range(config.stage_budget):
        measurements, scan = sense(true_pose, world, config.sensing, config.noise, True, rng)
        est_here = graph.poses[cur_pid]
        for lid, z in measurements:
            if lid not in graph.landmarks:
                guess = point_to_world(est_here, z)
                graph.add_landmark(lid, guess)
                graph.add_factor(LandmarkPrior(lid, guess, sigma_u_info))
            graph.add_factor(Measurement(cur_pid, lid, z, r_info))
        if prev_goal_pid is not None:
            graph = compress_between_goals(graph, prev_goal_pid, cur_pid)

        solved = map_solve(graph)
        graph.set_estimate(solved.estimate)
        joint_info = assemble_information(graph, solved.estimate)
        marginal = marginal_landmark_info(joint_info)
        landmarks = {
            lid: LandmarkEstimate(lid, solved.estimate.landmarks[lid])
            for lid in graph.landmarks
        }
        tfg = learn_edges(tfg.with_landmarks(landmarks, marginal), scan)

        entropy_after = library_entropy(marginal, total, config.prior.sigma_u)
        est_pose = graph.poses[cur_pid]
        record = StageRecord(
            stage=stage,
            goal=planned_goal,
            path=path,
            entropy_before=entropy_before,
            entropy_after=entropy_after,
            coverage=len(graph.landmarks) / total if total else 1.0,
            position_error=float(np.linalg.norm(est_pose.xy - true_pose.xy)),
            dr_error=float(np.linalg.norm(dr_pose.xy - true_pose.xy)),
            distance_travelled=distance,
            observed_ids=tuple(lid for lid, _ in measurements),
            predicted_gain=None,
        )
        entropy_before = entropy_after

        if stage == config.stage_budget - 1:
            records.append(record)
            break

        if graph.landmarks:
            nearest_lid = min(
                graph.landmarks,
                key=lambda lid: (
                    float(np.linalg.norm(graph.landmarks[lid].position - est_pose.xy)),
                    lid,
                ),
            )
            base_cov = map_relative_position_covariance(joint_info, cur_pid, nearest_lid)
        else:
            base_cov = pose_position_covariance(joint_info, cur_pid)
        try:
            cand, path, roadmap, scored = _choose_goal(
                policy, tfg, est_pose, config, previous_goals, base_cov, stage
            )
        except (NoFeasibleGoal, NoReachableCandidate, SamplingExhausted, _NoFrontier):
            status = "frontier_exhausted"
            records.append(record)
            break
        roadmaps.append((stage, roadmap))
        candidate_log.append((stage, scored))
        record.predicted_gain = cand.total
        records.append(record)
        if policy == "active_tfg" and cand.total < config.gain_epsilon:
            status = "gain_converged"
            break

        deltas = transit_commands(
            est_pose, path.waypoints, cand.pose.theta, config.step_translation, config.step_rotation
        )
        previous_goals.append(est_pose)
        prev_goal_pid = cur_pid
        for delta in deltas:
            true_pose, odometry = step_motion(
                true_pose, delta, config.noise, rng, world, config.roadmap.robot_radius
            )
            dr_pose = pose_compose(dr_pose, odometry)
            distance += abs(delta.x)
            graph.add_pose(next_pid, pose_compose(graph.poses[cur_pid], odometry))
            graph.add_factor(Odometry(cur_pid, next_pid, odometry, q_info))
            transit_meas, _ = sense(true_pose, world, config.sensing, config.noise, False, rng)
            for lid, z in transit_meas:
                if lid in graph.landmarks:
                    graph.add_factor(Measurement(next_pid, lid, z, r_info, transient=True))
            cur_pid = next_pid
            next_pid += 1
        planned_goal = cand.pose

    return RunResult(records, graph, tfg, status, roadmaps, candidate_log)


class _NoFrontier(Exception):
    pass


def _choose_goal(
    policy: str,
    tfg: TopologicalFeatureGraph,
    current: Pose2,
    config: SimConfig,
    previous_goals: list[Pose2],
    base_cov: np.ndarray,
    stage: int,
):
    seed = [config.noise.seed, stage]
    if policy == "active_tfg":
        return plan_next(
            tfg,
            current,
            config.roadmap,
            config.sensing,
            config.prior,
            previous_goals=previous_goals,
            base_cov=base_cov,
            seed=seed,
        )
    if policy != "nearest_frontier":
        raise ValueError(f"unknown policy {policy!r}")

    open_ids = [lid for lid, flags in sorted(tfg.frontier_flags.items()) if any(flags)]
    if not open_ids:
        raise _NoFrontier
    anchors = list(previous_goals) + [current]
    samples = sample_free(
        tfg,
        config.roadmap.bounds,
        config.roadmap.n_samples,
        seed,
        config.roadmap.planning_radius,
        anchors=anchors,
        max_range=config.sensing.range,
    )
    scored = score_candidates(tfg, samples, config.sensing, config.prior, anchors=anchors)
    open_points = [tfg.position(lid) for lid in open_ids]

    def frontier_distance(c: CandidateGoal) -> float:
        return min(float(np.linalg.norm(c.pose.xy - p)) for p in open_points)

    waypoints = previous_goals[-12:]
    nodes = [RoadmapNode(0, current, "current")]
    nodes.extend(RoadmapNode(i + 1, g, "previous_goal") for i, g in enumerate(waypoints))
    offset = len(nodes)
    nodes.extend(RoadmapNode(offset + i, s, "sample") for i, s in enumerate(samples))
    roadmap = build_roadmap(nodes, tfg, config.roadmap, seed, base_cov=base_cov)
    ranked = sorted(
        (c for c in scored if c.reachable),
        key=lambda c: (frontier_distance(c), c.sample_index),
    )
    for cand in ranked:
        try:
            path = shortest_path(roadmap, offset + cand.sample_index)
        except Unreachable:
            continue
        if path.length > config.roadmap.max_path_length:
            continue
        return cand, path, roadmap, scored
    raise NoFeasibleGoal("no frontier-adjacent sample admits a feasible path")

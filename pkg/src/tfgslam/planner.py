"""Probabilistic roadmap construction and minimum-cost path extraction.

Roadmap edges connect nearby poses whose straight segment stays clear of the
learned obstacle edges at the robot radius and whose discretized points keep
the collision probability under a chance bound.  Edge costs add a clearance
shortfall penalty to the Euclidean length so paths prefer open space.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoFeasibleGoal, NoReachableCandidate, SamplingExhausted, Unreachable
from .info_gain import CandidateGoal, ExplorationPrior, SensorSpec, score_candidates
from .se2 import Pose2
from .tfg import (
    TopologicalFeatureGraph,
    _landmark_tables,
    _points_to_one_segment,
    collision_chance,
    edge_arrays,
    nearest_obstacle_distance,
    point_visible,
    points_to_segments_distance,
    segment_to_segments_distance,
)

Bounds = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


@dataclass(frozen=True)
class RoadmapNode:
    id: int
    pose: Pose2
    kind: str  # "current" | "previous_goal" | "sample"


@dataclass(frozen=True)
class RoadmapEdge:
    a: int
    b: int
    length: float
    penalty: float
    cost: float


@dataclass
class Roadmap:
    nodes: list[RoadmapNode]
    edges: list[RoadmapEdge]
    adjacency: dict[int, list[RoadmapEdge]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        currents = [n for n in self.nodes if n.kind == "current"]
        if len(currents) != 1:
            raise ValueError("roadmap needs exactly one current node")
        if not self.adjacency:
            self.adjacency = {n.id: [] for n in self.nodes}
            for e in self.edges:
                self.adjacency[e.a].append(e)
                self.adjacency[e.b].append(e)

    @property
    def current(self) -> RoadmapNode:
        return next(n for n in self.nodes if n.kind == "current")


@dataclass(frozen=True)
class PlannedPath:
    waypoints: tuple[Pose2, ...]
    total_cost: float

    @property
    def length(self) -> float:
        return sum(
            float(np.linalg.norm(b.xy - a.xy))
            for a, b in zip(self.waypoints, self.waypoints[1:])
        )


@dataclass(frozen=True)
class RoadmapParams:
    """Geometry and chance-constraint settings for roadmap construction."""

    bounds: Bounds
    n_samples: int = 30
    connect_radius: float = 5.0
    chance_delta: float = 0.05
    robot_radius: float = 0.2
    clearance_weight: float = 1.0  # w_c on the shortfall penalty
    d_safe: float | None = None  # default 3 * robot_radius
    collision_samples: int = 128
    step: float = 0.25
    cov_growth: float = 0.0  # position variance added per meter from the current node
    max_path_length: float = math.inf
    inflation: float = 0.0  # extra planning clearance absorbing map-relative error

    @property
    def planning_radius(self) -> float:
        return self.robot_radius + self.inflation

    @property
    def safe_distance(self) -> float:
        return 3.0 * self.robot_radius if self.d_safe is None else self.d_safe


def sample_free(
    tfg: TopologicalFeatureGraph,
    bounds: Bounds,
    count: int,
    seed,
    robot_radius: float,
    anchors: list[Pose2] | None = None,
    max_range: float = math.inf,
) -> list[Pose2]:
    """Uniform collision-free pose samples inside the bounds.

    Samples closer than the robot radius to a surface edge or to any feature
    point are rejected (features mark obstacle surfaces, so an isolated
    vertex is still a known obstacle point), as are samples not observable
    from any anchor pose.  Raises SamplingExhausted when fewer than `count`
    samples survive 100x attempts.
    """
    if count <= 0:
        raise ValueError("sample count must be positive")
    xmin, ymin, xmax, ymax = bounds
    rng = np.random.default_rng(seed)
    _, feature_pts, _ = _landmark_tables(tfg)
    out: list[Pose2] = []
    attempts = 0
    limit = 100 * count
    while len(out) < count and attempts < limit:
        attempts += 1
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        theta = rng.uniform(-math.pi, math.pi)
        p = np.array([x, y])
        dist, _ = nearest_obstacle_distance(p, tfg)
        if dist < robot_radius:
            continue
        if feature_pts.size and float(np.min(np.linalg.norm(feature_pts - p, axis=1))) < robot_radius:
            continue
        if anchors is not None and not any(
            point_visible(tfg, a.xy, p, max_range) for a in anchors
        ):
            continue
        out.append(Pose2(x, y, theta))
    if len(out) < count:
        raise SamplingExhausted(
            f"accepted {len(out)}/{count} samples in {attempts} attempts"
        )
    return out


def _discretize(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    length = float(np.linalg.norm(b - a))
    n = max(1, int(math.ceil(length / step)))
    ts = np.linspace(0.0, 1.0, n + 1)
    return a + ts[:, None] * (b - a)


def build_roadmap(
    nodes: list[RoadmapNode],
    tfg: TopologicalFeatureGraph,
    params: RoadmapParams,
    seed,
    base_cov: np.ndarray | None = None,
) -> Roadmap:
    """Connect node pairs whose straight segment is feasible.

    Feasibility requires clearance at the robot radius and, at every
    discretization point, a Monte-Carlo collision probability below the
    chance bound.  The point covariance is the current-pose covariance grown
    linearly with the straight-line distance from the current node; points
    many standard deviations clear of every edge skip the Monte-Carlo check.
    """
    if not nodes:
        raise ValueError("roadmap needs at least one node")
    roadmap = Roadmap(list(nodes), [])
    current_xy = roadmap.current.pose.xy
    if base_cov is None:
        base_cov = np.zeros((2, 2))
    base_sigma = math.sqrt(max(float(np.max(np.linalg.eigvalsh(base_cov))), 0.0))
    seg_a, seg_b = edge_arrays(tfg)
    _, feature_pts, _ = _landmark_tables(tfg)
    have_edges = seg_a.shape[0] > 0
    current_id = roadmap.current.id
    # the robot may already stand closer to a wall than the planning margin
    # (margins erode with drift); outgoing edges only need to keep whatever
    # clearance the current pose has, or it could never move again
    cur_clear = math.inf
    if have_edges:
        cur_clear = float(
            points_to_segments_distance(current_xy, seg_a, seg_b).min()
        )
    if feature_pts.size:
        cur_clear = min(
            cur_clear, float(np.min(np.linalg.norm(feature_pts - current_xy, axis=1)))
        )
    escape_radius = min(params.planning_radius, max(cur_clear - 1e-9, 0.0))
    edges: list[RoadmapEdge] = []
    for i, na in enumerate(nodes):
        for nb in nodes[i + 1 :]:
            a, b = na.pose.xy, nb.pose.xy
            length = float(np.linalg.norm(b - a))
            if length > params.connect_radius:
                continue
            radius = (
                escape_radius
                if current_id in (na.id, nb.id)
                else params.planning_radius
            )
            if have_edges:
                d_seg = float(segment_to_segments_distance(a, b, seg_a, seg_b).min())
                if d_seg < radius or d_seg == 0.0:
                    continue
            if feature_pts.size:
                # feature points are obstacle-surface samples even without edges
                if float(_points_to_one_segment(feature_pts, a, b).min()) < radius:
                    continue
            points = _discretize(a, b, params.step)
            if not have_edges:
                edges.append(RoadmapEdge(na.id, nb.id, length, 0.0, length))
                continue
            dmin = points_to_segments_distance(points, seg_a, seg_b).min(axis=1)
            travel = np.linalg.norm(points - current_xy, axis=1)
            sigma = base_sigma + np.sqrt(params.cov_growth * travel)
            feasible = True
            # the stochastic check uses the physical radius; the inflation
            # margin is already spent in the deterministic clearance test.
            # points more than five sigmas clear carry under 3e-7 collision
            # mass, far below any useful chance bound
            for k in np.nonzero(dmin - params.robot_radius <= 5.0 * sigma)[0]:
                p = points[k]
                cov = base_cov + params.cov_growth * float(travel[k]) * np.eye(2)
                chance = collision_chance(
                    p,
                    cov,
                    tfg,
                    params.collision_samples,
                    seed=[_seed_int(seed), na.id, nb.id, int(k)],
                    robot_radius=params.robot_radius,
                )
                if chance >= params.chance_delta:
                    feasible = False
                    break
            if not feasible:
                continue
            shortfall = np.clip(params.safe_distance - dmin, 0.0, None)
            penalty = float(np.sum(shortfall * shortfall))
            cost = length + params.clearance_weight * penalty
            edges.append(RoadmapEdge(na.id, nb.id, length, penalty, cost))
    return Roadmap(list(nodes), edges)


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def shortest_path(roadmap: Roadmap, goal_node_id: int) -> PlannedPath:
    """Minimum-cost path from the current node; ties break to lower node ids."""
    by_id = {n.id: n for n in roadmap.nodes}
    if goal_node_id not in by_id:
        raise ValueError(f"goal node {goal_node_id} is not in the roadmap")
    start = roadmap.current.id
    dist: dict[int, float] = {start: 0.0}
    prev: dict[int, int] = {}
    heap: list[tuple[float, int]] = [(0.0, start)]
    done: set[int] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == goal_node_id:
            break
        for e in roadmap.adjacency[node]:
            other = e.b if e.a == node else e.a
            nd = d + e.cost
            if nd < dist.get(other, math.inf) - 1e-15:
                dist[other] = nd
                prev[other] = node
                heapq.heappush(heap, (nd, other))
    if goal_node_id not in done:
        raise Unreachable(f"no roadmap path from node {start} to node {goal_node_id}")
    order = [goal_node_id]
    while order[-1] != start:
        order.append(prev[order[-1]])
    order.reverse()
    return PlannedPath(tuple(by_id[i].pose for i in order), dist[goal_node_id])


def plan_next(
    tfg: TopologicalFeatureGraph,
    current: Pose2,
    params: RoadmapParams,
    sensing: SensorSpec,
    prior: ExplorationPrior,
    previous_goals: list[Pose2] | None = None,
    base_cov: np.ndarray | None = None,
    seed: int = 0,
    attempts: int = 3,
) -> tuple[CandidateGoal, PlannedPath, Roadmap, list[CandidateGoal]]:
    """Choose the best-scoring candidate goal that admits a feasible path.

    Candidates are iterated in descending expected gain until one is
    connected to the current pose on the roadmap.  When a sample batch
    yields nothing feasible, fresh larger batches are drawn before giving
    up; the roadmap and the full scored list are returned for reporting.
    """
    anchors = list(previous_goals or []) + [current]
    # recent goals suffice as routing waypoints; keeping all of them would
    # grow the roadmap quadratically over a long run
    waypoints = list(previous_goals or [])[-12:]
    failure: Exception | None = None
    for attempt in range(attempts):
        try:
            samples = sample_free(
                tfg,
                params.bounds,
                params.n_samples * (attempt + 1),
                [_seed_int(seed), attempt],
                params.planning_radius,
                anchors=anchors,
                max_range=sensing.range,
            )
            candidates = score_candidates(tfg, samples, sensing, prior, anchors=anchors)
        except (SamplingExhausted, NoReachableCandidate) as exc:
            failure = exc
            continue
        nodes = [RoadmapNode(0, current, "current")]
        nodes.extend(RoadmapNode(i + 1, g, "previous_goal") for i, g in enumerate(waypoints))
        offset = len(nodes)
        nodes.extend(RoadmapNode(offset + i, s, "sample") for i, s in enumerate(samples))
        roadmap = build_roadmap(nodes, tfg, params, [_seed_int(seed), attempt], base_cov=base_cov)
        for cand in candidates:
            if not cand.reachable:
                continue
            try:
                path = shortest_path(roadmap, offset + cand.sample_index)
            except Unreachable:
                continue
            if path.length > params.max_path_length:
                continue
            return cand, path, roadmap, candidates
        failure = NoFeasibleGoal("no scored candidate admits a feasible roadmap path")
    if isinstance(failure, (SamplingExhausted, NoReachableCandidate)):
        raise failure
    raise NoFeasibleGoal("no scored candidate admits a feasible roadmap path")

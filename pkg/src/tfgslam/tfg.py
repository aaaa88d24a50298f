"""Topological feature map: obstacle-surface edges over landmark vertices.

Vertices are landmark estimates; an edge marks a non-traversable obstacle
surface between two features.  Because edges reference landmark ids, the
obstacle geometry moves with the MAP estimate after every re-solve without
any re-learning.  All geometric queries are pure over a snapshot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownLandmark
from .factor_graph import LandmarkEstimate, MarginalInfo
from .se2 import Pose2, wrap_angle

Segment = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class SurfaceEdge:
    """Unordered pair of landmark ids marking an obstacle surface."""

    a: int
    b: int

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("surface edge endpoints must differ")
        if self.a > self.b:
            a, b = self.a, self.b
            object.__setattr__(self, "a", b)
            object.__setattr__(self, "b", a)

    def other(self, lid: int) -> int:
        return self.b if lid == self.a else self.a

    def touches(self, lid: int) -> bool:
        return lid in (self.a, self.b)


@dataclass(frozen=True)
class Frontier:
    """An angular gap between consecutive visible landmarks with open sides."""

    left_landmark_id: int
    right_landmark_id: int
    angular_width: float
    arc_length: float


@dataclass
class TopologicalFeatureGraph:
    landmarks: dict[int, LandmarkEstimate]
    edges: list[SurfaceEdge] = field(default_factory=list)
    marginal: MarginalInfo | None = None
    frontier_flags: dict[int, tuple[bool, bool]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for e in self.edges:
            self._require(e.a)
            self._require(e.b)
        if not self.frontier_flags:
            self.frontier_flags = compute_frontier_flags(self)

    def _require(self, lid: int) -> None:
        if lid not in self.landmarks:
            raise UnknownLandmark(f"landmark {lid} is not in the map")

    def position(self, lid: int) -> np.ndarray:
        self._require(lid)
        return self.landmarks[lid].position

    def has_edge(self, a: int, b: int) -> bool:
        if a == b:
            return False
        cache = self.__dict__.get("_edge_set")
        if cache is None or cache[0] != len(self.edges):
            cache = (len(self.edges), frozenset(self.edges))
            self.__dict__["_edge_set"] = cache
        return SurfaceEdge(a, b) in cache[1]

    def incident_edges(self, lid: int) -> list[SurfaceEdge]:
        return [e for e in self.edges if e.touches(lid)]

    def edge_segment(self, edge: SurfaceEdge) -> Segment:
        return self.position(edge.a), self.position(edge.b)

    def copy(self) -> "TopologicalFeatureGraph":
        return TopologicalFeatureGraph(
            dict(self.landmarks),
            list(self.edges),
            self.marginal,
            dict(self.frontier_flags),
        )

    def with_landmarks(
        self,
        landmarks: dict[int, LandmarkEstimate],
        marginal: MarginalInfo | None,
    ) -> "TopologicalFeatureGraph":
        """New snapshot with refreshed estimates; the edge set is unchanged."""
        return TopologicalFeatureGraph(landmarks, list(self.edges), marginal, {})


# -- edge learning -------------------------------------------------------------


def learn_edges(
    tfg: TopologicalFeatureGraph, scan: list[tuple[int, int]]
) -> TopologicalFeatureGraph:
    """Insert an edge between landmarks adjacent within one scan component.

    The scan is a sequence of (surface component id, landmark id) pairs in
    sweep order; only adjacent pairs of the same component are chained, so a
    wall of n features yields n-1 edges, not a clique.  Idempotent.
    """
    out = tfg.copy()
    existing = set(out.edges)
    for (comp_a, lid_a), (comp_b, lid_b) in zip(scan, scan[1:]):
        out._require(lid_a)
        out._require(lid_b)
        if comp_a != comp_b or lid_a == lid_b:
            continue
        edge = SurfaceEdge(lid_a, lid_b)
        if edge not in existing:
            existing.add(edge)
            out.edges.append(edge)
    if scan:
        out._require(scan[-1][1])
    out.frontier_flags = compute_frontier_flags(out)
    return out


def compute_frontier_flags(
    tfg: TopologicalFeatureGraph,
) -> dict[int, tuple[bool, bool]]:
    """Per-landmark openness of the two along-surface chain sides.

    Surface edges chain along walls, so a landmark with two or more edges has
    the surface continuing past it on both sides (corners included); a single
    edge leaves the far side open, and an isolated landmark is open on both.
    """
    flags: dict[int, tuple[bool, bool]] = {}
    for lid in tfg.landmarks:
        degree = len(tfg.incident_edges(lid))
        if degree == 0:
            flags[lid] = (True, True)
        elif degree == 1:
            flags[lid] = (True, False)
        else:
            flags[lid] = (False, False)
    return flags


# -- analytic collision geometry ------------------------------------------------


def edge_arrays(tfg: TopologicalFeatureGraph) -> tuple[np.ndarray, np.ndarray]:
    """Edge endpoints as (E, 2) arrays, cached per snapshot for batch queries."""
    cache = tfg.__dict__.get("_edge_cache")
    if cache is not None and cache[0] == len(tfg.edges):
        return cache[1], cache[2]
    if tfg.edges:
        a = np.array([tfg.position(e.a) for e in tfg.edges], dtype=float)
        b = np.array([tfg.position(e.b) for e in tfg.edges], dtype=float)
    else:
        a = np.zeros((0, 2))
        b = np.zeros((0, 2))
    tfg.__dict__["_edge_cache"] = (len(tfg.edges), a, b)
    return a, b


def points_to_segments_distance(
    points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray
) -> np.ndarray:
    """Distances from P points to E closed segments, shape (P, E)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if seg_a.shape[0] == 0:
        return np.full((points.shape[0], 0), math.inf)
    ab = seg_b - seg_a  # (E, 2)
    denom = np.einsum("ij,ij->i", ab, ab)  # (E,)
    ap = points[:, None, :] - seg_a[None, :, :]  # (P, E, 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.einsum("pej,ej->pe", ap, ab) / denom
    t = np.where(denom > 0.0, np.clip(t, 0.0, 1.0), 0.0)
    proj = seg_a[None, :, :] + t[:, :, None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - proj, axis=2)


def _sign_band(v, scale):
    out = np.sign(v)
    out[np.abs(v) <= 1e-12 * scale * scale] = 0
    return out


def rays_hit_segments(
    p: np.ndarray, q: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray
) -> np.ndarray:
    """Closed-segment intersections of K rays from p against E segments.

    p is the common origin, q the (K, 2) ray tips; returns a (K, E) bool
    array including collinear-overlap hits.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    k, e = q.shape[0], seg_a.shape[0]
    if e == 0 or k == 0:
        return np.zeros((k, e), dtype=bool)
    px, py = float(p[0]), float(p[1])
    qx, qy = q[:, 0:1], q[:, 1:2]  # (K, 1)
    ax, ay = seg_a[None, :, 0], seg_a[None, :, 1]  # (1, E)
    bx, by = seg_b[None, :, 0], seg_b[None, :, 1]

    def _max_scale(*parts):
        out = np.abs(parts[0])
        for part in parts[1:]:
            out = np.maximum(out, np.abs(part))
        return np.maximum(out, 1.0)

    dqx, dqy = qx - px, qy - py
    o1 = _sign_band(
        dqx * (ay - py) - dqy * (ax - px), _max_scale(dqx, dqy, ax - px, ay - py)
    )
    o2 = _sign_band(
        dqx * (by - py) - dqy * (bx - px), _max_scale(dqx, dqy, bx - px, by - py)
    )

    dsx, dsy = bx - ax, by - ay
    o3 = _sign_band(
        dsx * (py - ay) - dsy * (px - ax), _max_scale(dsx, dsy, px - ax, py - ay)
    )
    o4 = _sign_band(
        dsx * (qy - ay) - dsy * (qx - ax), _max_scale(dsx, dsy, qx - ax, qy - ay)
    )

    hit = (o1 != o2) & (o3 != o4)

    def on(x1, y1, x2, y2, x, y):
        return (
            (np.minimum(x1, x2) - 1e-12 <= x)
            & (x <= np.maximum(x1, x2) + 1e-12)
            & (np.minimum(y1, y2) - 1e-12 <= y)
            & (y <= np.maximum(y1, y2) + 1e-12)
        )

    hit |= (o1 == 0) & on(px, py, qx, qy, ax, ay)
    hit |= (o2 == 0) & on(px, py, qx, qy, bx, by)
    hit |= (o3 == 0) & on(ax, ay, bx, by, px, py)
    hit |= (o4 == 0) & on(ax, ay, bx, by, qx, qy)
    return hit


def segment_intersects_many(
    p: np.ndarray, q: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray
) -> np.ndarray:
    """Closed-segment intersection of (p, q) against E segments, shape (E,)."""
    return rays_hit_segments(p, np.asarray(q, dtype=float)[None, :], seg_a, seg_b)[0]


def segment_to_segments_distance(
    p: np.ndarray, q: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray
) -> np.ndarray:
    """Distance from segment (p, q) to each of E segments, shape (E,)."""
    if seg_a.shape[0] == 0:
        return np.full(0, math.inf)
    d = np.minimum(
        points_to_segments_distance(np.array([p, q]), seg_a, seg_b).min(axis=0),
        np.minimum(
            _points_to_one_segment(seg_a, p, q), _points_to_one_segment(seg_b, p, q)
        ),
    )
    d[segment_intersects_many(p, q, seg_a, seg_b)] = 0.0
    return d


def _points_to_one_segment(pts: np.ndarray, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


def point_segment_distance(p: np.ndarray, seg: Segment) -> float:
    """Euclidean distance from a point to the closest point of a closed segment."""
    a, b = np.asarray(seg[0], dtype=float), np.asarray(seg[1], dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = float((np.asarray(p) - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(np.asarray(p) - (a + t * ab)))


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> int:
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    scale = max(
        abs(b[0] - a[0]), abs(b[1] - a[1]), abs(c[0] - a[0]), abs(c[1] - a[1]), 1.0
    )
    if abs(v) <= 1e-12 * scale * scale:
        return 0
    return 1 if v > 0 else -1


def _on_segment(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> bool:
    return (
        min(a[0], b[0]) - 1e-12 <= p[0] <= max(a[0], b[0]) + 1e-12
        and min(a[1], b[1]) - 1e-12 <= p[1] <= max(a[1], b[1]) + 1e-12
    )


def segment_intersects(e1: Segment, e2: Segment) -> bool:
    """Closed-segment intersection test, including collinear overlap."""
    a, b = np.asarray(e1[0], dtype=float), np.asarray(e1[1], dtype=float)
    c, d = np.asarray(e2[0], dtype=float), np.asarray(e2[1], dtype=float)
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def segment_segment_distance(e1: Segment, e2: Segment) -> float:
    if segment_intersects(e1, e2):
        return 0.0
    return min(
        point_segment_distance(e1[0], e2),
        point_segment_distance(e1[1], e2),
        point_segment_distance(e2[0], e1),
        point_segment_distance(e2[1], e1),
    )


def nearest_obstacle_distance(
    p: np.ndarray, tfg: TopologicalFeatureGraph
) -> tuple[float, int | None]:
    """Distance to the closest surface edge; ties break to the lower edge index."""
    seg_a, seg_b = edge_arrays(tfg)
    if seg_a.shape[0] == 0:
        return math.inf, None
    d = points_to_segments_distance(np.asarray(p, dtype=float), seg_a, seg_b)[0]
    idx = int(np.argmin(d))
    return float(d[idx]), idx


def collision_chance(
    x_mean: np.ndarray,
    cov: np.ndarray,
    tfg: TopologicalFeatureGraph,
    samples: int,
    seed,
    robot_radius: float = 0.0,
) -> float:
    """Monte-Carlo probability that a Gaussian-perturbed point sits within the
    robot radius of any surface edge.  Deterministic given the seed."""
    if not tfg.edges:
        return 0.0
    mean = np.asarray(x_mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    sigma_max = math.sqrt(max(float(np.max(np.linalg.eigvalsh(cov))), 0.0))
    nearest, _ = nearest_obstacle_distance(mean, tfg)
    if nearest - robot_radius > 8.0 * sigma_max:
        return 0.0
    rng = np.random.default_rng(seed)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # covariance may be exactly zero or rank deficient
        w, v = np.linalg.eigh(cov)
        chol = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
    pts = mean + rng.standard_normal((samples, 2)) @ chol.T
    seg_a, seg_b = edge_arrays(tfg)
    hits = points_to_segments_distance(pts, seg_a, seg_b).min(axis=1) <= robot_radius
    return float(np.count_nonzero(hits)) / samples


# -- visibility and frontier detection ------------------------------------------


def _landmark_tables(tfg: TopologicalFeatureGraph):
    """Sorted ids, positions, and the landmark-to-edge incidence mask, cached."""
    cache = tfg.__dict__.get("_lm_cache")
    if cache is not None and cache[0] == len(tfg.edges):
        return cache[1], cache[2], cache[3]
    ids = sorted(tfg.landmarks)
    pos = (
        np.array([tfg.landmarks[lid].position for lid in ids], dtype=float)
        if ids
        else np.zeros((0, 2))
    )
    incidence = np.zeros((len(ids), len(tfg.edges)), dtype=bool)
    row = {lid: i for i, lid in enumerate(ids)}
    for j, edge in enumerate(tfg.edges):
        incidence[row[edge.a], j] = True
        incidence[row[edge.b], j] = True
    tfg.__dict__["_lm_cache"] = (len(tfg.edges), ids, pos, incidence)
    return ids, pos, incidence


def visible_landmark_ids(
    tfg: TopologicalFeatureGraph, viewpoint: Pose2, max_range: float, fov: float
) -> list[int]:
    """Landmarks in range and field of view with an unobstructed sight line.

    Edges incident to the target landmark never occlude it; rays are pulled
    back slightly so edges ending exactly at the target do not count.
    """
    ids, pos, incidence = _landmark_tables(tfg)
    if not ids:
        return []
    eye = viewpoint.xy
    offs = pos - eye
    dist = np.linalg.norm(offs, axis=1)
    keep = dist <= max_range
    if fov < 2.0 * math.pi - 1e-12:
        bearings = np.arctan2(offs[:, 1], offs[:, 0]) - viewpoint.theta
        bearings = (bearings + math.pi) % (2.0 * math.pi) - math.pi
        keep &= (np.abs(bearings) <= fov / 2.0 + 1e-12) | (dist == 0.0)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return []
    seg_a, seg_b = edge_arrays(tfg)
    if seg_a.shape[0] == 0:
        return [ids[i] for i in idx]
    tips = eye + offs[idx] * (1.0 - 1e-9)
    hits = rays_hit_segments(eye, tips, seg_a, seg_b)
    hits[incidence[idx]] = False
    ok = ~hits.any(axis=1) | (dist[idx] == 0.0)
    return [ids[i] for i, good in zip(idx, ok) if good]


def landmark_visible(
    tfg: TopologicalFeatureGraph,
    viewpoint: Pose2,
    lid: int,
    max_range: float,
    fov: float,
) -> bool:
    """Range, field-of-view, and occlusion test for one landmark."""
    target = tfg.position(lid)
    eye = viewpoint.xy
    offset = target - eye
    dist = float(np.linalg.norm(offset))
    if dist > max_range:
        return False
    if dist > 0 and fov < 2.0 * math.pi - 1e-12:
        bearing = wrap_angle(math.atan2(offset[1], offset[0]) - viewpoint.theta)
        if abs(bearing) > fov / 2.0 + 1e-12:
            return False
    if dist == 0.0:
        return True
    tip = eye + offset * (1.0 - 1e-9)
    seg_a, seg_b = edge_arrays(tfg)
    if seg_a.shape[0] == 0:
        return True
    blocked = segment_intersects_many(eye, tip, seg_a, seg_b)
    for idx, edge in enumerate(tfg.edges):
        if edge.touches(lid):
            blocked[idx] = False
    return not bool(blocked.any())


def point_visible(
    tfg: TopologicalFeatureGraph,
    eye: np.ndarray,
    point: np.ndarray,
    max_range: float,
) -> bool:
    """Line-of-sight test for an arbitrary point against the learned edges."""
    eye = np.asarray(eye, dtype=float)
    point = np.asarray(point, dtype=float)
    if float(np.linalg.norm(point - eye)) > max_range:
        return False
    seg_a, seg_b = edge_arrays(tfg)
    return not bool(segment_intersects_many(eye, point, seg_a, seg_b).any())


def _bearing(viewpoint: Pose2, p: np.ndarray) -> float:
    return math.atan2(p[1] - viewpoint.y, p[0] - viewpoint.x)


def detect_frontiers(
    tfg: TopologicalFeatureGraph, viewpoint: Pose2, sensing
) -> list[Frontier]:
    """Angular gaps between consecutive visible landmarks with open facing sides.

    Visible landmarks are sorted by bearing; a consecutive pair (cyclic when
    the field of view is the full circle) yields a frontier when no surface
    edge joins the pair and neither boundary landmark has an edge leading
    into the gap arc, i.e. the known surface does not continue across it.
    The arc length is the bearing gap times the sensing range.
    """
    visible = visible_landmark_ids(tfg, viewpoint, sensing.range, sensing.fov)
    if not visible:
        return []
    full_circle = sensing.fov >= 2.0 * math.pi - 1e-12
    if len(visible) == 1:
        lid = visible[0]
        if full_circle and any(tfg.frontier_flags.get(lid, (True, True))):
            width = 2.0 * math.pi
            return [Frontier(lid, lid, width, width * sensing.range)]
        return []

    by_bearing = sorted(visible, key=lambda lid: (_bearing(viewpoint, tfg.position(lid)), lid))
    pairs = list(zip(by_bearing, by_bearing[1:]))
    if full_circle:
        pairs.append((by_bearing[-1], by_bearing[0]))

    frontiers: list[Frontier] = []
    for left, right in pairs:
        if tfg.has_edge(left, right):
            continue
        start = _bearing(viewpoint, tfg.position(left))
        gap = (_bearing(viewpoint, tfg.position(right)) - start) % (2.0 * math.pi)
        if gap <= 1e-12:
            continue
        if _surface_enters_gap(tfg, viewpoint, (left, right), start, gap):
            continue
        frontiers.append(Frontier(left, right, gap, gap * sensing.range))
    return frontiers


def _surface_enters_gap(
    tfg: TopologicalFeatureGraph,
    viewpoint: Pose2,
    pair: tuple[int, int],
    start: float,
    gap: float,
) -> bool:
    """True when an edge of either boundary landmark leads into the gap arc."""
    for lid in pair:
        for edge in tfg.incident_edges(lid):
            other = edge.other(lid)
            rel = (_bearing(viewpoint, tfg.position(other)) - start) % (2.0 * math.pi)
            if 1e-9 < rel < gap - 1e-9:
                return True
    return False


# -- serialization ---------------------------------------------------------------


def dump_tfg(tfg: TopologicalFeatureGraph) -> str:
    """Text records: landmarks, edges, open flags, marginal (upper triangle)."""
    lines = []
    for lid in sorted(tfg.landmarks):
        p = tfg.position(lid)
        lines.append(f"LANDMARK {lid} {float(p[0])!r} {float(p[1])!r}")
    for e in tfg.edges:
        lines.append(f"EDGE {e.a} {e.b}")
    for lid in sorted(tfg.frontier_flags):
        left, right = tfg.frontier_flags[lid]
        lines.append(f"FLAGS {lid} {int(left)} {int(right)}")
    if tfg.marginal is not None:
        order = " ".join(str(i) for i in tfg.marginal.landmark_order)
        lines.append(f"MARGINAL_ORDER {order}")
        m = tfg.marginal.lambda_l
        for i in range(m.shape[0]):
            for j in range(i, m.shape[1]):
                lines.append(f"MARGINAL {i} {j} {float(m[i, j])!r}")
    return "\n".join(lines) + "\n"


def load_tfg(text: str) -> TopologicalFeatureGraph:
    landmarks: dict[int, LandmarkEstimate] = {}
    edges: list[SurfaceEdge] = []
    flags: dict[int, tuple[bool, bool]] = {}
    order: list[int] = []
    entries: list[tuple[int, int, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "LANDMARK":
                lid = int(args[0])
                landmarks[lid] = LandmarkEstimate(lid, np.array([float(args[1]), float(args[2])]))
            elif kind == "EDGE":
                edges.append(SurfaceEdge(int(args[0]), int(args[1])))
            elif kind == "FLAGS":
                flags[int(args[0])] = (bool(int(args[1])), bool(int(args[2])))
            elif kind == "MARGINAL_ORDER":
                order = [int(a) for a in args]
            elif kind == "MARGINAL":
                entries.append((int(args[0]), int(args[1]), float(args[2])))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"tfg dump line {lineno}: {exc}") from exc
    marginal = None
    if order:
        n = 2 * len(order)
        m = np.zeros((n, n))
        for i, j, v in entries:
            m[i, j] = v
            m[j, i] = v
        marginal = MarginalInfo(order, m)
    return TopologicalFeatureGraph(landmarks, edges, marginal, flags)

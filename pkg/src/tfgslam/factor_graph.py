"""Landmark/pose factor graph: MAP estimation, information assembly, marginals.

Variables are 2D landmarks and SE(2) poses.  The joint negative log posterior
is a sum of squared, information-weighted residuals contributed by pose
priors, landmark priors, odometry factors, and landmark measurement factors.
All information quantities use the block ordering [landmarks | poses].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import (
    IllegalCompress,
    NonPositiveDefinite,
    NotConnected,
    SingularPoseBlock,
    SingularSystem,
)
from .se2 import Pose2, compose_jacobians, pose_between, pose_compose, point_to_world, wrap_angle

VarKey = tuple[str, int]  # ("l", landmark_id) or ("p", pose_id)


@dataclass(frozen=True)
class LandmarkEstimate:
    """A 2D feature with a fixed identity."""

    id: int
    position: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class PosePrior:
    pose_id: int
    mean: Pose2
    information: np.ndarray


@dataclass(frozen=True)
class LandmarkPrior:
    landmark_id: int
    mean: np.ndarray
    information: np.ndarray


@dataclass(frozen=True)
class Odometry:
    from_pose_id: int
    to_pose_id: int
    delta: Pose2
    information: np.ndarray


@dataclass(frozen=True)
class Measurement:
    """Robot-frame position of a landmark seen from a pose.

    Transient measurements localize the robot in transit and are dropped when
    the traversed span is compressed; they never update landmark estimates.
    """

    pose_id: int
    landmark_id: int
    relative_position: np.ndarray
    information: np.ndarray
    transient: bool = False


Factor = PosePrior | LandmarkPrior | Odometry | Measurement


def check_information(m: np.ndarray, dim: int, what: str = "information") -> np.ndarray:
    """Validate a symmetric positive-definite information matrix."""
    m = np.asarray(m, dtype=float)
    if m.shape != (dim, dim):
        raise ValueError(f"{what} must be {dim}x{dim}, got {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} failed the Cholesky PSD check") from exc
    return 0.5 * (m + m.T)


@dataclass
class GraphEstimate:
    """A full variable assignment: pose and landmark values."""

    poses: dict[int, Pose2] = field(default_factory=dict)
    landmarks: dict[int, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "GraphEstimate":
        return GraphEstimate(dict(self.poses), {k: v.copy() for k, v in self.landmarks.items()})


class FactorGraph:
    """Poses, landmarks, and the factors constraining them.

    The graph also stores the current estimate of every variable; queries
    (assembly, marginalization) are pure functions of a snapshot.
    """

    def __init__(self) -> None:
        self.poses: dict[int, Pose2] = {}
        self.landmarks: dict[int, LandmarkEstimate] = {}
        self.factors: list[Factor] = []

    # -- construction -----------------------------------------------------

    def add_pose(self, pose_id: int, estimate: Pose2) -> None:
        if pose_id in self.poses:
            raise ValueError(f"duplicate pose id {pose_id}")
        self.poses[pose_id] = estimate

    def add_landmark(self, landmark_id: int, position: np.ndarray) -> None:
        if landmark_id in self.landmarks:
            raise ValueError(f"duplicate landmark id {landmark_id}")
        self.landmarks[landmark_id] = LandmarkEstimate(landmark_id, position)

    def add_factor(self, factor: Factor) -> None:
        if isinstance(factor, PosePrior):
            self._require_pose(factor.pose_id)
            factor = replace(factor, information=check_information(factor.information, 3))
        elif isinstance(factor, LandmarkPrior):
            self._require_landmark(factor.landmark_id)
            factor = replace(
                factor,
                mean=np.asarray(factor.mean, dtype=float),
                information=check_information(factor.information, 2),
            )
        elif isinstance(factor, Odometry):
            self._require_pose(factor.from_pose_id)
            self._require_pose(factor.to_pose_id)
            factor = replace(factor, information=check_information(factor.information, 3))
        elif isinstance(factor, Measurement):
            self._require_pose(factor.pose_id)
            self._require_landmark(factor.landmark_id)
            factor = replace(
                factor,
                relative_position=np.asarray(factor.relative_position, dtype=float),
                information=check_information(factor.information, 2),
            )
        else:
            raise TypeError(f"unknown factor type {type(factor)!r}")
        self.factors.append(factor)

    def _require_pose(self, pose_id: int) -> None:
        if pose_id not in self.poses:
            raise ValueError(f"factor references unknown pose {pose_id}")

    def _require_landmark(self, landmark_id: int) -> None:
        if landmark_id not in self.landmarks:
            raise ValueError(f"factor references unknown landmark {landmark_id}")

    def copy(self) -> "FactorGraph":
        g = FactorGraph()
        g.poses = dict(self.poses)
        g.landmarks = dict(self.landmarks)
        g.factors = list(self.factors)
        return g

    # -- estimates ---------------------------------------------------------

    def estimate(self) -> GraphEstimate:
        return GraphEstimate(
            dict(self.poses),
            {lid: lm.position.copy() for lid, lm in self.landmarks.items()},
        )

    def set_estimate(self, est: GraphEstimate) -> None:
        for pid, pose in est.poses.items():
            self._require_pose(pid)
            self.poses[pid] = pose
        for lid, pos in est.landmarks.items():
            self._require_landmark(lid)
            self.landmarks[lid] = LandmarkEstimate(lid, pos)

    # -- structure ---------------------------------------------------------

    def variable_keys(self) -> list[VarKey]:
        keys: list[VarKey] = [("l", lid) for lid in sorted(self.landmarks)]
        keys.extend(("p", pid) for pid in self.poses)
        return keys

    def has_pose_prior(self) -> bool:
        return any(isinstance(f, PosePrior) for f in self.factors)

    def check_connected(self) -> None:
        """Every variable must reach a prior through the factor adjacency."""
        adjacency: dict[VarKey, set[VarKey]] = {k: set() for k in self.variable_keys()}
        anchors: list[VarKey] = []
        for f in self.factors:
            if isinstance(f, PosePrior):
                anchors.append(("p", f.pose_id))
            elif isinstance(f, LandmarkPrior):
                anchors.append(("l", f.landmark_id))
            elif isinstance(f, Odometry):
                a, b = ("p", f.from_pose_id), ("p", f.to_pose_id)
                adjacency[a].add(b)
                adjacency[b].add(a)
            elif isinstance(f, Measurement):
                a, b = ("p", f.pose_id), ("l", f.landmark_id)
                adjacency[a].add(b)
                adjacency[b].add(a)
        reached = set(anchors)
        stack = list(reached)
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in reached:
                    reached.add(nxt)
                    stack.append(nxt)
        missing = [k for k in adjacency if k not in reached]
        if missing:
            raise NotConnected(f"variables with no path to a prior: {missing[:5]}")


# -- residuals and Jacobians ------------------------------------------------


def _measurement_prediction(pose: Pose2, lm: np.ndarray) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = lm[0] - pose.x, lm[1] - pose.y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def measurement_jacobians(pose: Pose2, lm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of the robot-frame landmark prediction wrt pose and landmark."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = lm[0] - pose.x, lm[1] - pose.y
    j_pose = np.array(
        [
            [-c, -s, -s * dx + c * dy],
            [s, -c, -c * dx - s * dy],
        ]
    )
    j_lm = np.array([[c, s], [-s, c]])
    return j_pose, j_lm


def odometry_jacobians(a: Pose2, b: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of pose_between(a, b) wrt a and b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    j_a = np.array(
        [
            [-c, -s, -s * dx + c * dy],
            [s, -c, -c * dx - s * dy],
            [0.0, 0.0, -1.0],
        ]
    )
    j_b = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return j_a, j_b


def factor_blocks(
    factor: Factor, est: GraphEstimate
) -> tuple[np.ndarray, np.ndarray, list[tuple[VarKey, np.ndarray]]]:
    """Residual, information, and per-variable Jacobian blocks at an estimate."""
    if isinstance(factor, PosePrior):
        p = est.poses[factor.pose_id]
        r = np.array(
            [
                p.x - factor.mean.x,
                p.y - factor.mean.y,
                wrap_angle(p.theta - factor.mean.theta),
            ]
        )
        return r, factor.information, [(("p", factor.pose_id), np.eye(3))]
    if isinstance(factor, LandmarkPrior):
        l = est.landmarks[factor.landmark_id]
        return l - factor.mean, factor.information, [(("l", factor.landmark_id), np.eye(2))]
    if isinstance(factor, Odometry):
        a = est.poses[factor.from_pose_id]
        b = est.poses[factor.to_pose_id]
        pred = pose_between(a, b)
        r = np.array(
            [
                pred.x - factor.delta.x,
                pred.y - factor.delta.y,
                wrap_angle(pred.theta - factor.delta.theta),
            ]
        )
        j_a, j_b = odometry_jacobians(a, b)
        return r, factor.information, [
            (("p", factor.from_pose_id), j_a),
            (("p", factor.to_pose_id), j_b),
        ]
    if isinstance(factor, Measurement):
        p = est.poses[factor.pose_id]
        l = est.landmarks[factor.landmark_id]
        r = _measurement_prediction(p, l) - factor.relative_position
        j_p, j_l = measurement_jacobians(p, l)
        return r, factor.information, [
            (("p", factor.pose_id), j_p),
            (("l", factor.landmark_id), j_l),
        ]
    raise TypeError(f"unknown factor type {type(factor)!r}")


def graph_cost(graph: FactorGraph, est: GraphEstimate) -> float:
    """One half of the information-weighted squared residual sum."""
    total = 0.0
    for f in graph.factors:
        r, omega, _ = factor_blocks(f, est)
        total += 0.5 * float(r @ omega @ r)
    return total


# -- initialization ----------------------------------------------------------


def build_initial_estimate(graph: FactorGraph) -> GraphEstimate:
    """Dead-reckon poses from priors through odometry; back-project landmarks
    from their first measurement; fall back to prior means."""
    est = GraphEstimate()
    for f in graph.factors:
        if isinstance(f, PosePrior) and f.pose_id not in est.poses:
            est.poses[f.pose_id] = f.mean
    # propagate odometry both ways until fixed point
    changed = True
    while changed:
        changed = False
        for f in graph.factors:
            if not isinstance(f, Odometry):
                continue
            if f.from_pose_id in est.poses and f.to_pose_id not in est.poses:
                est.poses[f.to_pose_id] = pose_compose(est.poses[f.from_pose_id], f.delta)
                changed = True
            elif f.to_pose_id in est.poses and f.from_pose_id not in est.poses:
                inv = pose_compose(est.poses[f.to_pose_id], _invert_delta(f.delta))
                est.poses[f.from_pose_id] = inv
                changed = True
    for f in graph.factors:
        if isinstance(f, Measurement) and f.landmark_id not in est.landmarks:
            if f.pose_id in est.poses:
                est.landmarks[f.landmark_id] = point_to_world(
                    est.poses[f.pose_id], f.relative_position
                )
    for f in graph.factors:
        if isinstance(f, LandmarkPrior) and f.landmark_id not in est.landmarks:
            est.landmarks[f.landmark_id] = f.mean.copy()
    # anything still missing keeps the stored estimate if present
    for pid, pose in graph.poses.items():
        est.poses.setdefault(pid, pose)
    for lid, lm in graph.landmarks.items():
        est.landmarks.setdefault(lid, lm.position.copy())
    return est


def _invert_delta(d: Pose2) -> Pose2:
    c, s = math.cos(d.theta), math.sin(d.theta)
    return Pose2(-(c * d.x + s * d.y), -(-s * d.x + c * d.y), -d.theta)


# -- MAP solve ----------------------------------------------------------------


@dataclass
class SolveResult:
    estimate: GraphEstimate
    converged: bool
    iterations: int
    cost: float


_LAMBDA0 = 1e-4
_LAMBDA_MAX = 1e8
_STEP_TOL = 1e-8
_REL_COST_TOL = 1e-10


def map_solve(
    graph: FactorGraph,
    initial: GraphEstimate | None = None,
    max_iterations: int = 100,
) -> SolveResult:
    """Gauss-Newton minimizer of the negative log posterior, with
    Levenberg-Marquardt damping engaged when a plain step fails."""
    if not graph.has_pose_prior():
        raise NotConnected("graph has no pose prior; gauge is not fixed")
    graph.check_connected()

    est = (initial or build_initial_estimate(graph)).copy()
    keys = graph.variable_keys()
    index, dim = _index_variables(keys)
    cost = graph_cost(graph, est)
    lam = 0.0
    iterations = 0
    converged = False

    while iterations < max_iterations:
        iterations += 1
        h, b = _normal_equations(graph, est, index, dim)
        stepped = False
        while True:
            try:
                damped = h if lam == 0.0 else h + lam * np.eye(dim)
                cho = sla.cho_factor(damped, check_finite=False)
            except np.linalg.LinAlgError:
                if lam >= _LAMBDA_MAX:
                    raise SingularSystem(
                        f"normal equations singular at damping {lam:g}"
                    ) from None
                lam = _LAMBDA0 if lam == 0.0 else lam * 10.0
                continue
            step = sla.cho_solve(cho, -b, check_finite=False)
            candidate = _apply_step(est, keys, index, step)
            new_cost = graph_cost(graph, candidate)
            if new_cost <= cost + 1e-15:
                est = candidate
                step_norm = float(np.linalg.norm(step))
                rel_drop = (cost - new_cost) / max(cost, 1e-300)
                cost = new_cost
                lam = 0.0 if lam <= _LAMBDA0 else lam / 10.0
                stepped = True
                if step_norm < _STEP_TOL or rel_drop < _REL_COST_TOL:
                    converged = True
                break
            if lam >= _LAMBDA_MAX:
                break  # no improving step at maximum damping
            lam = _LAMBDA0 if lam == 0.0 else lam * 10.0
        if converged or not stepped:
            break

    return SolveResult(est, converged, iterations, cost)


def _index_variables(keys: list[VarKey]) -> tuple[dict[VarKey, tuple[int, int]], int]:
    index: dict[VarKey, tuple[int, int]] = {}
    offset = 0
    for k in keys:
        size = 2 if k[0] == "l" else 3
        index[k] = (offset, size)
        offset += size
    return index, offset


def _normal_equations(
    graph: FactorGraph,
    est: GraphEstimate,
    index: dict[VarKey, tuple[int, int]],
    dim: int,
) -> tuple[np.ndarray, np.ndarray]:
    h = np.zeros((dim, dim))
    b = np.zeros(dim)
    for f in graph.factors:
        r, omega, blocks = factor_blocks(f, est)
        for k1, j1 in blocks:
            o1, s1 = index[k1]
            jw = j1.T @ omega
            b[o1 : o1 + s1] += jw @ r
            for k2, j2 in blocks:
                o2, s2 = index[k2]
                h[o1 : o1 + s1, o2 : o2 + s2] += jw @ j2
    return h, b


def _apply_step(
    est: GraphEstimate,
    keys: list[VarKey],
    index: dict[VarKey, tuple[int, int]],
    step: np.ndarray,
) -> GraphEstimate:
    out = est.copy()
    for k in keys:
        o, s = index[k]
        if k[0] == "l":
            out.landmarks[k[1]] = est.landmarks[k[1]] + step[o : o + 2]
        else:
            p = est.poses[k[1]]
            out.poses[k[1]] = Pose2(p.x + step[o], p.y + step[o + 1], p.theta + step[o + 2])
    return out


# -- information assembly and marginalization --------------------------------


@dataclass
class InformationMatrix:
    """Sparse joint information with its [landmarks | poses] ordering."""

    matrix: sp.csr_matrix
    landmark_order: list[int]
    pose_order: list[int]

    @property
    def landmark_dim(self) -> int:
        return 2 * len(self.landmark_order)


@dataclass
class MarginalInfo:
    """Marginal information of the landmark block after removing poses."""

    landmark_order: list[int]
    lambda_l: np.ndarray

    def __post_init__(self) -> None:
        self.lambda_l = np.asarray(self.lambda_l, dtype=float)
        n = 2 * len(self.landmark_order)
        if self.lambda_l.shape != (n, n):
            raise ValueError(
                f"marginal must be {n}x{n} for {len(self.landmark_order)} landmarks"
            )
        if n and not np.allclose(self.lambda_l, self.lambda_l.T, rtol=1e-9, atol=1e-12):
            raise ValueError("marginal information must be symmetric")

    def index_of(self, landmark_id: int) -> int:
        return self.landmark_order.index(landmark_id)

    def covariance(self) -> np.ndarray:
        """Dense inverse of the marginal information, cached per instance."""
        cached = self.__dict__.get("_cov_cache")
        if cached is None:
            cached = np.linalg.inv(self.lambda_l) if self.lambda_l.size else self.lambda_l
            self.__dict__["_cov_cache"] = cached
        return cached


def assemble_information(graph: FactorGraph, est: GraphEstimate) -> InformationMatrix:
    """Sum of J' Omega J over all factors at the linearization point."""
    keys = graph.variable_keys()
    index, dim = _index_variables(keys)
    dense = np.zeros((dim, dim))
    for f in graph.factors:
        _, omega, blocks = factor_blocks(f, est)
        for k1, j1 in blocks:
            o1, s1 = index[k1]
            jw = j1.T @ omega
            for k2, j2 in blocks:
                o2, s2 = index[k2]
                dense[o1 : o1 + s1, o2 : o2 + s2] += jw @ j2
    matrix = sp.csr_matrix(0.5 * (dense + dense.T))
    return InformationMatrix(
        matrix,
        [k[1] for k in keys if k[0] == "l"],
        [k[1] for k in keys if k[0] == "p"],
    )


def marginal_landmark_info(info: InformationMatrix) -> MarginalInfo:
    """Schur complement of the joint information onto the landmark block."""
    nl = info.landmark_dim
    dense = info.matrix.toarray()
    lam_f = dense[:nl, :nl]
    lam_fr = dense[:nl, nl:]
    lam_r = dense[nl:, nl:]
    if lam_r.shape[0] == 0:
        lam_l = lam_f
    else:
        try:
            cho = sla.cho_factor(lam_r, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularPoseBlock("pose block is not positive definite") from exc
        lam_l = lam_f - lam_fr @ sla.cho_solve(cho, lam_fr.T, check_finite=False)
    lam_l = 0.5 * (lam_l + lam_l.T)
    return MarginalInfo(info.landmark_order, lam_l)


def landmark_entropy(marginal: MarginalInfo) -> float:
    """-1/2 log det of the marginal information (Gaussian constant dropped)."""
    n = marginal.lambda_l.shape[0]
    if n == 0:
        return 0.0
    try:
        cho = np.linalg.cholesky(marginal.lambda_l)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite("marginal information has a non-positive logdet") from exc
    return -float(np.sum(np.log(np.diag(cho))))


def logdet_psd(m: np.ndarray) -> float:
    """log det of a positive definite matrix via Cholesky."""
    if m.shape[0] == 0:
        return 0.0
    try:
        cho = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(cho))))


# -- pose-chain compression ---------------------------------------------------


def compress_between_goals(
    graph: FactorGraph, start_pose_id: int, end_pose_id: int
) -> FactorGraph:
    """Replace the odometry chain between two goal poses by one composed factor.

    Transient measurements on intermediate poses are dropped; any retained
    factor on an intermediate pose raises IllegalCompress.  The composed
    covariance is first-order propagation through the composition Jacobians.
    """
    if start_pose_id == end_pose_id:
        return graph.copy()
    chain = _odometry_chain(graph, start_pose_id, end_pose_id)
    interior = {f.from_pose_id for f in chain[1:]}
    if not interior:
        return graph.copy()

    for f in graph.factors:
        if isinstance(f, Measurement) and f.pose_id in interior and not f.transient:
            raise IllegalCompress(
                f"pose {f.pose_id} carries a retained measurement of landmark {f.landmark_id}"
            )
        if isinstance(f, PosePrior) and f.pose_id in interior:
            raise IllegalCompress(f"pose {f.pose_id} carries a prior inside the span")
        if isinstance(f, Odometry) and f not in chain:
            if f.from_pose_id in interior or f.to_pose_id in interior:
                raise IllegalCompress("odometry branches off the compression span")

    delta = Pose2(0.0, 0.0, 0.0)
    cov = np.zeros((3, 3))
    for f in chain:
        j_acc, j_step = compose_jacobians(delta, f.delta)
        step_cov = np.linalg.inv(f.information)
        cov = j_acc @ cov @ j_acc.T + j_step @ step_cov @ j_step.T
        delta = pose_compose(delta, f.delta)

    out = FactorGraph()
    out.poses = {pid: p for pid, p in graph.poses.items() if pid not in interior}
    out.landmarks = dict(graph.landmarks)
    for f in graph.factors:
        if isinstance(f, Odometry) and f in chain:
            continue
        if isinstance(f, Measurement) and f.pose_id in interior:
            continue  # transient by the checks above
        out.factors.append(f)
    out.add_factor(Odometry(start_pose_id, end_pose_id, delta, np.linalg.inv(cov)))
    return out


def _odometry_chain(graph: FactorGraph, start: int, end: int) -> list[Odometry]:
    by_from: dict[int, Odometry] = {}
    for f in graph.factors:
        if isinstance(f, Odometry):
            if f.from_pose_id in by_from:
                raise IllegalCompress(
                    f"pose {f.from_pose_id} has multiple outgoing odometry factors"
                )
            by_from[f.from_pose_id] = f
    chain: list[Odometry] = []
    cur = start
    seen = {start}
    while cur != end:
        f = by_from.get(cur)
        if f is None:
            raise IllegalCompress(f"no odometry chain from pose {start} to pose {end}")
        chain.append(f)
        cur = f.to_pose_id
        if cur in seen:
            raise IllegalCompress("odometry chain loops back on itself")
        seen.add(cur)
    return chain


# -- line-oriented dump / load -----------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _upper(m: np.ndarray) -> list[float]:
    n = m.shape[0]
    return [m[i, j] for i in range(n) for j in range(i, n)]


def _from_upper(values: list[float], n: int) -> np.ndarray:
    m = np.zeros((n, n))
    it = iter(values)
    for i in range(n):
        for j in range(i, n):
            v = next(it)
            m[i, j] = v
            m[j, i] = v
    return m


def dump_graph(graph: FactorGraph) -> str:
    """Serialize a graph to the line-oriented text format (see README)."""
    lines = []
    for pid, p in graph.poses.items():
        lines.append(f"POSE {pid} {_fmt([p.x, p.y, p.theta])}")
    for lid in sorted(graph.landmarks):
        lm = graph.landmarks[lid]
        lines.append(f"LANDMARK {lid} {_fmt(lm.position)}")
    for f in graph.factors:
        if isinstance(f, PosePrior):
            lines.append(
                f"PRIOR_POSE {f.pose_id} {_fmt([f.mean.x, f.mean.y, f.mean.theta])} "
                f"{_fmt(_upper(f.information))}"
            )
        elif isinstance(f, LandmarkPrior):
            lines.append(
                f"PRIOR_LANDMARK {f.landmark_id} {_fmt(f.mean)} {_fmt(_upper(f.information))}"
            )
        elif isinstance(f, Odometry):
            lines.append(
                f"ODOMETRY {f.from_pose_id} {f.to_pose_id} "
                f"{_fmt([f.delta.x, f.delta.y, f.delta.theta])} {_fmt(_upper(f.information))}"
            )
        elif isinstance(f, Measurement):
            lines.append(
                f"MEASUREMENT {f.pose_id} {f.landmark_id} {_fmt(f.relative_position)} "
                f"{_fmt(_upper(f.information))} {int(f.transient)}"
            )
    return "\n".join(lines) + "\n"


def load_graph(text: str) -> FactorGraph:
    graph = FactorGraph()
    deferred: list[Factor] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "POSE":
                graph.add_pose(int(args[0]), Pose2(*map(float, args[1:4])))
            elif kind == "LANDMARK":
                graph.add_landmark(int(args[0]), np.array([float(args[1]), float(args[2])]))
            elif kind == "PRIOR_POSE":
                vals = list(map(float, args[1:]))
                deferred.append(
                    PosePrior(int(args[0]), Pose2(*vals[:3]), _from_upper(vals[3:9], 3))
                )
            elif kind == "PRIOR_LANDMARK":
                vals = list(map(float, args[1:]))
                deferred.append(
                    LandmarkPrior(int(args[0]), np.array(vals[:2]), _from_upper(vals[2:5], 2))
                )
            elif kind == "ODOMETRY":
                vals = list(map(float, args[2:]))
                deferred.append(
                    Odometry(int(args[0]), int(args[1]), Pose2(*vals[:3]), _from_upper(vals[3:9], 3))
                )
            elif kind == "MEASUREMENT":
                vals = list(map(float, args[2:7]))
                transient = bool(int(args[7])) if len(args) > 7 else False
                deferred.append(
                    Measurement(
                        int(args[0]),
                        int(args[1]),
                        np.array(vals[:2]),
                        _from_upper(vals[2:5], 2),
                        transient,
                    )
                )
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (ValueError, TypeError, IndexError) as exc:
            raise ValueError(f"graph dump line {lineno}: {exc}") from exc
    for f in deferred:
        graph.add_factor(f)
    return graph

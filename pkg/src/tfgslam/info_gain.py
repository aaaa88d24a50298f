"""Expected map-entropy reduction at candidate goal points.

The score of a candidate splits into the gain from re-observing known
landmarks (exploitation) and the expected gain from new landmarks behind
frontiers (exploration).  Both are log-determinant quantities over the same
landmark belief, so the two motives are directly comparable.

Candidate goals are treated as free 2D positions: the robot stabilizes at a
goal and rotates in place, so the scored measurement factors constrain the
goal position with the landmark geometry and the heading only fixes the
linearization.  An exact dense oracle is provided for validation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoReachableCandidate, NonPositiveDefinite
from .factor_graph import (
    FactorGraph,
    assemble_information,
    check_information,
    logdet_psd,
)
from .se2 import Pose2
from .tfg import (
    Frontier,
    TopologicalFeatureGraph,
    detect_frontiers,
    point_visible,
    visible_landmark_ids,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SensorSpec:
    """Range-limited field-of-view sensor with Gaussian measurement noise."""

    range: float
    fov: float
    measurement_information: np.ndarray

    def __post_init__(self) -> None:
        if self.range <= 0:
            raise ValueError("sensor range must be positive")
        if not 0.0 < self.fov <= TWO_PI + 1e-12:
            raise ValueError("field of view must be in (0, 2*pi]")
        object.__setattr__(
            self,
            "measurement_information",
            check_information(self.measurement_information, 2, "measurement information"),
        )


def full_rotation(sensing: SensorSpec) -> SensorSpec:
    """The same sensor with an effective 360-degree sweep (in-place rotation)."""
    return replace(sensing, fov=TWO_PI)


@dataclass(frozen=True)
class ExplorationPrior:
    """Belief about landmarks not seen yet.

    sigma_u: prior covariance of one unknown landmark (much larger than
    observed marginal covariances for the split approximation to hold).
    a_u: expected measurement information a new landmark would receive.
    density: expected landmarks per meter of frontier arc.
    """

    sigma_u: np.ndarray
    a_u: np.ndarray
    density: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma_u", check_information(self.sigma_u, 2, "sigma_u"))
        object.__setattr__(self, "a_u", check_information(self.a_u, 2, "a_u"))
        if self.density < 0:
            raise ValueError("landmark density must be nonnegative")


@dataclass(frozen=True)
class CandidateGoal:
    pose: Pose2
    visible_observed: tuple[int, ...]
    n_x: float
    dh_observed: float
    dh_unseen: float
    total: float
    reachable: bool
    sample_index: int = 0


@dataclass
class GainTerms:
    """Linearized blocks of the candidate's expected measurement factors."""

    visible: list[int]
    a_o: np.ndarray  # (2v, 2v) block-diagonal landmark information
    h_o: np.ndarray  # (2v, 2) landmark-to-goal cross blocks
    sigma_o: np.ndarray  # (2v, 2v) marginal covariance of the visible landmarks
    a_u: np.ndarray  # (2u, 2u) virtual new-landmark information
    h_u: np.ndarray  # (2u, 2) virtual cross blocks
    b: np.ndarray  # (2, 2) goal self-information, observed plus virtual
    n_x: float
    new_positions: list[np.ndarray] = field(default_factory=list)
    new_weights: list[float] = field(default_factory=list)


def visible_set(
    tfg: TopologicalFeatureGraph, pose: Pose2, sensing: SensorSpec
) -> list[int]:
    """Landmarks within range and field of view, not occluded by surface edges."""
    return visible_landmark_ids(tfg, pose, sensing.range, sensing.fov)


def _goal_jacobians(pose: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Measurement Jacobians wrt the goal position and the landmark position."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    j_goal = np.array([[-c, -s], [s, -c]])
    j_lm = np.array([[c, s], [-s, c]])
    return j_goal, j_lm


def expected_new_landmarks(
    pose: Pose2, sensing: SensorSpec, prior: ExplorationPrior, frontiers: list[Frontier],
    tfg: TopologicalFeatureGraph,
) -> tuple[float, list[np.ndarray], list[float]]:
    """Expected count plus virtual placements along each frontier arc.

    The count is density times total arc length (real valued).  Placements
    are spaced uniformly on the arc at sensing range, each carrying an equal
    share of the frontier's expected count; they exist only to linearize the
    virtual measurement factors and never enter the map.
    """
    positions: list[np.ndarray] = []
    weights: list[float] = []
    n_x = 0.0
    for f in frontiers:
        n_f = prior.density * f.arc_length
        n_x += n_f
        if n_f <= 0.0:
            continue
        m = max(1, int(round(n_f)))
        left = tfg.position(f.left_landmark_id)
        start = math.atan2(left[1] - pose.y, left[0] - pose.x)
        for i in range(m):
            bearing = start + f.angular_width * (i + 0.5) / m
            positions.append(
                pose.xy + sensing.range * np.array([math.cos(bearing), math.sin(bearing)])
            )
            weights.append(n_f / m)
    return n_x, positions, weights


def gain_terms(
    tfg: TopologicalFeatureGraph,
    pose: Pose2,
    sensing: SensorSpec,
    prior: ExplorationPrior,
    frontiers: list[Frontier],
    visible: list[int] | None = None,
) -> GainTerms:
    """Assemble the linearized gain blocks for one candidate."""
    if visible is None:
        visible = visible_set(tfg, pose, sensing)
    if tfg.marginal is None:
        raise ValueError("tfg carries no landmark marginal")
    omega = sensing.measurement_information
    j_goal, _ = _goal_jacobians(pose)

    v = len(visible)
    a_o = np.zeros((2 * v, 2 * v))
    h_o = np.zeros((2 * v, 2))
    b = np.zeros((2, 2))
    for i, lid in enumerate(visible):
        _, j_lm = _goal_jacobians(pose)
        sl = slice(2 * i, 2 * i + 2)
        a_o[sl, sl] = j_lm.T @ omega @ j_lm
        h_o[sl, :] = j_lm.T @ omega @ j_goal
        b += j_goal.T @ omega @ j_goal

    sigma_o = np.zeros((0, 0))
    if v:
        order = tfg.marginal.landmark_order
        sigma_full = tfg.marginal.covariance()
        idx = []
        for lid in visible:
            k = order.index(lid)
            idx.extend([2 * k, 2 * k + 1])
        sigma_o = sigma_full[np.ix_(idx, idx)]

    n_x, positions, weights = expected_new_landmarks(pose, sensing, prior, frontiers, tfg)
    u = len(positions)
    a_u = np.zeros((2 * u, 2 * u))
    h_u = np.zeros((2 * u, 2))
    for i, w in enumerate(weights):
        _, j_lm = _goal_jacobians(pose)
        sl = slice(2 * i, 2 * i + 2)
        a_u[sl, sl] = w * (j_lm.T @ omega @ j_lm)
        h_u[sl, :] = w * (j_lm.T @ omega @ j_goal)
        b += w * (j_goal.T @ omega @ j_goal)

    return GainTerms(
        visible=list(visible),
        a_o=a_o,
        h_o=h_o,
        sigma_o=sigma_o,
        a_u=a_u,
        h_u=h_u,
        b=b,
        n_x=n_x,
        new_positions=positions,
        new_weights=weights,
    )


def delta_entropy(
    terms: GainTerms, n_x: float, prior: ExplorationPrior
) -> tuple[float, float]:
    """Split expected log-determinant gain (observed part, unseen part).

    The observed part is exact given the linearization: the log determinant
    of I + Sigma_o A_o - Sigma_o H_o B^-1 H_o', evaluated in the visible
    block.  The unseen part is n_x times the per-landmark expected gain
    log det(I + sigma_u a_u).
    """
    dh_unseen = n_x * logdet_psd(np.eye(2) + prior.sigma_u @ prior.a_u)
    if not terms.visible:
        return 0.0, dh_unseen
    try:
        b_inv = np.linalg.inv(terms.b)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite("goal self-information block is singular") from exc
    delta = terms.a_o - terms.h_o @ b_inv @ terms.h_o.T
    delta = 0.5 * (delta + delta.T)
    # det(I + Sigma delta) == det(I + L' delta L) with Sigma = L L', which keeps
    # the logdet argument symmetric positive definite
    chol = np.linalg.cholesky(terms.sigma_o)
    dh_observed = logdet_psd(np.eye(delta.shape[0]) + chol.T @ delta @ chol)
    return dh_observed, dh_unseen


def exact_delta_entropy(
    graph: FactorGraph,
    goal: Pose2,
    visible: list[int],
    sensing: SensorSpec,
) -> float:
    """Brute-force oracle: log-determinant gain of appending the goal.

    Appends a 2D goal-position variable with one linearized measurement
    factor per visible landmark, assembles both joint information matrices
    densely, Schur-complements onto the landmarks, and returns the exact
    log-determinant difference.  No approximation beyond the linearization.
    """
    if not visible:
        return 0.0
    est = graph.estimate()
    info = assemble_information(graph, est)
    dense = info.matrix.toarray()
    nl = info.landmark_dim
    n = dense.shape[0]

    before = _schur_logdet(dense, nl)

    after = np.zeros((n + 2, n + 2))
    after[:n, :n] = dense
    omega = sensing.measurement_information
    j_goal, j_lm = _goal_jacobians(goal)
    lm_index = {lid: i for i, lid in enumerate(info.landmark_order)}
    for lid in visible:
        k = lm_index[lid]
        sl = slice(2 * k, 2 * k + 2)
        after[sl, sl] += j_lm.T @ omega @ j_lm
        after[sl, n : n + 2] += j_lm.T @ omega @ j_goal
        after[n : n + 2, sl] += j_goal.T @ omega @ j_lm
        after[n : n + 2, n : n + 2] += j_goal.T @ omega @ j_goal
    return _schur_logdet(after, nl) - before


def _schur_logdet(dense: np.ndarray, nl: int) -> float:
    lam_f = dense[:nl, :nl]
    lam_fr = dense[:nl, nl:]
    lam_r = dense[nl:, nl:]
    if lam_r.shape[0]:
        lam_f = lam_f - lam_fr @ np.linalg.solve(lam_r, lam_fr.T)
    return logdet_psd(0.5 * (lam_f + lam_f.T))


def score_candidates(
    tfg: TopologicalFeatureGraph,
    samples: list[Pose2],
    sensing: SensorSpec,
    prior: ExplorationPrior,
    anchors: list[Pose2] | None = None,
) -> list[CandidateGoal]:
    """Score samples, best first; ties break to the lower sample index.

    A sample is reachable when it can be observed from one of the anchor
    poses (previous goal locations).  Unreachable samples keep their scores
    but are flagged and excluded from the argmax.
    """
    if not samples:
        raise ValueError("no samples to score")
    sweep = full_rotation(sensing)
    out: list[CandidateGoal] = []
    for idx, pose in enumerate(samples):
        reachable = anchors is None or any(
            point_visible(tfg, a.xy, pose.xy, sensing.range) for a in anchors
        )
        visible = visible_set(tfg, pose, sweep)
        frontiers = detect_frontiers(tfg, pose, sweep)
        terms = gain_terms(tfg, pose, sweep, prior, frontiers, visible=visible)
        dh_o, dh_u = delta_entropy(terms, terms.n_x, prior)
        out.append(
            CandidateGoal(
                pose=pose,
                visible_observed=tuple(visible),
                n_x=terms.n_x,
                dh_observed=dh_o,
                dh_unseen=dh_u,
                total=dh_o + dh_u,
                reachable=reachable,
                sample_index=idx,
            )
        )
    if not any(c.reachable for c in out):
        raise NoReachableCandidate("no sample is visible from any anchor")
    out.sort(key=lambda c: (-c.total, c.sample_index))
    return out

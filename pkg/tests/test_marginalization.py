import math

import numpy as np
import pytest
import scipy.sparse as sp

from tfgslam.errors import IllegalCompress, NonPositiveDefinite, SingularPoseBlock
from tfgslam.factor_graph import (
    FactorGraph,
    InformationMatrix,
    LandmarkPrior,
    MarginalInfo,
    Measurement,
    Odometry,
    PosePrior,
    assemble_information,
    compress_between_goals,
    landmark_entropy,
    map_solve,
    marginal_landmark_info,
)
from tfgslam.se2 import Pose2, pose_compose, wrap_angle
from helpers import build_noiseless_graph, make_noiseless_world, random_scene


def random_psd(rng, n, jitter=0.5):
    a = rng.standard_normal((n, n))
    return a @ a.T + jitter * np.eye(n)


def make_info(matrix, n_landmarks, n_poses):
    return InformationMatrix(
        sp.csr_matrix(matrix), list(range(n_landmarks)), list(range(n_poses))
    )


def test_block_diagonal_marginal_is_landmark_block():
    lam = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])  # one landmark (2) + one pose (3)
    m = marginal_landmark_info(make_info(lam, 1, 1))
    assert np.allclose(m.lambda_l, np.diag([1.0, 2.0]))
    assert m.landmark_order == [0]


def test_schur_matches_inversion_oracle_on_random_psd():
    rng = np.random.default_rng(42)
    for _ in range(20):
        lam = random_psd(rng, 7)  # two landmarks (4) + one pose (3)
        m = marginal_landmark_info(make_info(lam, 2, 1))
        sigma = np.linalg.inv(lam)
        oracle = np.linalg.inv(sigma[:4, :4])
        assert np.allclose(m.lambda_l, oracle, atol=1e-9)


def test_schur_requires_positive_definite_pose_block():
    lam = np.zeros((5, 5))
    lam[:2, :2] = np.eye(2)
    with pytest.raises(SingularPoseBlock):
        marginal_landmark_info(make_info(lam, 1, 1))


def test_marginal_is_psd_for_assembled_graphs():
    rng = np.random.default_rng(9)
    for _ in range(10):
        graph, _ = random_scene(rng, n_landmarks=4, n_poses=3)
        m = marginal_landmark_info(assemble_information(graph, graph.estimate()))
        assert np.min(np.linalg.eigvalsh(m.lambda_l)) >= -1e-9


def test_schur_consistency_with_dense_inversion_small_graphs():
    # marginal covariance from full dense inversion equals the inverse of the
    # Schur complement on graphs with at most 12 variables
    rng = np.random.default_rng(77)
    for _ in range(10):
        n_landmarks = int(rng.integers(2, 5))
        n_poses = int(rng.integers(1, 4))
        if 2 * n_landmarks + 3 * n_poses > 12 * 3:
            continue
        graph, _ = random_scene(rng, n_landmarks=n_landmarks, n_poses=n_poses)
        info = assemble_information(graph, graph.estimate())
        dense = info.matrix.toarray()
        nl = info.landmark_dim
        cov_landmarks = np.linalg.inv(dense)[:nl, :nl]
        m = marginal_landmark_info(info)
        assert np.allclose(np.linalg.inv(m.lambda_l), cov_landmarks, atol=1e-8)


def test_entropy_closed_forms():
    assert landmark_entropy(MarginalInfo([0], np.eye(2))) == 0.0
    assert landmark_entropy(MarginalInfo([0], 4.0 * np.eye(2))) == pytest.approx(
        -0.5 * math.log(16.0)
    )
    assert landmark_entropy(MarginalInfo([], np.zeros((0, 0)))) == 0.0


def test_entropy_requires_positive_definite():
    with pytest.raises(NonPositiveDefinite):
        landmark_entropy(MarginalInfo([0], np.diag([1.0, -1.0])))


def test_adding_measurement_never_increases_entropy():
    rng = np.random.default_rng(123)
    for _ in range(100):
        graph, _ = random_scene(rng, n_landmarks=3, n_poses=2)
        est = graph.estimate()
        before = landmark_entropy(marginal_landmark_info(assemble_information(graph, est)))
        pid = int(rng.integers(0, 2))
        lid = int(rng.integers(0, 3))
        sigma = float(rng.uniform(0.02, 0.5))
        graph.add_factor(
            Measurement(pid, lid, rng.normal(0, 1, size=2), (1 / sigma**2) * np.eye(2))
        )
        after = landmark_entropy(marginal_landmark_info(assemble_information(graph, est)))
        assert after <= before + 1e-9


# -- pose-chain compression -----------------------------------------------------


def two_step_chain(q: np.ndarray, deltas) -> FactorGraph:
    g = FactorGraph()
    g.add_pose(0, Pose2(0, 0, 0))
    cur = Pose2(0, 0, 0)
    info = np.linalg.inv(q)
    for i, d in enumerate(deltas):
        cur = pose_compose(cur, d)
        g.add_pose(i + 1, cur)
        g.add_factor(Odometry(i, i + 1, d, info))
    g.add_factor(PosePrior(0, Pose2(0, 0, 0), 1e8 * np.eye(3)))
    return g


def test_composed_covariance_matches_monte_carlo():
    q = np.diag([0.0004, 0.0004, 0.0009])
    deltas = [Pose2(1, 0, 0), Pose2(1, 0, 0)]
    g = two_step_chain(q, deltas)
    out = compress_between_goals(g, 0, 2)
    odo = [f for f in out.factors if isinstance(f, Odometry)]
    assert len(odo) == 1
    composed = odo[0]
    assert (composed.delta.x, composed.delta.y, composed.delta.theta) == pytest.approx(
        (2, 0, 0), abs=1e-12
    )
    cov = np.linalg.inv(composed.information)

    rng = np.random.default_rng(2024)
    n = 100_000
    chol = np.linalg.cholesky(q)
    samples = np.zeros((n, 3))
    for k in range(n):
        acc = Pose2(0, 0, 0)
        for d in deltas:
            noise = chol @ rng.standard_normal(3)
            acc = pose_compose(acc, Pose2(d.x + noise[0], d.y + noise[1], d.theta + noise[2]))
        samples[k] = [acc.x, acc.y, acc.theta]
    mc_cov = np.cov(samples.T)
    assert np.linalg.norm(cov - mc_cov) / np.linalg.norm(mc_cov) < 0.02


def test_compression_with_no_intermediates_is_identity():
    q = np.diag([1e-4, 1e-4, 1e-4])
    g = two_step_chain(q, [Pose2(1, 0, 0.1)])
    out = compress_between_goals(g, 0, 1)
    assert len(out.factors) == len(g.factors)
    assert set(out.poses) == set(g.poses)


def test_compression_preserves_end_pose_map_estimate():
    # measurements are generated consistent with the dead-reckoned chain (the
    # composed-factor marginalization is exact to first order, so near-zero
    # residuals keep the two MAP estimates together)
    rng = np.random.default_rng(55)
    q = np.diag([0.001, 0.001, 0.0005])
    deltas = [
        Pose2(0.8 + rng.normal(0, 0.05), rng.normal(0, 0.05), rng.normal(0, 0.05))
        for _ in range(4)
    ]
    g = two_step_chain(q, deltas)
    from tfgslam.se2 import point_in_robot_frame

    landmark = np.array([2.0, 1.0])
    g.add_landmark(0, landmark)
    g.add_factor(LandmarkPrior(0, landmark, 0.01 * np.eye(2)))
    z_start = point_in_robot_frame(g.poses[0], landmark) + np.array([1e-4, -1e-4])
    z_end = point_in_robot_frame(g.poses[4], landmark)
    g.add_factor(Measurement(0, 0, z_start, 100 * np.eye(2)))
    g.add_factor(Measurement(4, 0, z_end, 100 * np.eye(2)))
    before = map_solve(g)
    compressed = compress_between_goals(g, 0, 4)
    after = map_solve(compressed)
    p_before, p_after = before.estimate.poses[4], after.estimate.poses[4]
    assert p_after.x == pytest.approx(p_before.x, abs=1e-6)
    assert p_after.y == pytest.approx(p_before.y, abs=1e-6)
    assert wrap_angle(p_after.theta - p_before.theta) == pytest.approx(0.0, abs=1e-6)


def test_compression_drops_transient_and_rejects_retained_measurements():
    q = np.diag([1e-4, 1e-4, 1e-4])
    g = two_step_chain(q, [Pose2(1, 0, 0), Pose2(1, 0, 0)])
    g.add_landmark(0, np.array([1.0, 1.0]))
    g.add_factor(LandmarkPrior(0, np.array([1.0, 1.0]), np.eye(2)))
    g.add_factor(Measurement(1, 0, np.array([0.0, 1.0]), np.eye(2), transient=True))
    out = compress_between_goals(g, 0, 2)
    assert 1 not in out.poses
    assert not any(isinstance(f, Measurement) and f.pose_id == 1 for f in out.factors)

    g2 = two_step_chain(q, [Pose2(1, 0, 0), Pose2(1, 0, 0)])
    g2.add_landmark(0, np.array([1.0, 1.0]))
    g2.add_factor(LandmarkPrior(0, np.array([1.0, 1.0]), np.eye(2)))
    g2.add_factor(Measurement(1, 0, np.array([0.0, 1.0]), np.eye(2), transient=False))
    with pytest.raises(IllegalCompress):
        compress_between_goals(g2, 0, 2)

"""Active SLAM over a topological feature map, with simulator and benchmark CLI."""

from .se2 import Pose2, point_in_robot_frame, pose_between, pose_compose, wrap_angle
from .factor_graph import (
    FactorGraph,
    GraphEstimate,
    LandmarkEstimate,
    LandmarkPrior,
    MarginalInfo,
    Measurement,
    Odometry,
    PosePrior,
    assemble_information,
    compress_between_goals,
    dump_graph,
    landmark_entropy,
    load_graph,
    map_solve,
    marginal_landmark_info,
)
from .tfg import (
    Frontier,
    SurfaceEdge,
    TopologicalFeatureGraph,
    collision_chance,
    detect_frontiers,
    learn_edges,
    nearest_obstacle_distance,
    point_segment_distance,
    segment_intersects,
)
from .info_gain import (
    CandidateGoal,
    ExplorationPrior,
    SensorSpec,
    delta_entropy,
    exact_delta_entropy,
    gain_terms,
    score_candidates,
    visible_set,
)
from .planner import (
    PlannedPath,
    Roadmap,
    RoadmapEdge,
    RoadmapNode,
    RoadmapParams,
    build_roadmap,
    plan_next,
    sample_free,
    shortest_path,
)
from .sim import (
    NoiseModel,
    RunResult,
    SimConfig,
    StageRecord,
    WorldModel,
    place_boundary_landmarks,
    run_active_slam,
    run_nearest_frontier,
    sense,
    step_motion,
)
from .scenario import Scenario, load_scenario

__all__ = [name for name in dir() if not name.startswith("_")]

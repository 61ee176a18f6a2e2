"""Probabilistic point-cloud registration.

Stochastic-gradient ICP with a particle extension that keeps a whole set
of pose hypotheses coupled through kernel attraction and repulsion, so the
result is a sample-based posterior over the 6-DoF alignment instead of a
single estimate. Includes posterior-quality metrics, trajectory error
metrics, uncertainty-propagating odometry, synthetic benchmark scenes,
and a batch CLI.
"""

from .cloud import (
    FORMATS,
    PointCloud,
    estimate_normals,
    load_cloud,
    transform_cloud,
    voxel_downsample,
    write_cloud,
)
from .errors import (
    CloudParseError,
    DivergedError,
    InputError,
    MatchRejectionError,
    NumericalError,
    RegistrationError,
)
from .evaluation import (
    ANGULAR_DIMS,
    DIMENSION_NAMES,
    PoseDistribution,
    fit_gaussian,
    kde_1d,
    kl_gaussian,
    kl_rotation,
    kl_translation,
    mc_ground_truth,
    metrics_report,
    ovl_coefficient,
    pose_summary,
    relative_pose_error,
)
from .correspondence import (
    MiniBatch,
    NeighborIndex,
    build_index,
    match_batch,
    sample_minibatch,
)
from .geometry import (
    Pose6D,
    compose,
    invert,
    matrix_to_pose,
    pose_to_matrix,
    rotation_from_euler,
    rotation_partials,
    se3_adjoint,
    skew,
    transform_points,
    wrap_angle,
)
from .odometry import (
    TrajectoryEstimate,
    build_trajectory,
    compound_covariance,
    compound_poses,
    confidence_ellipse,
    ellipse_rows,
    trajectory_rows,
)
from .sgd import (
    AdamState,
    IcpConfig,
    IcpDiagnostics,
    adam_step,
    batch_gradients,
    residual_cost,
    run_sgd_icp,
)
from .stein import (
    UNIFORM_PRIOR,
    EngineResult,
    PriorConfig,
    SteinConfig,
    median_bandwidth,
    prior_gradient,
    rotation_kernel,
    run_particle_engine,
    run_stein_icp,
    sample_initial_particles,
    sgd_equivalent_config,
    stein_direction,
    translation_kernel,
)
from .synthetic import BLOCK_GAP, SCENES, blob_scene, block_scene, make_scene, ring_scene

__version__ = "0.1.0"

__all__ = [
    "ANGULAR_DIMS",
    "AdamState",
    "BLOCK_GAP",
    "CloudParseError",
    "DIMENSION_NAMES",
    "DivergedError",
    "EngineResult",
    "FORMATS",
    "IcpConfig",
    "IcpDiagnostics",
    "InputError",
    "MatchRejectionError",
    "MiniBatch",
    "NeighborIndex",
    "NumericalError",
    "PointCloud",
    "Pose6D",
    "PoseDistribution",
    "PriorConfig",
    "RegistrationError",
    "SCENES",
    "SteinConfig",
    "TrajectoryEstimate",
    "UNIFORM_PRIOR",
    "adam_step",
    "batch_gradients",
    "blob_scene",
    "block_scene",
    "build_index",
    "build_trajectory",
    "compose",
    "compound_covariance",
    "compound_poses",
    "confidence_ellipse",
    "ellipse_rows",
    "estimate_normals",
    "fit_gaussian",
    "invert",
    "kde_1d",
    "kl_gaussian",
    "kl_rotation",
    "kl_translation",
    "load_cloud",
    "make_scene",
    "match_batch",
    "matrix_to_pose",
    "mc_ground_truth",
    "median_bandwidth",
    "metrics_report",
    "ovl_coefficient",
    "pose_summary",
    "pose_to_matrix",
    "prior_gradient",
    "relative_pose_error",
    "residual_cost",
    "ring_scene",
    "rotation_from_euler",
    "rotation_kernel",
    "rotation_partials",
    "run_particle_engine",
    "run_sgd_icp",
    "run_stein_icp",
    "sample_initial_particles",
    "sample_minibatch",
    "se3_adjoint",
    "sgd_equivalent_config",
    "skew",
    "stein_direction",
    "trajectory_rows",
    "transform_cloud",
    "transform_points",
    "translation_kernel",
    "voxel_downsample",
    "wrap_angle",
    "write_cloud",
]

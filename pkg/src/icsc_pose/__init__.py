"""Infrastructure-less camera pose estimation against a cylinder-modeled
scene: geometry, losses, a numpy autodiff CNN, a domain-randomized renderer,
and the training/evaluation harness tying them together."""

from .geometry import (
    CameraIntrinsics,
    CylinderModel,
    NonDifferentiableRegion,
    Pose,
    Ray,
    RayHit,
    angular_error,
    center_view_ray,
    fallback_jacobian,
    fallback_surface_point,
    icsc,
    icsc_hit,
    icsc_jacobian,
    intersect_ray_cylinder,
    pixel_ray,
    quat_from_yaw_tilt,
    quat_normalize,
    quat_rotate,
)
from .losses import (
    BetaWeight,
    LossBreakdown,
    LossState,
    evaluate_loss,
    loss_beta,
    loss_icsc_component,
    loss_icsc_total,
    loss_learnable,
)
from .network import ModelConfig, PoseRegressor, init_parameters
from .optim import Adam, AdamState
from .checkpoint import Checkpoint
from .renderer import (
    Bounds,
    RandomizationSpec,
    SceneGeometry,
    SurfaceParams,
    cylinder_mask,
    render,
    render_overlay,
    sample_spec,
)
from .dataset import generate_dataset, load_split, per_image_seed, read_manifest
from .metrics import MetricsReport, compute_metrics, lower_median
from .training import TrainConfig, TrainResult, run_comparison, train
from .gradcheck import run_gradcheck

__version__ = "0.1.0"

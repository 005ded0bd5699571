"""Two-stage lane detection at desk scale.

Stage one proposes lane-edge pixels with a small encoder-decoder network;
stage two localizes lane lines from the proposed edge coordinates with an
order-invariant point encoder and a recurrent decoder. Both run on a minimal
float64 tensor library with reverse-mode autodiff, and train on synthetic
top-down road scenes with exact ground truth.
"""

from .geometry import (
    Homography,
    KeyValues,
    QuadraticLane,
    homography_from_correspondences,
    horizontal_distance,
    ipm_warp,
    keys_to_params,
    params_to_keys,
    warp_point,
)
from .localizer import (
    LanePrediction,
    LocalizerConfig,
    PointSet,
    combined_loss,
    key_value_loss,
    min_distance_loss,
    predict_lanes,
)
from .proposal import (
    ProposalMap,
    ProposalNetConfig,
    balanced_bce_loss,
    extract_points,
    proposal_forward,
)
from .scenes import Sample, SceneSpec, generate_dataset, generate_scene, read_dataset, write_dataset
from .evaluate import Detector, EvalReport, evaluate, fps_benchmark, render_overlay
from .training import TrainConfig, finetune_weak, train_localizer, train_proposal

__version__ = "0.1.0"

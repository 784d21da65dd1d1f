"""Joint Bezier / key-point lane modeling, GL-BK lane matching, and the
F-Score / Chamfer-AP evaluation protocol for 3D lanes."""

from .errors import LaneError
from .lane_model import (
    AnnotatedLane,
    BezierLane,
    Complexity,
    JointLane,
    KeyPointLane,
    PolyBaselineLane,
    classify_complexity,
    fit_bezier,
    fit_polynomial_baseline,
    joint_lane,
    modeling_error,
    resample_keypoints,
    sample_bezier,
)
from .matching import (
    Assignment,
    ClassScores,
    CostWeights,
    GroundTruthLane,
    PredictedLane,
    cost_matrix,
    hungarian,
    match_frame,
    total_loss,
)
from .metrics import EvalResult, MatchCriteria, chamfer_distance, evaluate
from .projection import CameraRig, PerceptionRange, surround_to_frontview

__version__ = "0.1.0"

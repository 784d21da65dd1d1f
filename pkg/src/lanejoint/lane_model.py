"""Lane representations: annotated polylines, interpolated key points, Bezier
control points, and the polynomial baseline used for modeling comparisons.

Coordinates follow the ego convention: X lateral (right), Y longitudinal
(forward), Z up, all in meters.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Sequence

import numpy as np
from scipy.special import comb

from .errors import (
    DegenerateLane,
    InsufficientPoints,
    InvalidConfig,
    OutOfDomain,
)

logger = logging.getLogger(__name__)

DUPLICATE_EPS = 1e-9

ParamMode = Literal["chord", "uniform"]


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidConfig(f"expected an (N, 3) point array, got shape {arr.shape}")
    return arr


@dataclass(eq=False)
class AnnotatedLane:
    """Variable-length ordered 3D polyline with a class label."""

    points: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        self.points = _as_points(self.points)
        self.class_id = int(self.class_id)
        if len(self.points) < 2:
            raise DegenerateLane(f"lane needs at least 2 points, got {len(self.points)}")
        if not np.all(np.isfinite(self.points)):
            raise DegenerateLane("lane contains non-finite coordinates")
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        if np.any(seg <= DUPLICATE_EPS):
            idx = int(np.argmax(seg <= DUPLICATE_EPS))
            raise DegenerateLane(f"consecutive duplicate points at index {idx}")

    @classmethod
    def from_raw(cls, points, class_id: int = 0) -> "AnnotatedLane":
        """Build a lane from raw annotations, collapsing consecutive duplicates.

        Raises DegenerateLane when fewer than two distinct points remain.
        """
        arr = _as_points(points)
        if len(arr) == 0:
            raise DegenerateLane("lane has no points")
        if not np.all(np.isfinite(arr)):
            raise DegenerateLane("lane contains non-finite coordinates")
        keep = [0]
        for i in range(1, len(arr)):
            if np.linalg.norm(arr[i] - arr[keep[-1]]) > DUPLICATE_EPS:
                keep.append(i)
        if len(keep) < len(arr):
            logger.warning("collapsed %d duplicate point(s)", len(arr) - len(keep))
        return cls(arr[keep], class_id)

    def __len__(self):
        return len(self.points)


@dataclass(eq=False)
class KeyPointLane:
    """Fixed-count polyline (interpolated key points or sampled curve)."""

    points: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        self.points = _as_points(self.points)
        self.class_id = int(self.class_id)

    def __len__(self):
        return len(self.points)


@dataclass(eq=False)
class BezierLane:
    """Bezier curve given by its control points (degree = len(controls) - 1).

    ``rank_deficient`` and ``residual_rms`` are fit metadata; they stay at
    their defaults for curves not produced by :func:`fit_bezier`.
    """

    controls: np.ndarray
    class_id: int = 0
    rank_deficient: bool = False
    residual_rms: float = 0.0

    def __post_init__(self):
        self.controls = _as_points(self.controls)
        self.class_id = int(self.class_id)

    def __len__(self):
        return len(self.controls)


@dataclass(eq=False)
class JointLane:
    keypoints: KeyPointLane
    controls: BezierLane
    class_id: int = 0

    def __post_init__(self):
        if not (self.keypoints.class_id == self.controls.class_id == self.class_id):
            raise InvalidConfig("joint lane parts disagree on class_id")


@dataclass(eq=False)
class PolyBaselineLane:
    """X = f(Y) and Z = g(Y) polynomials, coefficients in ascending power order."""

    coeffs_xy: np.ndarray
    coeffs_zy: np.ndarray
    degree: int
    y_range: tuple[float, float] = (0.0, 1.0)
    class_id: int = 0
    rank_deficient: bool = False

    def __post_init__(self):
        self.coeffs_xy = np.asarray(self.coeffs_xy, dtype=np.float64)
        self.coeffs_zy = np.asarray(self.coeffs_zy, dtype=np.float64)
        if len(self.coeffs_xy) != self.degree + 1 or len(self.coeffs_zy) != self.degree + 1:
            raise InvalidConfig("coefficient count must be degree + 1")

    def sample(self, n: int) -> KeyPointLane:
        """Evaluate the baseline at ``n`` evenly spaced Y values over its fitted range."""
        if n < 2:
            raise InvalidConfig("need n >= 2 samples")
        y = np.linspace(self.y_range[0], self.y_range[1], n)
        x = np.polynomial.polynomial.polyval(y, self.coeffs_xy)
        z = np.polynomial.polynomial.polyval(y, self.coeffs_zy)
        return KeyPointLane(np.column_stack([x, y, z]), self.class_id)


class Complexity(str, Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"


def _cumulative_length(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def chord_length_params(lane: AnnotatedLane) -> np.ndarray:
    """Normalized cumulative arc length at each annotated point."""
    cum = _cumulative_length(lane.points)
    total = cum[-1]
    if total < DUPLICATE_EPS:
        raise DegenerateLane(f"lane total length {total:g} m is degenerate")
    params = cum / total
    params[-1] = 1.0
    return params


def uniform_params(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def curve_params(lane: AnnotatedLane, param_mode: ParamMode = "chord") -> np.ndarray:
    if param_mode == "chord":
        return chord_length_params(lane)
    if param_mode == "uniform":
        return uniform_params(len(lane))
    raise InvalidConfig(f"unknown param_mode {param_mode!r}")


def bernstein_design_matrix(params: Sequence[float], n_controls: int) -> np.ndarray:
    """Rows are Bernstein weights of degree ``n_controls - 1`` at each parameter."""
    if n_controls < 2:
        raise InvalidConfig(f"need at least 2 control points, got {n_controls}")
    t = np.asarray(params, dtype=np.float64).reshape(-1, 1)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise OutOfDomain("Bernstein parameters must lie in [0, 1]")
    n = n_controls - 1
    j = np.arange(n_controls)
    return comb(n, j) * (1.0 - t) ** (n - j) * t ** j


def bezier_residual(controls: np.ndarray, design: np.ndarray, points: np.ndarray) -> float:
    """Sum of squared residuals of a control polygon against target points."""
    r = design @ controls - points
    return float(np.sum(r * r))


def fit_bezier(lane: AnnotatedLane, n_controls: int, param_mode: ParamMode = "chord") -> BezierLane:
    """Least-squares Bezier control points for an annotated lane.

    One design-matrix row per annotated point; the three axes are solved
    independently (lstsq with a 3-column right-hand side). A rank-deficient
    system falls back to the minimum-norm solution and sets
    ``rank_deficient`` on the result.
    """
    if len(lane) < n_controls:
        raise InsufficientPoints(f"{len(lane)} points cannot determine {n_controls} control points")
    design = bernstein_design_matrix(curve_params(lane, param_mode), n_controls)
    controls, _, rank, _ = np.linalg.lstsq(design, lane.points, rcond=None)
    deficient = rank < n_controls
    if deficient:
        logger.warning("rank-deficient Bezier design (rank %d < %d)", rank, n_controls)
    rss = bezier_residual(controls, design, lane.points)
    return BezierLane(controls, lane.class_id, bool(deficient), math.sqrt(rss / len(lane)))


def eval_bezier(curve: BezierLane, t) -> np.ndarray:
    """Point(s) on the curve; ``t`` may be a scalar or an array of parameters."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(tt < 0.0) or np.any(tt > 1.0):
        raise OutOfDomain(f"Bezier parameter outside [0, 1]: {t}")
    out = bernstein_design_matrix(tt, len(curve)) @ curve.controls
    # Endpoints exactly, regardless of rounding in the basis.
    out[tt == 0.0] = curve.controls[0]
    out[tt == 1.0] = curve.controls[-1]
    return out[0] if scalar else out


def sample_bezier(curve: BezierLane, n: int) -> KeyPointLane:
    if n < 2:
        raise InvalidConfig(f"need n >= 2 samples, got {n}")
    return KeyPointLane(eval_bezier(curve, uniform_params(n)), curve.class_id)


def lerp_point(a, b, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return (1.0 - t) * a + t * b


def _resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    cum = _cumulative_length(points)
    total = cum[-1]
    if total < DUPLICATE_EPS:
        raise DegenerateLane(f"lane total length {total:g} m is degenerate")
    targets = np.linspace(0.0, total, n)
    seg = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(points) - 2)
    seg_len = cum[seg + 1] - cum[seg]
    t = np.clip((targets - cum[seg]) / seg_len, 0.0, 1.0)[:, None]
    out = lerp_point(points[seg], points[seg + 1], t)
    out[0] = points[0]
    out[-1] = points[-1]
    return out


def resample_keypoints(lane: AnnotatedLane, n_keypoints: int) -> KeyPointLane:
    """Fixed-count key points at uniform arc-length fractions along the lane."""
    if n_keypoints < 2:
        raise InvalidConfig(f"need at least 2 key points, got {n_keypoints}")
    return KeyPointLane(_resample_polyline(lane.points, n_keypoints), lane.class_id)


def joint_lane(
    lane: AnnotatedLane, n_keypoints: int, n_controls: int, param_mode: ParamMode = "chord"
) -> JointLane:
    return JointLane(
        resample_keypoints(lane, n_keypoints),
        fit_bezier(lane, n_controls, param_mode),
        lane.class_id,
    )


def fit_polynomial_baseline(lane: AnnotatedLane, degree: int = 3) -> PolyBaselineLane:
    """Least-squares X(Y) and Z(Y) polynomials, the anchor-style baseline.

    Lanes that fold back in Y (U-shapes) make this model inadequate; a
    rank-deficient Vandermonde system is solved min-norm and flagged.
    """
    if degree < 0:
        raise InvalidConfig("degree must be >= 0")
    if len(lane) < degree + 1:
        raise InsufficientPoints(f"{len(lane)} points cannot fit a degree-{degree} polynomial")
    y = lane.points[:, 1]
    vander = np.polynomial.polynomial.polyvander(y, degree)
    coeffs, _, rank, _ = np.linalg.lstsq(vander, lane.points[:, [0, 2]], rcond=None)
    deficient = rank < degree + 1
    if deficient:
        logger.warning("rank-deficient polynomial baseline (rank %d < %d)", rank, degree + 1)
    return PolyBaselineLane(
        coeffs[:, 0], coeffs[:, 1], degree, (float(y.min()), float(y.max())),
        lane.class_id, bool(deficient),
    )


def densify(points: np.ndarray, spacing: float = 0.05, min_points: int = 200) -> np.ndarray:
    """Resample a polyline at roughly ``spacing`` meters, keeping its vertices' path."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 1:
        return points.copy()
    total = _cumulative_length(points)[-1]
    if total < DUPLICATE_EPS:
        return points[:1].copy()
    n = max(min_points, int(math.ceil(total / spacing)) + 1)
    return _resample_polyline(points, n)


def point_to_polyline(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest location on a polyline's segments."""
    points = np.asarray(points, dtype=np.float64)
    polyline = np.asarray(polyline, dtype=np.float64)
    if len(polyline) == 1:
        return np.linalg.norm(points - polyline[0], axis=1)
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0.0, denom, 1.0)
    best = np.full(len(points), np.inf)
    # Chunked so memory stays bounded for long, dense lanes.
    for start in range(0, len(points), 512):
        p = points[start:start + 512, None, :]
        t = np.clip(np.einsum("pij,ij->pi", p - a, ab) / denom, 0.0, 1.0)
        d = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)
        best[start:start + 512] = d.min(axis=1)
    return best


def modeling_error(model_points: KeyPointLane, lane: AnnotatedLane, spacing: float = 0.05) -> float:
    """Symmetric Chamfer distance between the model polyline and the annotation.

    Each polyline is sampled densely and every sample is measured against
    the other polyline's segments, so the value compares the curves rather
    than their differently spaced vertices.
    """
    model = np.asarray(model_points.points, dtype=np.float64)
    ann = lane.points
    d_model = point_to_polyline(densify(model, spacing), ann)
    d_ann = point_to_polyline(densify(ann, spacing), model)
    return 0.5 * (float(np.mean(d_model)) + float(np.mean(d_ann)))


def classify_complexity(frame: Sequence[AnnotatedLane]) -> Complexity:
    """Complex iff some segment's X-Y heading is more than 45 deg off the +Y axis."""
    if len(frame) == 0:
        raise InvalidConfig("cannot classify an empty frame")
    for lane in frame:
        d = np.diff(lane.points[:, :2], axis=0)
        dx, dy = np.abs(d[:, 0]), d[:, 1]
        moving = np.hypot(d[:, 0], d[:, 1]) > DUPLICATE_EPS
        # angle > 45 deg  <=>  dy < |dx|; exactly 45 deg stays Simple
        if np.any(moving & (dy < dx)):
            return Complexity.COMPLEX
    return Complexity.SIMPLE

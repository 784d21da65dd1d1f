"""Global-to-local lane matching: five cost terms, the frame cost matrix,
an exact Hungarian solver, and the post-assignment loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidAssignment,
    InvalidClass,
    InvalidConfig,
    InvalidMatrix,
    ShapeMismatch,
    TooFewPoints,
    TooManyGroundTruths,
)
from .lane_model import BezierLane, KeyPointLane

SEGMENT_EPS = 1e-9
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_FLOOR = 1e-7

TERMS = ("position", "shape", "smoothness", "bezier", "class")


@dataclass(eq=False)
class ClassScores:
    """Per-class probabilities; the last index is background / no-object."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(self.probs) < 2:
            raise InvalidConfig("class scores need at least one class plus background")
        if np.any(self.probs < 0.0) or np.any(self.probs > 1.0):
            raise InvalidConfig("class probabilities must lie in [0, 1]")
        if abs(self.probs.sum() - 1.0) > 1e-6:
            raise InvalidConfig(f"class probabilities sum to {self.probs.sum():.6f}, not 1")

    @property
    def background(self) -> int:
        return len(self.probs) - 1

    @classmethod
    def from_confidence(cls, class_id: int, confidence: float, num_classes: int) -> "ClassScores":
        """Put ``confidence`` on ``class_id`` and the remainder on background."""
        if not 0 <= class_id < num_classes - 1:
            raise InvalidClass(f"class {class_id} outside foreground range [0, {num_classes - 2}]")
        probs = np.zeros(num_classes)
        probs[class_id] = confidence
        probs[-1] += 1.0 - confidence
        return cls(probs)

    def label(self) -> int:
        """Most probable foreground class."""
        return int(np.argmax(self.probs[:-1]))

    def confidence(self) -> float:
        return float(np.max(self.probs[:-1]))


@dataclass(eq=False)
class PredictedLane:
    keypoints: KeyPointLane
    controls: BezierLane
    scores: ClassScores


@dataclass(eq=False)
class GroundTruthLane:
    keypoints: Optional[KeyPointLane]
    controls: Optional[BezierLane]
    class_id: int
    is_padding: bool = False

    @classmethod
    def padding(cls, background: int) -> "GroundTruthLane":
        return cls(None, None, background, True)


@dataclass(frozen=True)
class Box6:
    x_min: float
    y_min: float
    z_min: float
    x_max: float
    y_max: float
    z_max: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min, self.x_max, self.y_max, self.z_max])


@dataclass(frozen=True)
class CostWeights:
    lambda_position: float = 1.0
    alpha_shape: float = 1.0
    beta_smoothness: float = 1.0
    gamma_bezier: float = 1.0
    delta_class: float = 1.0

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidConfig("cost weights must be finite and non-negative")
        if not np.any(w > 0):
            raise InvalidConfig("at least one cost weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([
            self.lambda_position, self.alpha_shape, self.beta_smoothness,
            self.gamma_bezier, self.delta_class,
        ], dtype=np.float64)


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    total_cost: float


@dataclass
class LossBreakdown:
    total: float
    terms: dict[str, float]
    per_pair: list[dict] = field(default_factory=list)


# -- cost terms ---------------------------------------------------------------

def _points(lane) -> np.ndarray:
    return lane.points if isinstance(lane, KeyPointLane) else np.asarray(lane, dtype=np.float64)


def _bbox_array(points: np.ndarray) -> np.ndarray:
    return np.concatenate([points.min(axis=-2), points.max(axis=-2)], axis=-1)


def bbox_of(lane: KeyPointLane) -> Box6:
    pts = _points(lane)
    if len(pts) == 0:
        raise TooFewPoints("cannot box an empty lane")
    return Box6(*(float(v) for v in _bbox_array(pts)))


def cost_position(pred: KeyPointLane, gt: KeyPointLane) -> float:
    """Mean L1 difference between the two lanes' 3D bounding boxes."""
    return float(np.mean(np.abs(bbox_of(pred).as_array() - bbox_of(gt).as_array())))


def _check_same_length(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {len(a)} vs {len(b)} points")


def cost_shape(pred: KeyPointLane, gt: KeyPointLane) -> float:
    a, b = _points(pred), _points(gt)
    _check_same_length(a, b, "shape cost")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def tangents(lane: KeyPointLane) -> np.ndarray:
    """Central differences P[j+1] - P[j-1] for j = 1 .. n-2 (unnormalized)."""
    pts = _points(lane)
    if len(pts) < 3:
        raise TooFewPoints(f"tangents need >= 3 points, got {len(pts)}")
    return pts[2:] - pts[:-2]


def _curvature_batch(pts: np.ndarray) -> np.ndarray:
    # pts: (..., n, 3) -> (..., n - 3), curvature at j = 2 .. n-2
    tan = pts[..., 2:, :] - pts[..., :-2, :]
    num = np.linalg.norm(tan[..., 1:, :] - tan[..., :-1, :], axis=-1)
    seg = np.linalg.norm(pts[..., 2:-1, :] - pts[..., 1:-2, :], axis=-1)
    ok = seg >= SEGMENT_EPS
    return np.where(ok, num / np.where(ok, seg, 1.0), 0.0)


def curvature(lane: KeyPointLane) -> np.ndarray:
    """Discrete curvature |T_j - T_{j-1}| / |P_j - P_{j-1}| for j = 2 .. n-2.

    A zero-length segment yields 0 instead of dividing by zero.
    """
    pts = _points(lane)
    if len(pts) < 4:
        raise TooFewPoints(f"curvature needs >= 4 points, got {len(pts)}")
    return _curvature_batch(pts)


def degenerate_segments(lane: KeyPointLane) -> int:
    """How many curvature samples hit the zero-length-segment guard."""
    pts = _points(lane)
    seg = np.linalg.norm(pts[2:-1] - pts[1:-2], axis=-1)
    return int(np.sum(seg < SEGMENT_EPS))


def cost_smoothness(pred: KeyPointLane, gt: KeyPointLane) -> float:
    a, b = _points(pred), _points(gt)
    _check_same_length(a, b, "smoothness cost")
    return float(np.mean(np.abs(curvature(a) - curvature(b))))


def cost_bezier(pred: BezierLane, gt: BezierLane) -> float:
    a, b = pred.controls, gt.controls
    _check_same_length(a, b, "Bezier cost")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def _focal(p: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    p = np.maximum(p, PROB_FLOOR)
    return -alpha * (1.0 - p) ** gamma * np.log(p)


def cost_class(
    pred: ClassScores, gt_class: int, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA
) -> float:
    """Focal loss on the probability assigned to the target class."""
    if not 0 <= gt_class < len(pred.probs):
        raise InvalidClass(f"class {gt_class} outside [0, {len(pred.probs) - 1}]")
    return float(_focal(np.float64(pred.probs[gt_class]), alpha, gamma))


# -- frame-level assembly ------------------------------------------------------

def pad_ground_truth(gts: Sequence[GroundTruthLane], L: int, background: int) -> list[GroundTruthLane]:
    if len(gts) > L:
        raise TooManyGroundTruths(f"{len(gts)} ground-truth lanes exceed {L} prediction slots")
    return list(gts) + [GroundTruthLane.padding(background) for _ in range(L - len(gts))]


def pair_terms(
    pred: PredictedLane,
    gt: GroundTruthLane,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> np.ndarray:
    """Unweighted five-term cost vector for a single (prediction, target) pair.

    Padding targets contribute only the background class term.
    """
    if gt.is_padding:
        geo = [0.0, 0.0, 0.0, 0.0]
        return np.array(geo + [cost_class(pred.scores, pred.scores.background, alpha, gamma)])
    return np.array([
        cost_position(pred.keypoints, gt.keypoints),
        cost_shape(pred.keypoints, gt.keypoints),
        cost_smoothness(pred.keypoints, gt.keypoints),
        cost_bezier(pred.controls, gt.controls),
        cost_class(pred.scores, gt.class_id, alpha, gamma),
    ])


def term_tensor(
    preds: Sequence[PredictedLane],
    gts_padded: Sequence[GroundTruthLane],
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> np.ndarray:
    """Unweighted costs with shape (L_pred, L_gt, 5), vectorized over all pairs."""
    n, m = len(preds), len(gts_padded)
    out = np.zeros((n, m, 5))
    if n == 0 or m == 0:
        return out

    probs = np.stack([p.scores.probs for p in preds])
    n_cls = probs.shape[1]
    classes = np.array([g.class_id for g in gts_padded])
    if np.any(classes < 0) or np.any(classes >= n_cls):
        raise InvalidClass(f"target classes must lie in [0, {n_cls - 1}]")
    pad = np.array([g.is_padding for g in gts_padded])
    classes = np.where(pad, n_cls - 1, classes)
    out[:, :, 4] = _focal(probs[:, classes], alpha, gamma)

    real = np.flatnonzero(~pad)
    if len(real) == 0:
        return out
    pk = np.stack([p.keypoints.points for p in preds])
    pc = np.stack([p.controls.controls for p in preds])
    try:
        gk = np.stack([gts_padded[k].keypoints.points for k in real])
        gc = np.stack([gts_padded[k].controls.controls for k in real])
    except ValueError as exc:
        raise ShapeMismatch("ground-truth lanes have inconsistent point counts") from exc
    if pk.shape[1:] != gk.shape[1:] or pc.shape[1:] != gc.shape[1:]:
        raise ShapeMismatch(
            f"prediction ({pk.shape[1]} kp, {pc.shape[1]} cp) vs target "
            f"({gk.shape[1]} kp, {gc.shape[1]} cp) sizes differ"
        )
    if pk.shape[1] < 4:
        raise TooFewPoints("smoothness cost needs >= 4 key points")

    pb, gb = _bbox_array(pk), _bbox_array(gk)
    out[:, real, 0] = np.mean(np.abs(pb[:, None, :] - gb[None, :, :]), axis=-1)
    out[:, real, 1] = np.mean(np.linalg.norm(pk[:, None] - gk[None, :], axis=-1), axis=-1)
    pcurv, gcurv = _curvature_batch(pk), _curvature_batch(gk)
    out[:, real, 2] = np.mean(np.abs(pcurv[:, None, :] - gcurv[None, :, :]), axis=-1)
    out[:, real, 3] = np.mean(np.linalg.norm(pc[:, None] - gc[None, :], axis=-1), axis=-1)
    return out


def cost_matrix(
    preds: Sequence[PredictedLane],
    gts_padded: Sequence[GroundTruthLane],
    w: CostWeights,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> np.ndarray:
    """Weighted matching cost: entry (i, k) scores prediction i against target k."""
    if len(preds) != len(gts_padded):
        raise ShapeMismatch(f"{len(preds)} predictions vs {len(gts_padded)} padded targets")
    return term_tensor(preds, gts_padded, alpha, gamma) @ w.as_array()


# -- assignment ----------------------------------------------------------------

def hungarian(cost) -> Assignment:
    """Exact minimum-cost perfect matching on a square matrix.

    Shortest augmenting path with row/column potentials (O(n^3)); rows are
    inserted in index order, so the result is deterministic for a given
    matrix. ``pairs`` is sorted by row.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidMatrix(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidMatrix("cost matrix contains non-finite entries")
    n = c.shape[0]
    if n == 0:
        return Assignment([], 0.0)

    # 1-based columns; column 0 is the virtual source.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_row = np.zeros(n + 1, dtype=np.int64)  # column -> row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_row[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[col_row[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if col_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1

    row_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_col[col_row[j] - 1] = j - 1
    pairs = [(i, int(row_col[i])) for i in range(n)]
    return Assignment(pairs, assignment_cost(c, pairs))


def assignment_cost(cost: np.ndarray, pairs: Sequence[tuple[int, int]]) -> float:
    """Correctly rounded sum of the selected entries."""
    return math.fsum(float(cost[i, k]) for i, k in pairs)


def match_frame(
    preds: Sequence[PredictedLane],
    gts: Sequence[GroundTruthLane],
    w: CostWeights,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> tuple[list[GroundTruthLane], np.ndarray, Assignment]:
    """Pad targets to the prediction count, build the cost matrix, assign."""
    if len(preds) == 0:
        if gts:
            raise TooManyGroundTruths(f"{len(gts)} ground-truth lanes but no predictions")
        return [], np.zeros((0, 0)), Assignment([], 0.0)
    background = preds[0].scores.background
    padded = pad_ground_truth(gts, len(preds), background)
    cost = cost_matrix(preds, padded, w, alpha, gamma)
    return padded, cost, hungarian(cost)


def _validate_assignment(assignment: Assignment, n_pred: int, n_gt: int):
    rows = [i for i, _ in assignment.pairs]
    cols = [k for _, k in assignment.pairs]
    if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
        raise InvalidAssignment("an index appears more than once")
    if any(not 0 <= i < n_pred for i in rows) or any(not 0 <= k < n_gt for k in cols):
        raise InvalidAssignment("assignment index out of range")
    if n_pred == n_gt and len(rows) != n_pred:
        raise InvalidAssignment(f"square problem needs {n_pred} pairs, got {len(rows)}")


def total_loss(
    preds: Sequence[PredictedLane],
    gts_padded: Sequence[GroundTruthLane],
    assignment: Assignment,
    w: CostWeights,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> LossBreakdown:
    """Weighted five-term loss summed over assigned pairs, with the same
    weights used for matching."""
    _validate_assignment(assignment, len(preds), len(gts_padded))
    weights = w.as_array()
    per_pair = []
    sums = {name: [] for name in TERMS}
    totals = []
    for i, k in assignment.pairs:
        raw = pair_terms(preds[i], gts_padded[k], alpha, gamma)
        weighted = raw * weights
        for name, value in zip(TERMS, weighted):
            sums[name].append(float(value))
        # Same accumulation order as the cost-matrix dot product.
        entry = float(raw @ weights)
        totals.append(entry)
        per_pair.append({
            "pred": i, "gt": k, "padding": gts_padded[k].is_padding,
            "terms": dict(zip(TERMS, (float(x) for x in raw))),
            "weighted": entry,
        })
    terms = {name: math.fsum(vals) for name, vals in sums.items()}
    return LossBreakdown(math.fsum(totals), terms, per_pair)

"""Evaluation protocol: confidence-gated F-Score, Chamfer AP, category accuracy."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, InvalidConfig, ShapeMismatch

logger = logging.getLogger(__name__)

DEFAULT_AP_THRESHOLDS = (0.5, 1.0, 1.5)
# Above this many point pairs, nearest neighbours go through a KD-tree.
_BRUTE_FORCE_PAIRS = 250_000


@dataclass(frozen=True)
class MatchCriteria:
    point_dist_thresh: float = 1.5
    min_matched_fraction: float = 0.75
    confidence_thresh: float = 0.25

    def __post_init__(self):
        if not self.point_dist_thresh > 0:
            raise InvalidConfig("point_dist_thresh must be positive")
        if not 0 < self.min_matched_fraction <= 1:
            raise InvalidConfig("min_matched_fraction must lie in (0, 1]")
        if not 0 <= self.confidence_thresh <= 1:
            raise InvalidConfig("confidence_thresh must lie in [0, 1]")


@dataclass
class EvalResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f_score: float = 0.0
    ap_per_class: dict[int, float] = field(default_factory=dict)
    map: float = 0.0
    category_accuracy: float = 0.0
    category_accuracy_undefined: bool = False
    # TP pairs whose predicted label matched the target label.
    class_correct: int = 0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f_score": self.f_score,
            "ap_per_class": {str(k): v for k, v in sorted(self.ap_per_class.items())},
            "map": self.map,
            "category_accuracy": self.category_accuracy,
            "category_accuracy_undefined": self.category_accuracy_undefined,
        }


def _pts(lane) -> np.ndarray:
    arr = lane.points if hasattr(lane, "points") else lane
    return np.asarray(arr, dtype=np.float64)


def chamfer_distance(a, b) -> float:
    """Symmetric mean nearest-neighbour distance between two point sets."""
    a, b = _pts(a), _pts(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("Chamfer distance of an empty polyline")
    if len(a) * len(b) <= _BRUTE_FORCE_PAIRS:
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        ab, ba = d.min(axis=1), d.min(axis=0)
    else:
        ab = cKDTree(b).query(a)[0]
        ba = cKDTree(a).query(b)[0]
    return 0.5 * (float(np.mean(ab)) + float(np.mean(ba)))


def chamfer_matrix(preds: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Pairwise Chamfer distances between two stacks of equal-length lanes.

    ``preds`` is (n, P, D) and ``gts`` is (m, Q, D); returns (n, m).
    """
    if preds.shape[0] == 0 or gts.shape[0] == 0:
        return np.zeros((preds.shape[0], gts.shape[0]))
    d = np.linalg.norm(preds[:, None, :, None, :] - gts[None, :, None, :, :], axis=-1)
    ab = d.min(axis=3).mean(axis=2)
    ba = d.min(axis=2).mean(axis=2)
    return 0.5 * (ab + ba)


def lane_is_tp(pred, gt, crit: MatchCriteria) -> bool:
    """True when enough index-aligned point pairs lie within the distance threshold."""
    a, b = _pts(pred), _pts(gt)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{len(a)} vs {len(b)} points; resample to a common count first")
    close = np.linalg.norm(a - b, axis=1) <= crit.point_dist_thresh
    return bool(np.count_nonzero(close) >= crit.min_matched_fraction * len(a))


def _tp_matrix(pk: np.ndarray, gk: np.ndarray, crit: MatchCriteria) -> np.ndarray:
    if pk.shape[0] == 0 or gk.shape[0] == 0:
        return np.zeros((pk.shape[0], gk.shape[0]), dtype=bool)
    if pk.shape[1:] != gk.shape[1:]:
        raise ShapeMismatch("predictions and targets must share the key-point count")
    close = np.linalg.norm(pk[:, None] - gk[None, :], axis=-1) <= crit.point_dist_thresh
    return np.count_nonzero(close, axis=-1) >= crit.min_matched_fraction * pk.shape[1]


@dataclass
class FrameMatch:
    pairs: list[tuple[int, int]]
    n_pred: int
    n_gt: int


def _stack(lanes) -> np.ndarray:
    if not lanes:
        return np.zeros((0, 0, 3))
    return np.stack([_pts(lane) for lane in lanes])


def _gate(preds, crit: MatchCriteria) -> list:
    return [p for p in preds if p.scores.confidence() > crit.confidence_thresh]


def greedy_frame_match(preds, gts, crit: MatchCriteria) -> FrameMatch:
    """One-to-one pairing by ascending Chamfer distance among TP-eligible pairs.

    ``preds`` must already be confidence-gated.
    """
    pk = _stack([p.keypoints for p in preds])
    gk = _stack(gts)
    eligible = _tp_matrix(pk, gk, crit)
    pairs = []
    if eligible.any():
        cd = chamfer_matrix(pk, gk)
        cand = np.argwhere(eligible)
        order = np.lexsort((cand[:, 1], cand[:, 0], cd[cand[:, 0], cand[:, 1]]))
        used_p, used_g = set(), set()
        for i, k in cand[order]:
            if i in used_p or k in used_g:
                continue
            used_p.add(int(i))
            used_g.add(int(k))
            pairs.append((int(i), int(k)))
    return FrameMatch(sorted(pairs), len(preds), len(gts))


def optimal_tp_count(preds, gts, crit: MatchCriteria) -> int:
    """Exhaustive maximum one-to-one TP count; audit oracle for small frames."""
    eligible = _tp_matrix(_stack([p.keypoints for p in preds]), _stack(gts), crit)
    n, m = eligible.shape
    if n == 0 or m == 0:
        return 0
    best = 0
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = max(best, sum(eligible[i, c] for i, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            best = max(best, sum(eligible[r, k] for k, r in enumerate(rows)))
    return int(best)


def _rates(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def f_score(frames: Iterable[tuple[Sequence, Sequence]], crit: MatchCriteria) -> EvalResult:
    """TP/FP/FN, precision, recall, F-Score and category accuracy over frames.

    Each frame is ``(preds, gts)`` where preds carry ``keypoints`` and
    ``scores`` and gts are key-point lanes with ``class_id``.
    """
    res = EvalResult()
    for preds, gts in frames:
        kept = _gate(preds, crit)
        fm = greedy_frame_match(kept, gts, crit)
        res.tp += len(fm.pairs)
        res.fp += len(kept) - len(fm.pairs)
        res.fn += len(gts) - len(fm.pairs)
        res.class_correct += sum(kept[i].scores.label() == gts[k].class_id for i, k in fm.pairs)
    res.precision, res.recall, res.f_score = _rates(res.tp, res.fp, res.fn)
    if res.tp:
        res.category_accuracy = res.class_correct / res.tp
    else:
        res.category_accuracy_undefined = True
    return res


def category_accuracy(frames, crit: MatchCriteria) -> tuple[float, bool]:
    """Fraction of geometry-matched pairs with the right label; (0.0, True) when there are none."""
    res = f_score(frames, crit)
    return res.category_accuracy, res.category_accuracy_undefined


def pr_area(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve.

    ``tp_flags`` are the detections in descending-confidence order.
    """
    if n_gt == 0:
        return 0.0
    flags = np.asarray(tp_flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = np.concatenate([[0.0], tp / n_gt, [1.0]])
    precision = np.concatenate([[0.0], tp / (tp + fp), [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def _project(points: np.ndarray, dims: int) -> np.ndarray:
    return points[..., :dims]


def average_precision(
    frames: Iterable[tuple[Sequence, Sequence]],
    class_id: int,
    thresholds: Sequence[float] = DEFAULT_AP_THRESHOLDS,
    dims: int = 3,
) -> float:
    """Chamfer-distance AP for one class, averaged over the thresholds.

    Predictions are labelled with their most probable foreground class and
    ranked by that probability; each claims the closest unclaimed target of
    its class if the Chamfer distance is within the threshold.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise InvalidConfig("need at least one Chamfer threshold")
    if dims not in (2, 3):
        raise InvalidConfig("dims must be 2 or 3")
    records = []  # (confidence, frame index, pred index)
    dists = []
    n_gt = 0
    for f_idx, (preds, gts) in enumerate(frames):
        cls_preds = [p for p in preds if p.scores.label() == class_id]
        cls_gts = [g for g in gts if g.class_id == class_id]
        n_gt += len(cls_gts)
        if cls_preds and cls_gts:
            cd = np.array([[chamfer_distance(_project(_pts(p.keypoints), dims),
                                             _project(_pts(g), dims))
                            for g in cls_gts] for p in cls_preds])
        else:
            cd = np.zeros((len(cls_preds), len(cls_gts)))
        dists.append(cd)
        for p_idx, p in enumerate(cls_preds):
            records.append((-p.scores.confidence(), f_idx, p_idx))
    records.sort()

    aps = []
    for mu in thresholds:
        claimed = [np.zeros(d.shape[1], dtype=bool) for d in dists]
        flags = []
        for _, f_idx, p_idx in records:
            row = dists[f_idx][p_idx] if dists[f_idx].shape[1] else np.zeros(0)
            free = np.flatnonzero(~claimed[f_idx] & (row <= mu))
            if free.size:
                k = free[np.argmin(row[free])]
                claimed[f_idx][k] = True
                flags.append(True)
            else:
                flags.append(False)
        aps.append(pr_area(flags, n_gt))
    return float(np.mean(aps))


def evaluate(
    frames: Sequence[tuple[Sequence, Sequence]],
    crit: MatchCriteria,
    thresholds: Sequence[float] = DEFAULT_AP_THRESHOLDS,
    classes: Optional[Sequence[int]] = None,
    dims: int = 3,
) -> EvalResult:
    """Full protocol: gated F-Score, category accuracy, and per-class AP/mAP.

    AP is reported for every class that has at least one target (or for
    ``classes`` if given); mAP averages those.
    """
    frames = list(frames)
    res = f_score(frames, crit)
    if classes is None:
        classes = sorted({g.class_id for _, gts in frames for g in gts})
    res.ap_per_class = {int(c): average_precision(frames, c, thresholds, dims) for c in classes}
    res.map = float(np.mean(list(res.ap_per_class.values()))) if res.ap_per_class else 0.0
    return res

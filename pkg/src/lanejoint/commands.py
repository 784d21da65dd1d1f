"""Workflows behind the CLI: fit, match, transform, eval, compare-models.

Each ``cmd_*`` returns a JSON-serializable report that embeds the resolved
config. Frames are processed on a bounded thread pool; results keep input
order.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

from .config import ToolConfig
from .errors import FormatError, LaneError, TooManyGroundTruths
from .lane_model import (
    AnnotatedLane,
    BezierLane,
    Complexity,
    KeyPointLane,
    classify_complexity,
    fit_bezier,
    fit_polynomial_baseline,
    modeling_error,
    resample_keypoints,
    sample_bezier,
)
from .lanefile import LaneFileFrame, LaneRecord
from .matching import (
    ClassScores,
    GroundTruthLane,
    PredictedLane,
    match_frame,
    total_loss,
)
from .metrics import EvalResult, evaluate
from .projection import range_filter_3d, surround_to_frontview

log = logging.getLogger(__name__)

WORKERS_ENV = "LANEJOINT_MAX_WORKERS"
DENSE_SAMPLES = 200

T = TypeVar("T")
R = TypeVar("R")


def max_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise FormatError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
        return max(1, n)
    return min(8, os.cpu_count() or 1)


def ordered_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map over a bounded worker pool; output order matches input order."""
    workers = min(max_workers(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _with_context(frame_id: str, lane_idx: Optional[int], exc: LaneError) -> LaneError:
    where = f"frame {frame_id!r}" + (f", lane {lane_idx}" if lane_idx is not None else "")
    return type(exc)(f"{where}: {exc}")


def _fit_input(lane: AnnotatedLane, cfg: ToolConfig) -> AnnotatedLane:
    # Too few annotated points to pin P_c controls: fit the key-point polyline instead.
    if len(lane) < cfg.num_controls:
        kp = resample_keypoints(lane, max(cfg.num_keypoints, cfg.num_controls))
        return AnnotatedLane(kp.points, lane.class_id)
    return lane


def lane_models(lane: AnnotatedLane, cfg: ToolConfig) -> tuple[KeyPointLane, BezierLane]:
    kp = resample_keypoints(lane, cfg.num_keypoints)
    return kp, fit_bezier(_fit_input(lane, cfg), cfg.num_controls, cfg.param_mode)


def ground_truths(frame: LaneFileFrame, cfg: ToolConfig) -> list[GroundTruthLane]:
    out = []
    for idx, rec in enumerate(frame.lanes):
        try:
            kp, cp = lane_models(rec.lane, cfg)
        except LaneError as exc:
            raise _with_context(frame.frame_id, idx, exc) from exc
        out.append(GroundTruthLane(kp, cp, rec.class_id))
    return out


def scores_of(rec: LaneRecord, cfg: ToolConfig) -> ClassScores:
    """Class scores from the record; a bare lane counts as confidence 1.0 in its class."""
    if rec.scores is not None:
        return ClassScores(rec.scores)
    conf = 1.0 if rec.confidence is None else rec.confidence
    return ClassScores.from_confidence(rec.class_id, conf, cfg.num_classes)


def predictions(frame: LaneFileFrame, cfg: ToolConfig, with_controls: bool = True) -> list[PredictedLane]:
    out = []
    for idx, rec in enumerate(frame.lanes):
        try:
            if with_controls:
                if rec.controls is not None:
                    if len(rec.controls) != cfg.num_controls:
                        raise FormatError(
                            f"{len(rec.controls)} controls given, config expects {cfg.num_controls}")
                    kp = resample_keypoints(rec.lane, cfg.num_keypoints)
                    cp = BezierLane(rec.controls, rec.class_id)
                else:
                    kp, cp = lane_models(rec.lane, cfg)
            else:
                kp, cp = resample_keypoints(rec.lane, cfg.num_keypoints), None
            out.append(PredictedLane(kp, cp, scores_of(rec, cfg)))
        except LaneError as exc:
            raise _with_context(frame.frame_id, idx, exc) from exc
    return out


def pair_frames(
    gt_frames: Sequence[LaneFileFrame], pred_frames: Sequence[LaneFileFrame]
) -> list[tuple[str, Optional[LaneFileFrame], Optional[LaneFileFrame]]]:
    """Join by frame_id: ground-truth order first, then prediction-only frames."""
    by_id = {f.frame_id: f for f in pred_frames}
    out = [(g.frame_id, g, by_id.get(g.frame_id)) for g in gt_frames]
    gt_ids = {g.frame_id for g in gt_frames}
    out += [(p.frame_id, None, p) for p in pred_frames if p.frame_id not in gt_ids]
    return out


def _pts(arr) -> list:
    return np.asarray(arr, dtype=np.float64).tolist()


# -- commands -------------------------------------------------------------------

def cmd_fit(cfg: ToolConfig, frames: Sequence[LaneFileFrame]) -> dict:
    def one(frame: LaneFileFrame) -> dict:
        lanes = []
        for idx, rec in enumerate(frame.lanes):
            try:
                kp, cp = lane_models(rec.lane, cfg)
            except LaneError as exc:
                raise _with_context(frame.frame_id, idx, exc) from exc
            lanes.append({
                "class_id": rec.class_id,
                "keypoints": _pts(kp.points),
                "controls": _pts(cp.controls),
                "bezier_residual_rms": cp.residual_rms,
                "rank_deficient": cp.rank_deficient,
            })
        return {"frame_id": frame.frame_id, "lanes": lanes}

    return {"command": "fit", "config": cfg.to_dict(), "frames": ordered_map(one, frames)}


def cmd_match(cfg: ToolConfig, gt_frames, pred_frames) -> dict:
    def one(item) -> dict:
        frame_id, gt, pred = item
        gts = ground_truths(gt, cfg) if gt else []
        preds = predictions(pred, cfg) if pred else []
        head = {"frame_id": frame_id, "num_predictions": len(preds), "num_ground_truths": len(gts)}
        try:
            padded, cost, assignment = match_frame(
                preds, gts, cfg.weights, cfg.focal_alpha, cfg.focal_gamma)
            loss = total_loss(preds, padded, assignment, cfg.weights,
                              cfg.focal_alpha, cfg.focal_gamma)
        except TooManyGroundTruths as exc:
            # Fewer prediction slots than targets: no one-to-one assignment exists.
            log.warning("frame %r skipped: %s", frame_id, exc)
            return {**head, "skipped": str(exc)}
        except LaneError as exc:
            raise _with_context(frame_id, None, exc) from exc
        return {
            **head,
            "assignment": [[i, k] for i, k in assignment.pairs],
            "matching_cost": assignment.total_cost,
            "loss": loss.total,
            "loss_terms": loss.terms,
            "pairs": loss.per_pair,
            "cost_matrix": cost.tolist(),
        }

    frames = ordered_map(one, pair_frames(gt_frames, pred_frames))
    return {
        "command": "match",
        "config": cfg.to_dict(),
        "frames": frames,
        "skipped_frames": sum("skipped" in f for f in frames),
        "total_loss": float(sum(f.get("loss", 0.0) for f in frames)),
    }


def cmd_transform(cfg: ToolConfig, frames: Sequence[LaneFileFrame],
                  apply_range: bool = True) -> tuple[list[LaneFileFrame], dict]:
    """Front-view lanes for every frame that carries a camera rig."""
    def one(frame: LaneFileFrame) -> LaneFileFrame:
        if frame.camera is None:
            raise FormatError(f"frame {frame.frame_id!r} has no camera rig")
        lanes = frame.annotated()
        front = surround_to_frontview(lanes, frame.camera)
        if apply_range:
            front = range_filter_3d(front, cfg.perception_range)
        return LaneFileFrame(frame.frame_id, [LaneRecord(l) for l in front], frame.camera)

    out = ordered_map(one, frames)
    summary = {
        "command": "transform",
        "config": cfg.to_dict(),
        "range_filter": apply_range,
        "frames": [
            {"frame_id": f.frame_id, "lanes_in": len(src.lanes), "lanes_out": len(f.lanes)}
            for src, f in zip(frames, out)
        ],
    }
    return out, summary


def eval_frames(cfg: ToolConfig, gt_frames, pred_frames) -> list[tuple[list, list]]:
    def crop(frame: Optional[LaneFileFrame]) -> Optional[LaneFileFrame]:
        if frame is None or not cfg.eval_range_filter:
            return frame
        recs = []
        for rec in frame.lanes:
            for lane in range_filter_3d([rec.lane], cfg.perception_range):
                recs.append(LaneRecord(lane, rec.confidence, rec.scores, None))
        return LaneFileFrame(frame.frame_id, recs, frame.camera)

    def one(item):
        _, gt, pred = item
        gt, pred = crop(gt), crop(pred)
        gts = [resample_keypoints(r.lane, cfg.num_keypoints) for r in gt.lanes] if gt else []
        preds = predictions(pred, cfg, with_controls=False) if pred else []
        return preds, gts

    return ordered_map(one, pair_frames(gt_frames, pred_frames))


def cmd_eval(cfg: ToolConfig, gt_frames, pred_frames) -> dict:
    frames = eval_frames(cfg, gt_frames, pred_frames)
    classes = sorted({g.class_id for _, gts in frames for g in gts} - {cfg.background})
    res = evaluate(frames, cfg.criteria, cfg.chamfer_thresholds, classes, cfg.ap_dims)
    return {
        "command": "eval",
        "config": cfg.to_dict(),
        "num_frames": len(frames),
        "result": res.to_dict(),
    }


def format_eval(report: dict) -> str:
    r = report["result"]
    lines = [
        f"frames            {report['num_frames']}",
        f"TP / FP / FN      {r['tp']} / {r['fp']} / {r['fn']}",
        f"precision         {r['precision']:.4f}",
        f"recall            {r['recall']:.4f}",
        f"F-Score           {r['f_score']:.4f}",
        "category accuracy " + (
            "n/a (no true positives)" if r["category_accuracy_undefined"]
            else f"{r['category_accuracy']:.4f}"),
        f"mAP               {r['map']:.4f}",
    ]
    for cls, ap in r["ap_per_class"].items():
        lines.append(f"  AP[class {cls}]    {ap:.4f}")
    return "\n".join(lines) + "\n"


def compare_lane(lane: AnnotatedLane, cfg: ToolConfig) -> dict:
    """Modeling error of the polynomial, interpolation and Bezier models for one lane."""
    poly = fit_polynomial_baseline(lane, cfg.poly_degree)
    interp = resample_keypoints(lane, cfg.num_keypoints)
    bez = fit_bezier(_fit_input(lane, cfg), cfg.num_controls, cfg.param_mode)
    curves = {
        "polynomial": poly.sample(DENSE_SAMPLES),
        "interpolation": interp,
        "bezier": sample_bezier(bez, DENSE_SAMPLES),
    }
    return {
        "errors": {k: modeling_error(v, lane) for k, v in curves.items()},
        "polynomial_rank_deficient": poly.rank_deficient,
        "curves": curves,
    }


def cmd_compare_models(cfg: ToolConfig, frames: Sequence[LaneFileFrame]) -> tuple[dict, str]:
    """Per-lane modeling errors plus means over Simple / Complex frames.

    Returns the report and a CSV of every model curve for plotting.
    """
    def one(frame: LaneFileFrame):
        lanes = frame.annotated()
        if not lanes:
            return {"frame_id": frame.frame_id, "complexity": None, "lanes": []}, []
        split = classify_complexity(lanes).value
        out, rows = [], []
        for idx, lane in enumerate(lanes):
            try:
                cmp = compare_lane(lane, cfg)
            except LaneError as exc:
                raise _with_context(frame.frame_id, idx, exc) from exc
            out.append({"lane": idx, "class_id": lane.class_id, "errors": cmp["errors"],
                        "polynomial_rank_deficient": cmp["polynomial_rank_deficient"]})
            curves = {"annotated": lane.points, **{k: v.points for k, v in cmp["curves"].items()}}
            for model, pts in curves.items():
                for j, p in enumerate(pts):
                    rows.append([frame.frame_id, idx, model, j, *map(float, p)])
        return {"frame_id": frame.frame_id, "complexity": split, "lanes": out}, rows

    results = ordered_map(one, frames)
    per_frame = [r[0] for r in results]
    summary = {}
    for split in (Complexity.SIMPLE.value, Complexity.COMPLEX.value):
        errs = [l["errors"] for f in per_frame if f["complexity"] == split for l in f["lanes"]]
        summary[split] = {
            "frames": sum(1 for f in per_frame if f["complexity"] == split),
            "lanes": len(errs),
            "mean_error": {m: (float(np.mean([e[m] for e in errs])) if errs else None)
                           for m in ("polynomial", "interpolation", "bezier")},
        }
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_id", "lane", "model", "index", "x", "y", "z"])
    for _, rows in results:
        writer.writerows(rows)
    report = {"command": "compare-models", "config": cfg.to_dict(),
              "frames": per_frame, "summary": summary}
    return report, buf.getvalue()

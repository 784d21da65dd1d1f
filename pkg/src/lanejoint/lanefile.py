"""Line-delimited JSON lane files: one frame per line.

See docs/format.md for the record layout.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import FormatError, LaneError
from .lane_model import AnnotatedLane
from .projection import CameraRig


@dataclass(eq=False)
class LaneRecord:
    """One lane of a frame, with optional prediction attributes."""

    lane: AnnotatedLane
    confidence: Optional[float] = None
    scores: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None

    @property
    def class_id(self) -> int:
        return self.lane.class_id


@dataclass(eq=False)
class LaneFileFrame:
    frame_id: str
    lanes: list[LaneRecord] = field(default_factory=list)
    camera: Optional[CameraRig] = None

    def annotated(self) -> list[AnnotatedLane]:
        return [r.lane for r in self.lanes]


def _floats(arr) -> list:
    return np.asarray(arr, dtype=np.float64).tolist()


def frame_to_dict(frame: LaneFileFrame) -> dict:
    lanes = []
    for rec in frame.lanes:
        d = {"points": _floats(rec.lane.points), "class_id": rec.lane.class_id}
        if rec.confidence is not None:
            d["confidence"] = float(rec.confidence)
        if rec.scores is not None:
            d["scores"] = _floats(rec.scores)
        if rec.controls is not None:
            d["controls"] = _floats(rec.controls)
        lanes.append(d)
    out = {"frame_id": frame.frame_id, "lanes": lanes}
    if frame.camera is not None:
        cam = frame.camera
        out["camera"] = {
            "intrinsic": _floats(cam.intrinsic),
            "extrinsic": _floats(cam.extrinsic),
            "image_h": int(cam.image_h),
            "image_w": int(cam.image_w),
        }
    return out


def _parse_lane(d, num_classes: Optional[int]) -> LaneRecord:
    if not isinstance(d, dict):
        raise FormatError("lane must be an object")
    unknown = set(d) - {"points", "class_id", "confidence", "scores", "controls"}
    if unknown:
        raise FormatError(f"unknown lane keys {sorted(unknown)}")
    if "points" not in d:
        raise FormatError("lane has no 'points'")
    class_id = d.get("class_id", 0)
    if not isinstance(class_id, int) or isinstance(class_id, bool):
        raise FormatError(f"class_id must be an integer, got {class_id!r}")
    if num_classes is not None and not 0 <= class_id < num_classes:
        raise FormatError(f"class_id {class_id} outside [0, {num_classes - 1}]")
    lane = AnnotatedLane.from_raw(d["points"], class_id)
    conf = d.get("confidence")
    if conf is not None and not 0.0 <= float(conf) <= 1.0:
        raise FormatError(f"confidence {conf} outside [0, 1]")
    scores = d.get("scores")
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if num_classes is not None and len(scores) != num_classes:
            raise FormatError(f"scores has {len(scores)} entries, expected {num_classes}")
    controls = d.get("controls")
    if controls is not None:
        controls = np.asarray(controls, dtype=np.float64)
        if controls.ndim != 2 or controls.shape[1] != 3:
            raise FormatError("controls must be a list of [x, y, z] triples")
    return LaneRecord(lane, None if conf is None else float(conf), scores, controls)


def frame_from_dict(d, num_classes: Optional[int] = None) -> LaneFileFrame:
    if not isinstance(d, dict):
        raise FormatError("frame record must be a JSON object")
    if "frame_id" not in d:
        raise FormatError("frame record has no 'frame_id'")
    frame_id = str(d["frame_id"])
    lanes = []
    for idx, ld in enumerate(d.get("lanes", [])):
        try:
            lanes.append(_parse_lane(ld, num_classes))
        except (LaneError, TypeError, ValueError) as exc:
            raise FormatError(f"frame {frame_id!r}, lane {idx}: {exc}") from exc
    camera = None
    if d.get("camera") is not None:
        c = d["camera"]
        try:
            camera = CameraRig(c["intrinsic"], c["extrinsic"], int(c["image_h"]), int(c["image_w"]))
        except (LaneError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"frame {frame_id!r}, camera: {exc}") from exc
    return LaneFileFrame(frame_id, lanes, camera)


def parse_frames(lines: Iterable[str], source: str = "<input>",
                 num_classes: Optional[int] = None) -> list[LaneFileFrame]:
    frames = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from exc
        try:
            frame = frame_from_dict(d, num_classes)
        except FormatError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
        if frame.frame_id in seen:
            raise FormatError(f"{source}:{lineno}: duplicate frame_id {frame.frame_id!r}")
        seen.add(frame.frame_id)
        frames.append(frame)
    return frames


def load_frames(path, num_classes: Optional[int] = None) -> list[LaneFileFrame]:
    """Read and validate a lane file; errors name the line, frame and lane."""
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_frames(fh, str(path), num_classes)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def dumps_frames(frames: Iterable[LaneFileFrame]) -> str:
    return "".join(json.dumps(frame_to_dict(f), sort_keys=True) + "\n" for f in frames)


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        # mkstemp creates 0600; give the file the usual umask-derived mode.
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_frames(frames: Iterable[LaneFileFrame], path) -> None:
    atomic_write(path, dumps_frames(frames))

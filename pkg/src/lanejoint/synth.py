"""Deterministic synthetic lane scenes for the modeling and matching studies."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import InvalidConfig
from .lane_model import AnnotatedLane
from .lanefile import LaneFileFrame, LaneRecord
from .projection import CameraRig

KINDS = ("straight", "u_shape", "closed_loop", "y_shape", "lateral")
STEP = 1.0  # nominal spacing of annotated points, meters


def _line(p0, p1, step=STEP) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(round(np.linalg.norm(p1 - p0) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) * p0 + t * p1


def _arc(center, radius, a0, a1, z=0.0, step=STEP) -> np.ndarray:
    n = max(3, int(round(abs(a1 - a0) * radius / step)) + 1)
    a = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a),
                            np.full(n, z)])


def _join(*parts) -> np.ndarray:
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:])  # shared junction point
    return np.concatenate(out)


def _shapes(kind: str) -> list[tuple[np.ndarray, int]]:
    if kind == "straight":
        return [(_line((x, 3.0, 0.0), (x, 80.0, 0.0)), c)
                for x, c in ((-3.5, 0), (0.0, 1), (3.5, 0))]
    if kind == "u_shape":
        # Compact U-turn: legs of 6 m around a 6 m radius turn.
        r, y0, y1 = 6.0, 3.0, 9.0
        u = _join(_line((-r, y0, 0.0), (-r, y1, 0.0)),
                  _arc((0.0, y1), r, np.pi, 0.0),
                  _line((r, y1, 0.0), (r, y0, 0.0)))
        return [(u, 0), (_line((-12.0, 3.0, 0.0), (-12.0, 60.0, 0.0)), 1)]
    if kind == "closed_loop":
        loop = _arc((0.0, 25.0), 8.0, -np.pi / 2, 1.5 * np.pi)
        return [(loop[:-1], 2), (_line((-14.0, 3.0, 0.0), (-14.0, 60.0, 0.0)), 0)]
    if kind == "y_shape":
        trunk = _line((0.0, 3.0, 0.0), (0.0, 80.0, 0.0))
        heading = np.deg2rad(20.0)
        branch = _line((0.0, 30.0, 0.0), (50.0 * np.sin(heading), 30.0 + 50.0 * np.cos(heading), 0.0))
        return [(trunk, 1), (branch, 1)]
    if kind == "lateral":
        return [(_line((-3.5, 3.0, 0.0), (-3.5, 60.0, 0.0)), 0),
                (_line((3.5, 3.0, 0.0), (3.5, 60.0, 0.0)), 0),
                (_line((-8.0, 30.0, 0.0), (8.0, 30.0, 0.0)), 1)]
    raise InvalidConfig(f"unknown scene kind {kind!r}; expected one of {KINDS}")


def synth_scene(
    kind: str,
    noise_sigma: float = 0.0,
    seed: int = 0,
    frame_id: Optional[str] = None,
    camera: bool = True,
) -> LaneFileFrame:
    """One synthetic frame of the given kind with Gaussian point noise.

    Identical ``(kind, noise_sigma, seed)`` always produce identical output.
    """
    if noise_sigma < 0:
        raise InvalidConfig("noise_sigma must be >= 0")
    shapes = _shapes(kind)
    rng = np.random.default_rng(seed)
    records = []
    for pts, cls in shapes:
        if noise_sigma > 0:
            pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
        records.append(LaneRecord(AnnotatedLane.from_raw(pts, cls)))
    rig = CameraRig.front_camera() if camera else None
    return LaneFileFrame(frame_id or f"{kind}-{seed}", records, rig)


def synth_dataset(
    count: int,
    seed: int = 0,
    kinds: Sequence[str] = KINDS,
    noise_sigma: float = 0.05,
) -> list[LaneFileFrame]:
    """``count`` frames cycling through ``kinds``; per-frame seeds derive from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(max(count, 1))
    return [
        synth_scene(kinds[i % len(kinds)], noise_sigma, int(seeds[i]), frame_id=f"frame-{i:06d}")
        for i in range(count)
    ]


def synth_predictions(
    frame: LaneFileFrame,
    seed: int = 0,
    jitter: float = 0.2,
    miss_prob: float = 0.1,
    false_positives: int = 1,
    num_classes: int = 17,
) -> LaneFileFrame:
    """Noisy detections of a ground-truth frame: jittered lanes with random
    confidences, some misses, and a few spurious lanes."""
    rng = np.random.default_rng(seed)
    records = []
    for rec in frame.lanes:
        if rng.random() < miss_prob:
            continue
        pts = rec.lane.points + rng.normal(0.0, jitter, size=rec.lane.points.shape)
        records.append(LaneRecord(AnnotatedLane.from_raw(pts, rec.class_id),
                                  confidence=float(rng.uniform(0.3, 1.0))))
    for _ in range(false_positives):
        x = rng.uniform(-20.0, 20.0)
        pts = _line((x, 5.0, 0.0), (x + rng.uniform(-5, 5), 50.0, 0.0))
        cls = int(rng.integers(0, num_classes - 1))
        records.append(LaneRecord(AnnotatedLane.from_raw(pts, cls),
                                  confidence=float(rng.uniform(0.0, 0.6))))
    return LaneFileFrame(frame.frame_id, records, frame.camera)

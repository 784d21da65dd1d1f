"""Pinhole projection and the surround-view to front-view lane transformation.

Ego frame: X right, Y forward, Z up. Camera frame: x right, y down, z along
the optical axis (depth). The extrinsic maps ego coordinates into camera
coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BehindCamera, DegenerateLane, InvalidConfig, InvalidRig
from .lane_model import AnnotatedLane

MIN_DEPTH = 1e-6


@dataclass(eq=False)
class CameraRig:
    intrinsic: np.ndarray
    extrinsic: np.ndarray
    image_h: int
    image_w: int

    def __post_init__(self):
        self.intrinsic = np.asarray(self.intrinsic, dtype=np.float64)
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        K, E = self.intrinsic, self.extrinsic
        if K.shape != (3, 3) or E.shape != (4, 4):
            raise InvalidRig(f"intrinsic must be 3x3 and extrinsic 4x4, got {K.shape}, {E.shape}")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(E))):
            raise InvalidRig("camera matrices must be finite")
        if np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] == 0:
            raise InvalidRig("intrinsic must be upper-triangular with positive focal lengths")
        R = E[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) <= 0:
            raise InvalidRig("extrinsic rotation block is not a proper rotation")
        if not np.allclose(E[3], [0, 0, 0, 1]):
            raise InvalidRig("extrinsic bottom row must be [0, 0, 0, 1]")
        if self.image_h <= 0 or self.image_w <= 0:
            raise InvalidRig("image size must be positive")

    @classmethod
    def front_camera(
        cls,
        fx: float = 1000.0,
        fy: float = 1000.0,
        cx: float = 960.0,
        cy: float = 540.0,
        height: float = 1.5,
        pitch: float = 0.0,
        image_h: int = 1080,
        image_w: int = 1920,
    ) -> "CameraRig":
        """Forward-looking camera mounted ``height`` m above the ego origin.

        ``pitch`` (radians, positive = nose down) tilts the optical axis.
        """
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        # ego axes -> camera axes for a level camera: x=X, y=-Z, z=Y
        base = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        c, s = np.cos(pitch), np.sin(pitch)
        tilt = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
        R = tilt @ base
        E = np.eye(4)
        E[:3, :3] = R
        E[:3, 3] = -R @ np.array([0.0, 0.0, height])
        return cls(K, E, image_h, image_w)


@dataclass(eq=False)
class ProjMatrix:
    m: np.ndarray


@dataclass(frozen=True)
class PerceptionRange:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max and self.z_min < self.z_max):
            raise InvalidConfig("perception range needs min < max on every axis")

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (
            (p[:, 0] >= self.x_min) & (p[:, 0] <= self.x_max)
            & (p[:, 1] >= self.y_min) & (p[:, 1] <= self.y_max)
            & (p[:, 2] >= self.z_min) & (p[:, 2] <= self.z_max)
        )


OPENLANE_RANGE = PerceptionRange(-30.0, 30.0, 3.0, 103.0, -10.0, 10.0)
ARGOVERSE2_RANGE = PerceptionRange(-15.0, 15.0, -30.0, 30.0, -2.0, 2.0)
ARGOVERSE2_FRONT_RANGE = PerceptionRange(-15.0, 15.0, 0.0, 30.0, -2.0, 2.0)


def compose_projection(rig: CameraRig) -> ProjMatrix:
    """3x4 matrix intrinsic @ extrinsic[:3] mapping homogeneous ego points to pixels."""
    m = rig.intrinsic @ rig.extrinsic[:3]
    if np.linalg.matrix_rank(m) < 3:
        raise InvalidRig("composed projection matrix is singular")
    return ProjMatrix(m)


def _full_chain(rig: CameraRig) -> np.ndarray:
    """Invertible 4x4 form of the projection: [K 0; 0 1] @ extrinsic."""
    k4 = np.eye(4)
    k4[:3, :3] = rig.intrinsic
    return k4 @ rig.extrinsic


def project_points(points: np.ndarray, m: ProjMatrix) -> np.ndarray:
    """Vectorized projection; returns (N, 3) rows of (u, v, depth).

    No visibility check is applied: rows with depth <= MIN_DEPTH are
    meaningless and callers must mask them.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    h = p @ m.m[:, :3].T + m.m[:, 3]
    depth = h[:, 2]
    safe = np.where(np.abs(depth) > MIN_DEPTH, depth, 1.0)
    return np.column_stack([h[:, 0] / safe, h[:, 1] / safe, depth])


def project_point(p, m: ProjMatrix) -> tuple[float, float, float]:
    u, v, depth = project_points(np.asarray(p, dtype=np.float64)[None, :], m)[0]
    if depth <= MIN_DEPTH:
        raise BehindCamera(f"point {tuple(np.ravel(p))} has depth {depth:g}")
    return float(u), float(v), float(depth)


def project_homogeneous(ph, m: ProjMatrix) -> tuple[float, float]:
    """Project a homogeneous 4-vector; any positive rescaling gives the same pixel."""
    h = m.m @ np.asarray(ph, dtype=np.float64)
    if h[2] <= MIN_DEPTH * abs(ph[3]):
        raise BehindCamera("homogeneous point is behind the camera")
    return float(h[0] / h[2]), float(h[1] / h[2])


def unproject_points(uvd: np.ndarray, rig: CameraRig) -> np.ndarray:
    """Inverse of :func:`project_points` using the carried depth."""
    uvd = np.asarray(uvd, dtype=np.float64).reshape(-1, 3)
    d = uvd[:, 2]
    h = np.column_stack([uvd[:, 0] * d, uvd[:, 1] * d, d, np.ones_like(d)])
    ego = np.linalg.solve(_full_chain(rig), h.T).T
    return ego[:, :3]


def in_image(u, v, h, w):
    """Pixel lies inside [0, w) x [0, h); works elementwise on arrays."""
    return (u >= 0) & (u < w) & (v >= 0) & (v < h)


def split_runs(points: np.ndarray, keep: np.ndarray, min_points: int = 2) -> list[np.ndarray]:
    """Maximal runs of consecutive kept points with at least ``min_points`` each."""
    runs = []
    start = None
    for i, k in enumerate(np.append(keep, False)):
        if k and start is None:
            start = i
        elif not k and start is not None:
            if i - start >= min_points:
                runs.append(points[start:i])
            start = None
    return runs


def _runs_to_lanes(runs, class_id) -> list[AnnotatedLane]:
    out = []
    for run in runs:
        # A run can still collapse if unprojection merged neighbours.
        try:
            out.append(AnnotatedLane.from_raw(run, class_id))
        except DegenerateLane:
            continue
    return out


def surround_to_frontview(lanes: Sequence[AnnotatedLane], rig: CameraRig) -> list[AnnotatedLane]:
    """Keep the parts of each lane visible in the front camera.

    Points are projected to the image, points behind the camera or outside
    the image are dropped, and survivors are lifted back to 3D with their
    depth. Lanes are split at dropped points; runs shorter than two points
    are discarded.
    """
    m = compose_projection(rig)
    out = []
    for lane in lanes:
        uvd = project_points(lane.points, m)
        visible = (uvd[:, 2] > MIN_DEPTH) & in_image(uvd[:, 0], uvd[:, 1], rig.image_h, rig.image_w)
        if not visible.any():
            continue
        restored = lane.points.copy()
        restored[visible] = unproject_points(uvd[visible], rig)
        out.extend(_runs_to_lanes(split_runs(restored, visible), lane.class_id))
    return out


def range_filter_3d(lanes: Sequence[AnnotatedLane], rng: PerceptionRange) -> list[AnnotatedLane]:
    """Drop points outside the box and split lanes at the gaps."""
    out = []
    for lane in lanes:
        keep = rng.contains(lane.points)
        out.extend(_runs_to_lanes(split_runs(lane.points, keep), lane.class_id))
    return out

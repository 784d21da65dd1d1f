"""Tool configuration: dataset presets plus JSON config-file overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import FormatError, InvalidConfig
from .matching import FOCAL_ALPHA, FOCAL_GAMMA, CostWeights
from .metrics import DEFAULT_AP_THRESHOLDS, MatchCriteria
from .projection import ARGOVERSE2_RANGE, OPENLANE_RANGE, PerceptionRange

MODES = ("openlane", "argoverse2")

# Foreground class names for the Argoverse2 preset; background is appended last.
ARGOVERSE2_CLASSES = ("divider", "ped_crossing", "boundary", "background")


@dataclass(frozen=True)
class ToolConfig:
    mode: str = "openlane"
    num_keypoints: int = 20
    num_controls: int = 5
    num_classes: int = 17
    weights: CostWeights = field(default_factory=CostWeights)
    criteria: MatchCriteria = field(default_factory=MatchCriteria)
    chamfer_thresholds: tuple[float, ...] = DEFAULT_AP_THRESHOLDS
    perception_range: PerceptionRange = OPENLANE_RANGE
    param_mode: str = "chord"
    poly_degree: int = 3
    ap_dims: int = 3
    focal_alpha: float = FOCAL_ALPHA
    focal_gamma: float = FOCAL_GAMMA
    # Crop evaluated lanes to the perception range before matching.
    eval_range_filter: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_keypoints < 4:
            raise InvalidConfig("num_keypoints must be >= 4")
        if self.num_controls < 2:
            raise InvalidConfig("num_controls must be >= 2")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2 (foreground + background)")
        if not self.chamfer_thresholds or any(t <= 0 for t in self.chamfer_thresholds):
            raise InvalidConfig("chamfer_thresholds must be a non-empty set of positive values")
        if self.param_mode not in ("chord", "uniform"):
            raise InvalidConfig(f"param_mode must be chord or uniform, got {self.param_mode!r}")
        if self.poly_degree < 0:
            raise InvalidConfig("poly_degree must be >= 0")
        if self.ap_dims not in (2, 3):
            raise InvalidConfig("ap_dims must be 2 or 3")

    @property
    def background(self) -> int:
        return self.num_classes - 1

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["chamfer_thresholds"] = list(self.chamfer_thresholds)
        return d


def preset(mode: str) -> ToolConfig:
    if mode == "openlane":
        return ToolConfig()
    if mode == "argoverse2":
        return ToolConfig(
            mode="argoverse2", num_keypoints=20, num_controls=10, num_classes=4,
            perception_range=ARGOVERSE2_RANGE, ap_dims=2,
        )
    raise InvalidConfig(f"unknown mode {mode!r}; expected one of {MODES}")


_NESTED = {
    "weights": CostWeights,
    "criteria": MatchCriteria,
    "perception_range": PerceptionRange,
}


def _build_nested(cls, base, value, key):
    if not isinstance(value, dict):
        raise FormatError(f"config key {key!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise FormatError(f"unknown keys in {key!r}: {sorted(unknown)}")
    return dataclasses.replace(base, **{k: float(v) for k, v in value.items()})


def config_from_dict(data: dict[str, Any], mode: Optional[str] = None) -> ToolConfig:
    """Resolve a config: preset for the mode, then explicit overrides.

    ``mode`` (e.g. from the command line) takes precedence over ``data["mode"]``.
    """
    if not isinstance(data, dict):
        raise FormatError("config must be a JSON object")
    chosen = mode or data.get("mode", "openlane")
    base = preset(chosen)
    names = {f.name for f in dataclasses.fields(ToolConfig)}
    unknown = set(data) - names
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    updates: dict[str, Any] = {}
    for key, value in data.items():
        if key == "mode":
            continue
        if key in _NESTED:
            updates[key] = _build_nested(_NESTED[key], getattr(base, key), value, key)
        elif key == "chamfer_thresholds":
            updates[key] = tuple(float(v) for v in value)
        else:
            updates[key] = value
    try:
        return dataclasses.replace(base, **updates)
    except TypeError as exc:
        raise FormatError(f"bad config value: {exc}") from exc


def load_config(path: Optional[str | Path], mode: Optional[str] = None) -> ToolConfig:
    if path is None:
        return preset(mode or "openlane")
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data, mode)

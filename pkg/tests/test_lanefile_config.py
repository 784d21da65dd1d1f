import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from lanejoint.config import config_from_dict, load_config, preset
from lanejoint.errors import FormatError, InvalidConfig
from lanejoint.lane_model import AnnotatedLane, Complexity, classify_complexity
from lanejoint.lanefile import (
    LaneFileFrame,
    LaneRecord,
    atomic_write,
    dumps_frames,
    load_frames,
    parse_frames,
    save_frames,
)
from lanejoint.synth import KINDS, synth_dataset, synth_predictions, synth_scene

SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "frame.schema.json").read_text())


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_frames(p) == []
    assert parse_frames(["\n", "  \n"]) == []


def test_frame_without_lanes():
    frames = parse_frames(['{"frame_id": "a", "lanes": []}'])
    assert frames[0].frame_id == "a" and frames[0].lanes == []


def test_one_point_lane_is_rejected():
    line = json.dumps({"frame_id": "f7", "lanes": [
        {"points": [[0, 0, 0], [0, 1, 0]]},
        {"points": [[0, 0, 0]]},
    ]})
    with pytest.raises(FormatError) as err:
        parse_frames(["", line], "lanes.jsonl")
    msg = str(err.value)
    assert "lanes.jsonl:2" in msg and "'f7'" in msg and "lane 1" in msg


@pytest.mark.parametrize("line, needle", [
    ("{not json", "invalid JSON"),
    ('{"lanes": []}', "frame_id"),
    ('{"frame_id": "a", "lanes": [{"points": [[0,0,0],[1,1,1]], "colour": 1}]}', "unknown lane keys"),
    ('{"frame_id": "a", "lanes": [{"points": [[0,0,0],[1,1,1]], "confidence": 2}]}', "confidence"),
    ('{"frame_id": "a", "lanes": [{"points": [[0,0,0],[1,1,1]], "class_id": 1.5}]}', "class_id"),
    ('{"frame_id": "a", "lanes": [{"points": [[0,0,0],[1,1,"x"]]}]}', "lane 0"),
])
def test_malformed_records(line, needle):
    with pytest.raises(FormatError, match=needle):
        parse_frames([line])


def test_duplicate_frame_ids():
    line = '{"frame_id": "a", "lanes": []}'
    with pytest.raises(FormatError, match="duplicate"):
        parse_frames([line, line])


def test_class_range_checked_against_vocabulary():
    line = '{"frame_id": "a", "lanes": [{"points": [[0,0,0],[1,1,1]], "class_id": 4}]}'
    parse_frames([line], num_classes=17)
    with pytest.raises(FormatError, match="outside"):
        parse_frames([line], num_classes=4)


def random_frames(seed):
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(4):
        recs = []
        for _ in range(3):
            pts = rng.normal(size=(int(rng.integers(2, 30)), 3)) * 10 ** rng.uniform(-8, 8)
            recs.append(LaneRecord(AnnotatedLane(pts, int(rng.integers(0, 17))),
                                   confidence=float(rng.random()),
                                   scores=rng.dirichlet(np.ones(17)),
                                   controls=rng.normal(size=(5, 3))))
        frames.append(LaneFileFrame(f"f{i}", recs, synth_scene("straight").camera))
    return frames


def test_round_trip_bit_exact(tmp_path):
    frames = random_frames(0)
    path = tmp_path / "x.jsonl"
    save_frames(frames, path)
    back = load_frames(path)
    for a, b in zip(frames, back):
        assert a.frame_id == b.frame_id
        np.testing.assert_array_equal(a.camera.extrinsic, b.camera.extrinsic)
        for ra, rb in zip(a.lanes, b.lanes):
            assert ra.lane.points.tobytes() == rb.lane.points.tobytes()
            assert ra.scores.tobytes() == rb.scores.tobytes()
            assert ra.controls.tobytes() == rb.controls.tobytes()
            assert ra.confidence == rb.confidence and ra.class_id == rb.class_id
    assert dumps_frames(back) == path.read_text()


def test_output_validates_against_schema():
    frames = random_frames(1) + [synth_scene(k) for k in KINDS]
    for line in dumps_frames(frames).splitlines():
        jsonschema.validate(json.loads(line), SCHEMA)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"

    with pytest.raises(TypeError):
        atomic_write(target, 123)  # not text
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []
    atomic_write(target, "ok\n")
    assert target.read_text() == "ok\n"


# -- config ------------------------------------------------------------------

def test_presets():
    ol = preset("openlane")
    assert (ol.num_keypoints, ol.num_controls, ol.num_classes, ol.background) == (20, 5, 17, 16)
    assert ol.chamfer_thresholds == (0.5, 1.0, 1.5)
    assert ol.criteria.confidence_thresh == 0.25
    av = preset("argoverse2")
    assert (av.num_keypoints, av.num_controls, av.num_classes, av.ap_dims) == (20, 10, 4, 2)
    assert (av.perception_range.x_min, av.perception_range.y_max, av.perception_range.z_max) == (-15, 30, 2)
    with pytest.raises(InvalidConfig):
        preset("nuscenes")


def test_config_overrides(tmp_path):
    cfg = config_from_dict({"num_controls": 8, "weights": {"delta_class": 2.0},
                            "criteria": {"point_dist_thresh": 1.0}})
    assert cfg.num_controls == 8 and cfg.weights.delta_class == 2.0
    assert cfg.weights.alpha_shape == 1.0 and cfg.criteria.point_dist_thresh == 1.0
    assert config_from_dict({"mode": "argoverse2"}).num_classes == 4
    assert config_from_dict({"mode": "argoverse2"}, mode="openlane").num_classes == 17
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"chamfer_thresholds": [1.0]}))
    assert load_config(p).chamfer_thresholds == (1.0,)
    assert load_config(None, "argoverse2") == preset("argoverse2")


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"weights": {"lambda_nope": 1}},
    {"weights": 3},
    {"num_keypoints": "twenty"},
])
def test_config_rejects_bad_keys(data):
    with pytest.raises(FormatError):
        config_from_dict(data)


@pytest.mark.parametrize("data", [
    {"num_keypoints": 3},
    {"num_controls": 1},
    {"chamfer_thresholds": []},
    {"param_mode": "centripetal"},
])
def test_config_invariants(data):
    with pytest.raises(InvalidConfig):
        config_from_dict(data)


def test_config_round_trips_through_dict():
    cfg = preset("argoverse2")
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# -- synthetic scenes ------------------------------------------------------------

def test_synth_deterministic():
    for kind in KINDS:
        a = dumps_frames([synth_scene(kind, 0.05, seed=3)])
        assert a == dumps_frames([synth_scene(kind, 0.05, seed=3)])
        assert a != dumps_frames([synth_scene(kind, 0.05, seed=4)])
    assert dumps_frames(synth_dataset(7, 1)) == dumps_frames(synth_dataset(7, 1))


@pytest.mark.parametrize("kind, expected", [
    ("straight", Complexity.SIMPLE),
    ("u_shape", Complexity.COMPLEX),
    ("closed_loop", Complexity.COMPLEX),
    ("lateral", Complexity.COMPLEX),
    ("y_shape", Complexity.SIMPLE),
])
def test_synth_complexity(kind, expected):
    assert classify_complexity(synth_scene(kind).annotated()) is expected


def test_synth_errors():
    with pytest.raises(InvalidConfig):
        synth_scene("spiral")
    with pytest.raises(InvalidConfig):
        synth_scene("straight", noise_sigma=-1)


def test_synth_predictions():
    gt = synth_scene("lateral", seed=2)
    p = synth_predictions(gt, seed=5, miss_prob=0.0, false_positives=2)
    assert len(p.lanes) == len(gt.lanes) + 2
    assert all(0.0 <= r.confidence <= 1.0 for r in p.lanes)
    assert dumps_frames([p]) == dumps_frames([synth_predictions(gt, seed=5, miss_prob=0.0,
                                                                false_positives=2)])

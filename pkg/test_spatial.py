"""
Spatial micro-event encoders, lane geometry and pedestrian tracking
"""

import dataclasses

import pytest

from ml.errors import MissingPrecedingVehicle, NoMatch
from ml.spatial import (Lane, SpatialExtractor, congestion_level, encode_pedestrian_speed,
                        encode_preceding, filter_detections, iou, lane_of, match_pedestrians,
                        pedestrian_speed, preceding_vehicle, relative_distance, relative_speed)
from ml.trip_model import DetectedObject, DetectionFrame, WindowSlice, window_trip


def _frame(objects, t=0.0, mpp=0.05, fps=15.0):
    return DetectionFrame(t, 960.0, 540.0, fps, mpp, tuple(objects))


def _obj(cls, bbox, confidence=0.9, **attrs):
    return DetectedObject(cls, tuple(float(v) for v in bbox), confidence, attrs)


@pytest.mark.parametrize("count,level", [(0, 0), (4, 0), (5, 0), (5.5, 1), (7, 1), (10, 1), (10.5, 2), (12, 2)])
def test_congestion_levels(count, level):
    assert congestion_level(count) == level


@pytest.mark.parametrize("speed,code", [(0.0, 0), (1.2, 0), (1.339, 0), (1.34, 1), (1.40, 1), (1.43, 1),
                                        (1.431, 2), (1.5, 2)])
def test_pedestrian_speed_codes(speed, code):
    assert encode_pedestrian_speed(speed) == code


def test_preceding_joint_code():
    assert [encode_preceding(s, d) for s, d in ((0, 0), (0, 1), (1, 0), (1, 1))] == [0, 1, 2, 3]


def test_lane_split():
    assert lane_of((0, 0, 100, 10), 960) == Lane.LEFT
    assert lane_of((400, 0, 560, 10), 960) == Lane.MIDDLE
    assert lane_of((800, 0, 960, 10), 960) == Lane.RIGHT
    # center exactly on the left boundary belongs to the middle lane
    assert lane_of((172, 0, 212, 10), 960) == Lane.MIDDLE


def test_filter_detections_keeps_order():
    frame = _frame([_obj("Car", (0, 0, 200, 100)), _obj("Car", (0, 0, 50, 50)),
                    _obj("Bus", (0, 0, 200, 100), confidence=0.3), _obj("Truck", (10, 0, 210, 100))])
    kept = filter_detections(frame)
    assert [o.cls for o in kept.objects] == ["Car", "Truck"]


def test_preceding_vehicle_and_distance():
    small = _obj("Car", (420, 200, 540, 300))
    large = _obj("Truck", (380, 150, 580, 340))
    side = _obj("Car", (0, 100, 150, 500))
    frame = _frame([small, large, side])

    assert preceding_vehicle(frame) == large
    assert relative_distance(frame) == pytest.approx((540 - 340) * 0.05)
    assert relative_distance(_frame([side])) is None


def test_relative_speed_sign_and_missing_leader():
    assert relative_speed(10.0, 9.5, 15.0) == pytest.approx(-7.5)
    with pytest.raises(MissingPrecedingVehicle):
        relative_speed(None, 9.5, 15.0)


def test_iou():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_greedy_matching_prefers_highest_overlap():
    a, b = _obj("Pedestrian", (0, 0, 60, 180)), _obj("Pedestrian", (100, 0, 160, 180))
    a2, b2 = _obj("Pedestrian", (2, 0, 62, 180)), _obj("Pedestrian", (130, 0, 190, 180))
    pairs = match_pedestrians([a, b], [b2, a2])
    assert pairs == [(a, a2), (b, b2)]
    assert match_pedestrians([a], [_obj("Pedestrian", (500, 0, 560, 180))]) == []


def test_pedestrian_speed_from_bottom_midpoint():
    before = _obj("Pedestrian", (300, 220, 360, 400))
    after = _obj("Pedestrian", (302, 220, 362, 400))
    frames = (_frame([before]), _frame([after], t=1 / 15))
    assert pedestrian_speed(frames, (before, after)) == pytest.approx(2 * 0.05 * 15)
    with pytest.raises(NoMatch):
        pedestrian_speed(frames, None)
    with pytest.raises(NoMatch):
        pedestrian_speed(frames, (before, _obj("Pedestrian", (700, 220, 760, 400))))


def test_extractor_on_synthetic_windows(sample_trip):
    extractor = SpatialExtractor()
    windows = window_trip(sample_trip)

    red = extractor.extract(windows[3])
    assert red.traffic_light == 1
    assert red.pedestrian == 0

    crossing = extractor.extract(windows[6])
    assert crossing.pedestrian == 1
    assert crossing.pedestrian_speed == 2
    assert crossing.ped_speed == pytest.approx(1.5)

    quiet = extractor.extract(windows[0])
    assert quiet.feature_values()["D_m"] is None
    assert quiet.congestion == 0 and quiet.traffic_light == 0


def test_extractor_leader_fields():
    frames = tuple(_frame([_obj("Car", (400, 200, 560, y1), braking=True)], t=t)
                   for y1, t in ((340, 0.0), (345, 1 / 15)))
    features = SpatialExtractor().extract(WindowSlice(0, 0.0, 5.0, frames=frames))

    assert features.braking == 1
    assert features.rel_distance == pytest.approx(((540 - 340) + (540 - 345)) / 2 * 0.05)
    assert features.rel_speed == pytest.approx(5 * 0.05 * 15)
    assert features.distance_flag == 1
    assert features.speed_flag == 1
    assert features.preceding == 3


def _busy_frames():
    """Two frames of a crowded scene with boxes the filter drops and two walking pedestrians"""
    frames = []
    for step, t in enumerate((0.0, 1 / 15)):
        frames.append(_frame([
            _obj("Car", (400, 200, 560, 340 + 5 * step), braking=True),
            _obj("Truck", (380, 150, 580, 300 + 5 * step)),
            _obj("Car", (0, 100, 150, 500)),
            _obj("Car", (700, 100, 900, 400)),
            _obj("Car", (450, 0, 470, 20)),
            _obj("Bus", (300, 100, 500, 400), confidence=0.2),
            _obj("Pedestrian", (300 + 2 * step, 220, 360 + 2 * step, 400)),
            _obj("Pedestrian", (500 + 3 * step, 200, 560 + 3 * step, 390)),
            _obj("TrafficLight", (600, 0, 700, 120), color="red"),
        ], t=t))
    return tuple(frames)


def test_filter_detections_is_idempotent(sample_trip):
    frames = list(_busy_frames()) + [f for w in window_trip(sample_trip) for f in w.frames[:3]]
    for frame in frames:
        once = filter_detections(frame)
        assert filter_detections(once) == once


def _reordered(window, order):
    return dataclasses.replace(window, frames=tuple(
        dataclasses.replace(f, objects=tuple(order(list(f.objects)))) for f in window.frames))


@pytest.mark.parametrize("order", [lambda objs: objs[::-1], lambda objs: objs[1::2] + objs[0::2]],
                         ids=["reversed", "interleaved"])
def test_spatial_features_ignore_object_order(sample_trip, order):
    extractor = SpatialExtractor()
    windows = window_trip(sample_trip) + [WindowSlice(0, 0.0, 5.0, frames=_busy_frames())]
    for window in windows:
        assert extractor.extract(_reordered(window, order)) == extractor.extract(window), window.window_index

"""
Trip file parsing, serialization, signal conditioning and windowing
"""

import io
import math

import numpy as np
import pytest

from ml.errors import EmptyTrip, NonUniformSampling, ParseError, ValidationError
from ml.trip_model import (ImuSample, TripMeta, TripRecord, load_trip, low_pass_filter, parse_trip,
                           preprocess_trip, resample_imu, save_trip, trip_lines, window_trip)


def _imu(t, ax=0.0, ay=0.0, az=9.81):
    return {"type": "imu", "t": t, "ax": ax, "ay": ay, "az": az}


def test_parse_minimal_trip(trip_text):
    text = trip_text(records=[
        _imu(0.0), _imu(0.1),
        {"type": "gps", "t": 0.0, "lat": 48.1, "lon": 11.5},
        {"type": "det", "t": 0.0, "frame_width": 960, "frame_height": 540,
         "objects": [{"class": "Car", "bbox": [10, 20, 200, 180], "confidence": 0.8}]},
        {"type": "score", "t": 2.0, "annotator_id": "b", "score": 4},
        {"type": "score", "t": 2.0, "annotator_id": "a", "score": 3},
    ])
    trip = parse_trip(io.StringIO(text))

    assert trip.trip_id == "t1"
    assert trip.meta.road_type == 1
    assert len(trip.imu) == 2 and len(trip.gps) == 1
    assert trip.frames[0].fps == 15
    assert trip.frames[0].objects[0].area == pytest.approx(190 * 160)
    assert [a.annotator_id for a in trip.annotations] == ["a", "b"]


def test_frame_calibration_overrides_header(trip_text):
    text = trip_text(records=[{"type": "det", "t": 0.0, "frame_width": 960, "frame_height": 540,
                               "fps": 30, "meters_per_pixel": 0.1, "objects": []}])
    frame = parse_trip(io.StringIO(text)).frames[0]
    assert frame.fps == 30
    assert frame.meters_per_pixel == 0.1


@pytest.mark.parametrize("text", [
    "",
    "not json\n",
    '["a list"]\n',
])
def test_unparseable_input(text):
    with pytest.raises(ParseError):
        parse_trip(io.StringIO(text))


def test_unknown_record_type(trip_text):
    with pytest.raises(ParseError, match="unknown record type"):
        parse_trip(io.StringIO(trip_text(records=[{"type": "lidar", "t": 0}])))


def test_timestamps_must_increase(trip_text):
    with pytest.raises(ValidationError):
        parse_trip(io.StringIO(trip_text(records=[_imu(1.0), _imu(1.0)])))


@pytest.mark.parametrize("record", [
    {"type": "score", "t": 1.0, "annotator_id": "a", "score": 6},
    {"type": "gps", "t": 0.0, "lat": 91.0, "lon": 0.0},
    {"type": "det", "t": 0.0, "frame_width": 960, "frame_height": 540,
     "objects": [{"class": "Car", "bbox": [200, 20, 10, 180], "confidence": 0.8}]},
    {"type": "det", "t": 0.0, "frame_width": 960, "frame_height": 540,
     "objects": [{"class": "Zeppelin", "bbox": [0, 0, 10, 10], "confidence": 0.8}]},
])
def test_out_of_range_values(trip_text, record):
    with pytest.raises(ValidationError):
        parse_trip(io.StringIO(trip_text(records=[record])))


def test_header_ranges(trip_text):
    with pytest.raises(ValidationError):
        parse_trip(io.StringIO(trip_text(header={"weather": 6})))
    with pytest.raises(ParseError):
        parse_trip(io.StringIO(trip_text(header={"trip_id": ""})))


def test_span_prefers_declared_duration(trip_text):
    trip = parse_trip(io.StringIO(trip_text(header={"duration": 12.0}, records=[_imu(0.0), _imu(3.0)])))
    assert trip.span == 12.0
    undeclared = parse_trip(io.StringIO(trip_text(records=[_imu(k / 2) for k in range(7)])))
    assert undeclared.span == pytest.approx(3.5)


def test_undeclared_span_covers_the_last_imu_sample(trip_text):
    records = [_imu(i / 30) for i in range(40 * 30)]
    trip = parse_trip(io.StringIO(trip_text(records=records)))
    assert trip.span == pytest.approx(40.0)
    assert len(window_trip(trip, 5.0)) == 8


def test_save_and_load(tmp_path, sample_trip):
    path = tmp_path / "trip.jsonl"
    save_trip(sample_trip, str(path))
    loaded = load_trip(str(path))

    assert loaded == sample_trip
    assert trip_lines(loaded) == trip_lines(sample_trip)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_trip(str(tmp_path / "missing.jsonl"))


def test_low_pass_passes_constant_signal():
    signal = [(i / 30, 2.5) for i in range(60)]
    assert [v for _, v in low_pass_filter(signal, 5.0)] == pytest.approx([2.5] * 60)


def test_low_pass_attenuates_above_cutoff():
    fs, fc, f = 100.0, 2.0, 8.0
    t = np.arange(0, 10, 1 / fs)
    x = np.sin(2 * np.pi * f * t)
    y = np.asarray([v for _, v in low_pass_filter(list(zip(t, x)), fc)])

    tail = t >= t[-1] - 2.0
    assert np.ptp(y[tail]) / np.ptp(x[tail]) < 0.3


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.5, -0.7), (-3.0, 0.0), (0.0, 4.2)])
def test_low_pass_is_linear(a, b):
    rng = np.random.default_rng(7)
    t = np.arange(150) / 30
    x, y = rng.normal(0, 2, 150), rng.normal(0, 2, 150)

    def filtered(v):
        return np.asarray([out for _, out in low_pass_filter(list(zip(t, v)), 5.0)])

    combined = filtered(a * x + b * y)
    assert np.max(np.abs(combined - (a * filtered(x) + b * filtered(y)))) < 1e-6


def test_low_pass_rejects_irregular_sampling():
    with pytest.raises(NonUniformSampling):
        low_pass_filter([(0.0, 1.0), (0.1, 1.0), (0.3, 1.0)], 1.0)


def test_low_pass_rejects_cutoff_above_nyquist():
    with pytest.raises(ValidationError):
        low_pass_filter([(i / 10, 0.0) for i in range(10)], 6.0)


def test_resample_onto_uniform_grid():
    meta = TripMeta(0, 0, 0.05, 15.0)
    imu = (ImuSample(0.0, 0.0, 0.0, 0.0), ImuSample(0.5, 1.0, 0.0, 0.0), ImuSample(1.0, 0.0, 0.0, 0.0))
    trip = resample_imu(TripRecord("r", meta, imu), 10.0)

    assert len(trip.imu) == 11
    assert trip.imu[3].t == pytest.approx(0.3)
    assert trip.imu[3].ax == pytest.approx(0.6)


def test_preprocess_keeps_other_streams(sample_trip):
    clean = preprocess_trip(sample_trip, 30.0, 5.0)
    assert clean.gps == sample_trip.gps
    assert clean.frames == sample_trip.frames
    assert len(clean.imu) == len(sample_trip.imu)


def test_windows_are_half_open_and_drop_the_tail(sample_trip):
    windows = window_trip(sample_trip, 5.0)

    assert len(windows) == 8
    for w in windows:
        assert all(w.t_start <= s.t < w.t_end for s in w.imu)
        assert all(w.t_start <= f.t < w.t_end for f in w.frames)
    assert sum(len(w.imu) for w in windows) == len(sample_trip.imu)

    short = window_trip(sample_trip, 7.0)
    assert len(short) == math.floor(40 / 7)


def test_trip_shorter_than_a_window(trip_text):
    trip = parse_trip(io.StringIO(trip_text(records=[_imu(0.0), _imu(2.0)])))
    with pytest.raises(EmptyTrip):
        window_trip(trip, 5.0)
    with pytest.raises(ValidationError):
        window_trip(trip, 0.0)

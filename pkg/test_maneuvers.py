"""
Maneuver detectors on hand-built signals and on synthetic trips
"""

import dataclasses

import numpy as np
import pytest

from ml.config import ManeuverConfig
from ml.errors import TooFewFixes, TooShortWindow
from ml.maneuvers import (ManeuverDetector, detect_abrupt_stop, detect_jerk, detect_sharp_turn,
                          detect_side_slip, detect_swerving, detect_weaving, sample_rate)
from ml.synth import MANEUVER_EVENTS, synthesize_corpus
from ml.trip_model import GpsFix, window_trip

RATE = 30.0
T = np.arange(0, 5, 1 / RATE)


def test_weaving_on_lateral_oscillation():
    ax = np.sin(2 * np.pi * T)
    assert detect_weaving(ax, RATE) == pytest.approx(np.std(ax[:60]), rel=0.05)
    assert detect_weaving(np.zeros_like(T), RATE) == 0.0


def test_weaving_needs_two_seconds():
    with pytest.raises(TooShortWindow):
        detect_weaving(np.zeros(30), RATE)


def test_swerving_is_single_signed():
    pulse = 2.5 * np.clip(1.0 - np.abs(T - 2.5), 0.0, None)
    assert detect_swerving(pulse, np.zeros_like(T), RATE) > 0.5
    assert detect_swerving(np.sin(2 * np.pi * T), np.zeros_like(T), RATE) == 0.0


def test_swerving_requires_little_forward_movement():
    pulse = 2.5 * np.clip(1.0 - np.abs(T - 2.5), 0.0, None)
    assert detect_swerving(pulse, np.full_like(T, 0.5), RATE) == 0.0


def test_side_slip_excursion():
    shape = 2.0 * np.clip((0.8 - np.abs(T - 2.5)) / 0.3, 0.0, 1.0)
    forward = np.full_like(T, 0.4)
    assert detect_side_slip(shape, forward, RATE) > 0.0
    assert detect_side_slip(shape, np.zeros_like(T), RATE) == 0.0


def test_abrupt_stop():
    ay = np.where(T < 1.0, 2.0, np.where(T < 2.0, 2.0 * (2.0 - T), 0.0))
    az = np.full_like(T, 9.81)
    assert detect_abrupt_stop(ay, az) == 1
    assert detect_abrupt_stop(np.full_like(T, 2.0), az) == 0
    assert detect_abrupt_stop(np.zeros_like(T), az) == 0


def test_abrupt_stop_rejects_vertical_shaking():
    ay = np.where(T < 1.0, 2.0, 0.0)
    az = 9.81 + 3.0 * np.sign(np.sin(2 * np.pi * 5 * T))
    assert detect_abrupt_stop(ay, az) == 0


def _fixes(points):
    return [GpsFix(float(i), lat, lon) for i, (lat, lon) in enumerate(points)]


def test_sharp_turn_from_heading_change():
    east_then_north = _fixes([(0, 0), (0, 1e-4), (0, 2e-4), (1e-4, 2e-4)])
    assert detect_sharp_turn(east_then_north) == pytest.approx(90.0)

    straight = _fixes([(0, 0), (0, 1e-4), (0, 2e-4)])
    assert detect_sharp_turn(straight, floor_deg=1.0) == 0.0


def test_sharp_turn_needs_three_fixes():
    with pytest.raises(TooFewFixes):
        detect_sharp_turn(_fixes([(0, 0), (0, 1e-4)]))


def test_jerk_is_max_sample_difference_rate():
    ax = np.zeros(30)
    ax[10:13] = 1.2
    assert detect_jerk(ax, RATE) == pytest.approx(36.0)
    with pytest.raises(TooShortWindow):
        detect_jerk([0.0], RATE)


def test_sample_rate():
    assert sample_rate(list(T)) == pytest.approx(RATE)
    with pytest.raises(TooShortWindow):
        sample_rate([1.0])


def test_jerk_floor_zeroes_mild_jerk(sample_trip):
    window = window_trip(sample_trip)[6]
    lenient = ManeuverDetector(ManeuverConfig(jerk_floor=0.0)).extract(window)
    default = ManeuverDetector().extract(window)
    assert lenient.jerk > 0.0
    assert default.jerk == 0.0


def _closed_loop(kind, seed):
    labeled = synthesize_corpus(1, {kind: 1.0}, seed=seed, n_windows=5)[0]
    detector = ManeuverDetector()
    for window, planted in zip(window_trip(labeled.trip), labeled.planted):
        values = detector.extract(window).feature_values()
        if planted:
            for factor in planted:
                assert values[factor] > 0, f"{kind} missed {factor} in window {window.window_index}"
        else:
            assert all(v == 0 for v in values.values()), f"{kind} fired in quiet window"


@pytest.mark.parametrize("kind", MANEUVER_EVENTS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_maneuvers_are_detected(kind, seed):
    _closed_loop(kind, seed)


@pytest.mark.slow
@pytest.mark.parametrize("kind", MANEUVER_EVENTS)
def test_planted_maneuvers_over_many_seeds(kind):
    for seed in range(50):
        _closed_loop(kind, seed)


def _shifted(window, offset):
    return dataclasses.replace(
        window,
        t_start=window.t_start + offset,
        t_end=window.t_end + offset,
        imu=tuple(dataclasses.replace(s, t=s.t + offset) for s in window.imu),
        gps=tuple(dataclasses.replace(g, t=g.t + offset) for g in window.gps),
        frames=tuple(dataclasses.replace(f, t=f.t + offset) for f in window.frames),
    )


@pytest.mark.parametrize("offset", [-3.0, 17.5, 1000.0])
def test_maneuvers_ignore_a_time_shift(sample_trip, offset):
    detector = ManeuverDetector(ManeuverConfig(jerk_floor=0.0))
    for window in window_trip(sample_trip):
        expected = detector.extract(window).feature_values()
        shifted = detector.extract(_shifted(window, offset)).feature_values()
        assert shifted == pytest.approx(expected, rel=1e-6, abs=1e-9), window.window_index


PULSE = 2.5 * np.clip(1.0 - np.abs(T - 2.5), 0.0, None)
SLIP = 2.0 * np.clip((0.8 - np.abs(T - 2.5)) / 0.3, 0.0, 1.0)
STEP = np.where(T < 2.5, 0.0, 1.2)

MAGNITUDES = [
    ("A_W", np.sin(2 * np.pi * T), lambda ax: detect_weaving(ax, RATE)),
    ("A_S", PULSE, lambda ax: detect_swerving(ax, np.zeros_like(T), RATE)),
    ("A_L", SLIP, lambda ax: detect_side_slip(ax, np.full_like(T, 0.4), RATE)),
    ("A_J", STEP, lambda ax: detect_jerk(ax, RATE)),
]


@pytest.mark.parametrize("name,ax,measure", MAGNITUDES, ids=[m[0] for m in MAGNITUDES])
@pytest.mark.parametrize("scale", [1.5, 2.0, 4.0])
def test_lateral_magnitudes_grow_with_scale(name, ax, measure, scale):
    base = measure(ax)
    assert base > 0.0, name
    assert measure(scale * ax) >= base
    assert measure(scale * ax) == pytest.approx(scale * base)

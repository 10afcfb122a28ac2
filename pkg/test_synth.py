"""
Scenario scripts, planted ground truth and synthetic corpora
"""

import json

import pytest

from ml.errors import InvalidMix, InvalidScript, ParseError, ValidationError
from ml.evaluation import load_ballots
from ml.synth import (ScenarioEvent, ScenarioScript, load_labels, load_script, mix_counts,
                      parse_mix, script_from_dict, synthesize, synthesize_corpus, validate_script,
                      write_corpus)
from ml.trip_model import load_trip, trip_lines


def test_sample_script_plants_two_windows(sample_labeled):
    assert len(sample_labeled.planted) == 8
    assert sample_labeled.planted[3] == ("A_J", "A_Q", "L")
    assert sample_labeled.planted[6] == ("A_W", "P", "Q")
    assert all(not f for k, f in enumerate(sample_labeled.planted) if k not in (3, 6))
    assert sample_labeled.scores == (5, 5, 5, 1, 5, 5, 1, 5)


def test_sample_trip_streams(sample_labeled):
    trip = sample_labeled.trip
    assert trip.trip_id == "sample-red-light"
    assert len(trip.imu) == 40 * 30
    assert len(trip.frames) == 40 * 15
    assert len(trip.annotations) == 8 * 3
    assert trip.meta.road_type == 2


def test_synthesis_is_deterministic(sample_script):
    assert trip_lines(synthesize(sample_script).trip) == trip_lines(synthesize(sample_script).trip)


def _script(**fields):
    data = {"duration": 20, "events": [{"kind": "weave", "t_start": 5, "t_end": 8}]}
    data.update(fields)
    return data


@pytest.mark.parametrize("data", [
    [],
    {"events": []},
    _script(duration=-1),
    _script(duration="long"),
    _script(baseline_score=2),
    _script(weather=9),
    _script(imu_sigma=-0.1),
    _script(events=[{"kind": "teleport", "t_start": 1, "t_end": 4}]),
    _script(events=[{"kind": "weave", "t_start": 18, "t_end": 22}]),
    _script(events=[{"kind": "swerve", "t_start": 1, "t_end": 2}]),
    _script(events=[{"kind": "weave", "t_start": 1, "t_end": 4, "params": {"speed": 2}}]),
    _script(events=[{"kind": "congestion", "t_start": 1, "t_end": 4, "params": {"level": 3}}]),
    _script(events=[{"kind": "sharp_turn", "t_start": 1, "t_end": 4, "params": {"angle": 0}}]),
    _script(events=[{"kind": "pedestrian_cross", "t_start": 1, "t_end": 4, "params": {"speed": 0}}]),
    _script(events="weave"),
])
def test_invalid_scripts(data):
    with pytest.raises(InvalidScript):
        script_from_dict(data)


def test_load_script_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidScript):
        load_script(str(bad))
    with pytest.raises(ParseError):
        load_script(str(tmp_path / "missing.json"))


def test_script_dict_form(sample_script):
    assert script_from_dict(json.loads(json.dumps(sample_script.to_dict()))) == sample_script


def test_event_factors():
    assert ScenarioEvent("pedestrian_cross", 0, 5, {"speed": 1.0}).factors() == ("P",)
    assert ScenarioEvent("pedestrian_cross", 0, 5).factors() == ("P", "Q")
    assert ScenarioEvent("congestion", 0, 5, {"level": 0}).factors() == ()
    assert ScenarioEvent("abrupt_stop", 10, 13).anchor == 12.0


def test_synthesize_rejects_bad_window_size(sample_script):
    with pytest.raises(ValidationError):
        synthesize(sample_script, delta=0)
    validate_script(ScenarioScript(duration=10.0))


def test_mix_counts_largest_remainder():
    counts = mix_counts(10, {"red_light_stop": 0.5, "weave": 0.25, "swerve": 0.25})
    assert counts == {"red_light_stop": 5, "swerve": 3, "weave": 2}
    assert sum(mix_counts(7, {"weave": 1 / 3, "swerve": 1 / 3, "side_slip": 1 / 3}).values()) == 7


@pytest.mark.parametrize("mix", [{}, {"weave": 0.5}, {"teleport": 1.0}, {"weave": 1.5, "swerve": -0.5}])
def test_invalid_mix(mix):
    with pytest.raises(InvalidMix):
        mix_counts(4, mix)


def test_parse_mix():
    assert parse_mix("red_light_stop=0.5, weave=0.5") == {"red_light_stop": 0.5, "weave": 0.5}
    with pytest.raises(InvalidMix):
        parse_mix("weave=lots")


def test_corpus_plants_one_template_per_trip():
    corpus = synthesize_corpus(6, {"red_light_stop": 0.5, "heavy_swerve": 0.5}, seed=1, n_windows=6)

    assert [c.trip.trip_id for c in corpus] == [f"synth-{i:04d}" for i in range(6)]
    for labeled in corpus:
        windows = [k for k, f in enumerate(labeled.planted) if f]
        assert len(windows) == 1
        assert 2 <= windows[0] < 6
        assert labeled.planted[windows[0]] in (("A_J", "A_Q", "L"), ("A_S", "H"))


def test_corpus_is_seeded():
    a = synthesize_corpus(3, {"weave": 1.0}, seed=5, n_windows=4)
    b = synthesize_corpus(3, {"weave": 1.0}, seed=5, n_windows=4)
    assert [trip_lines(x.trip) for x in a] == [trip_lines(x.trip) for x in b]


def test_corpus_arguments():
    with pytest.raises(ValidationError):
        synthesize_corpus(0, {"weave": 1.0})
    with pytest.raises(ValidationError):
        synthesize_corpus(2, {"weave": 1.0}, n_windows=2)


def test_write_corpus(tmp_path):
    corpus = synthesize_corpus(2, {"red_light_stop": 1.0}, seed=2, n_windows=4)
    paths = write_corpus(corpus, str(tmp_path / "corpus"))

    assert [load_trip(p).trip_id for p in paths] == ["synth-0000", "synth-0001"]
    labels = load_labels(str(tmp_path / "corpus" / "labels.jsonl"))
    assert len(labels) == 8
    planted = {key: f for key, f in labels.items() if f}
    assert set(planted.values()) == {("A_J", "A_Q", "L")}

    ballots = load_ballots(str(tmp_path / "corpus" / "ballots.jsonl"))
    assert set(ballots) == set(planted)
    assert all(len(b) == 3 for b in ballots.values())


def test_load_labels_errors(tmp_path):
    bad = tmp_path / "labels.jsonl"
    bad.write_text('{"trip_id": "t"}\n')
    with pytest.raises(ParseError):
        load_labels(str(bad))

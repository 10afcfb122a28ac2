"""
SOM codebook initialization, training, BMU lookup and generative events
"""

import json

import numpy as np
import pytest

from ml.errors import (BadDimensions, EmptySamples, NoWindows, ParseError, SpecMismatch, ValidationError,
                       VersionMismatch)
from ml.features import DEFAULT_SPEC, FeatureVectorSpec, FeatureWindow, spec_for
from ml.som import (GenerativeEvents, SomCodebook, bmu, extract_f_gen, grid_distances, init_codebook,
                    load_codebook, map_dump, quantization_error, save_codebook, topographic_error,
                    train, trip_to_grid)

SMALL = FeatureVectorSpec.from_ids(["A_W", "A_S", "A_L"])


def test_init_is_seeded_and_bounded():
    a = init_codebook(DEFAULT_SPEC, 7, 21, seed=42)
    b = init_codebook(DEFAULT_SPEC, 7, 21, seed=42)
    c = init_codebook(DEFAULT_SPEC, 7, 21, seed=43)

    assert a.weights.shape == (147, 21)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    assert a.weights.min() >= 0.0 and a.weights.max() < 1.0
    assert not a.trained


@pytest.mark.parametrize("rows,cols", [(0, 3), (3, 0), (-1, 2)])
def test_bad_grid_dimensions(rows, cols):
    with pytest.raises(BadDimensions):
        init_codebook(SMALL, rows, cols)


def test_grid_positions_are_row_major():
    codebook = init_codebook(SMALL, 2, 3)
    assert codebook.grid_position(4) == (1, 1)
    grid = grid_distances(2, 3)
    assert grid[0, 4] == 1
    assert grid[0, 5] == 2


def test_bmu_against_brute_force_with_ties():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        weights = rng.integers(0, 3, (6, 3)).astype(float)
        x = rng.integers(0, 3, 3).astype(float)
        codebook = SomCodebook(2, 3, weights, SMALL)

        squared = [int(((w - x) ** 2).sum()) for w in weights]
        expected = squared.index(min(squared))
        index, distance = bmu(codebook, x)
        assert index == expected
        assert distance == pytest.approx(np.sqrt(min(squared)))


def test_bmu_rejects_wrong_length():
    with pytest.raises(SpecMismatch):
        bmu(init_codebook(SMALL, 1, 2), [0.0, 0.0])


def test_single_neuron_converges_to_its_sample():
    sample = [0.2, 0.9, 0.4]
    trained = train(init_codebook(SMALL, 1, 1, seed=1), [sample], epochs=50)
    assert trained.trained
    assert trained.weights[0] == pytest.approx(sample, abs=1e-3)
    assert quantization_error(trained, [sample]) == pytest.approx(0.0, abs=1e-3)


def test_training_leaves_the_input_untouched():
    codebook = init_codebook(SMALL, 2, 2, seed=3)
    before = codebook.weights.copy()
    train(codebook, [[1.0, 0.0, 0.0]], epochs=5)
    assert np.array_equal(codebook.weights, before)
    with pytest.raises(EmptySamples):
        train(codebook, [], epochs=5)


def test_training_is_deterministic():
    samples = np.random.default_rng(0).random((20, 3))
    a = train(init_codebook(SMALL, 3, 3, seed=9), samples, epochs=20)
    b = train(init_codebook(SMALL, 3, 3, seed=9), samples, epochs=20)
    assert np.array_equal(a.weights, b.weights)


def test_zero_radius_updates_the_winner_only():
    # a floor of 1 would also pull neuron 1 towards the sample
    weights = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0]])
    codebook = SomCodebook(1, 3, weights, SMALL)
    sample = [0.9, 0.8, 1.0]
    trained = train(codebook, [sample], epochs=1, alpha0=1.0, radius0=0)
    assert trained.weights[2] == pytest.approx(sample)
    assert np.array_equal(trained.weights[:2], weights[:2])


def _clusters(rng, n=20, noise=0.05):
    first = np.clip(np.array([1.0, 0.0, 0.0]) + rng.normal(0, noise, (n, 3)), 0, 1)
    second = np.clip(np.array([0.0, 0.0, 1.0]) + rng.normal(0, noise, (n, 3)), 0, 1)
    return first, second


def _separates(seed):
    rng = np.random.default_rng(seed)
    first, second = _clusters(rng)
    trained = train(init_codebook(SMALL, 3, 3, seed=seed), np.vstack([first, second]), epochs=100)
    first_units = {bmu(trained, x)[0] for x in first}
    second_units = {bmu(trained, x)[0] for x in second}
    return not first_units & second_units


def test_two_clusters_map_to_disjoint_units():
    assert _separates(0)


@pytest.mark.slow
def test_two_clusters_separate_over_many_seeds():
    assert sum(_separates(seed) for seed in range(100)) >= 95


def test_map_quality_measures():
    samples = np.random.default_rng(2).random((30, 3))
    trained = train(init_codebook(SMALL, 3, 3, seed=2), samples, epochs=30)
    assert quantization_error(trained, samples) < quantization_error(init_codebook(SMALL, 3, 3, seed=2), samples)
    assert 0.0 <= topographic_error(trained, samples) <= 1.0
    assert topographic_error(init_codebook(SMALL, 1, 1), samples) == 0.0


def _windows(n):
    return [FeatureWindow(i, (float(i), 0.0, 0.0)) for i in range(n)]


def test_trip_to_grid_pads_and_truncates():
    padded = trip_to_grid(_windows(3), 5)
    assert padded.shape == (5, 3)
    assert padded[:, 0].tolist() == [0, 1, 2, 2, 2]
    assert trip_to_grid(_windows(10), 4)[:, 0].tolist() == [0, 1, 2, 3]
    with pytest.raises(NoWindows):
        trip_to_grid(_windows(3), 5, policy="truncate")
    with pytest.raises(NoWindows):
        trip_to_grid([], 5)
    with pytest.raises(ValidationError):
        trip_to_grid(_windows(3), 2, policy="mirror")


def _hand_codebook():
    weights = np.array([[0.2, 0.9, 0.2], [1.0, 1.0, 1.0]])
    return SomCodebook(1, 2, weights, SMALL, trained=True)


def test_f_gen_orders_by_weight_and_breaks_ties_by_index():
    f_gen = extract_f_gen(_hand_codebook(), [0.3, 0.8, 0.1], k=3)
    assert f_gen.bmu == 0
    assert f_gen.ids == ["A_S", "A_W", "A_L"]
    assert [e.weight for e in f_gen.events] == [0.9, 0.2, 0.2]
    assert f_gen.events[0].level == pytest.approx(0.8)
    assert f_gen.events[0].value == "severe swerving"


def test_f_gen_filters():
    codebook = _hand_codebook()
    assert extract_f_gen(codebook, [0.3, 0.8, 0.0], k=3, active_only=True).ids == ["A_S", "A_W"]
    assert extract_f_gen(codebook, [0.3, 0.8, 0.1], k=3, min_weight=0.5).ids == ["A_S"]
    assert len(extract_f_gen(codebook, [0.3, 0.8, 0.1], k=1).events) == 1


@pytest.mark.parametrize("k", [0, 4])
def test_f_gen_k_bounds(k):
    with pytest.raises(ValidationError):
        extract_f_gen(_hand_codebook(), [0.3, 0.8, 0.1], k=k)


def test_generative_events_dict_form():
    f_gen = extract_f_gen(_hand_codebook(), [0.3, 0.8, 0.1], k=2)
    assert GenerativeEvents.from_dict(json.loads(json.dumps(f_gen.to_dict()))) == f_gen


def test_save_and_load_exactly(tmp_path):
    codebook = train(init_codebook(DEFAULT_SPEC, 2, 3, seed=4), np.random.default_rng(4).random((5, 21)),
                     epochs=3)
    path = tmp_path / "codebook.som"
    save_codebook(codebook, str(path))
    loaded = load_codebook(str(path), DEFAULT_SPEC)

    assert np.array_equal(loaded.weights, codebook.weights)
    assert (loaded.rows, loaded.cols, loaded.seed, loaded.trained) == (2, 3, 4, True)
    assert loaded.spec == DEFAULT_SPEC


def test_load_rejects_another_spec(tmp_path):
    path = tmp_path / "codebook.som"
    save_codebook(init_codebook(DEFAULT_SPEC, 1, 2), str(path))
    with pytest.raises(VersionMismatch):
        load_codebook(str(path), spec_for("maneuver"))


def test_load_rejects_other_formats(tmp_path):
    path = tmp_path / "codebook.som"
    save_codebook(init_codebook(SMALL, 1, 2), str(path))
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])

    header["version"] = 99
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(VersionMismatch):
        load_codebook(str(path))

    path.write_text(lines[0] + "\n" + lines[1] + "\n")
    with pytest.raises(ParseError):
        load_codebook(str(path))

    path.write_text("not a header\n")
    with pytest.raises(ParseError):
        load_codebook(str(path))

    with pytest.raises(ParseError):
        load_codebook(str(tmp_path / "missing.som"))


def test_map_dump():
    windows = [FeatureWindow(0, (0.2, 0.9, 0.2)), FeatureWindow(1, (1.0, 1.0, 1.0))]
    frame = map_dump(_hand_codebook(), [("t1", windows)])
    assert list(frame.columns) == ["trip_id", "window_index", "neuron", "row", "col", "distance"]
    assert frame["window_index"].tolist() == [0, 1]
    assert frame["neuron"].tolist() == [0, 1]
    assert frame["col"].tolist() == [0, 1]
    assert frame["distance"].tolist() == [0.0, 0.0]

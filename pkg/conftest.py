"""
Shared fixtures: synthetic trips, a small red-light corpus and a codebook trained on it
"""

import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from ml.config import DriveLensConfig
from ml.features import DEFAULT_SPEC
from ml.pipeline import DriveLensPipeline, RunConfig, train_codebook
from ml.synth import load_script, synthesize, synthesize_corpus

ROOT = os.path.dirname(os.path.abspath(__file__))
SAMPLE_SCRIPT = os.path.join(ROOT, "ml", "resources", "sample_scenario.json")


@pytest.fixture(scope="session")
def sample_script():
    return load_script(SAMPLE_SCRIPT)


@pytest.fixture(scope="session")
def sample_labeled(sample_script):
    return synthesize(sample_script)


@pytest.fixture
def sample_trip(sample_labeled):
    return sample_labeled.trip


@pytest.fixture(scope="session")
def red_light_corpus():
    return synthesize_corpus(12, {"red_light_stop": 1.0}, seed=3, road_types=(0,), weathers=(0,))


@pytest.fixture(scope="session")
def red_light_codebook(red_light_corpus):
    pipeline = DriveLensPipeline(RunConfig(guards=False))
    samples = [fw for labeled in red_light_corpus
               for fw in pipeline.analyze(labeled.trip).feature_windows]
    return train_codebook(samples, DriveLensConfig(), DEFAULT_SPEC, epochs=200)


@pytest.fixture
def trip_text():
    """Builds trip file text from a header override and record dicts"""
    def build(header=None, records=()):
        head = {"trip_id": "t1", "road_type": 1, "weather": 0, "mpp": 0.05, "fps": 15}
        head.update(header or {})
        return "\n".join([json.dumps(head)] + [json.dumps(r) for r in records]) + "\n"
    return build

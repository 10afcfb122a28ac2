"""
DriveLens Behavior Score Module
Instant scores from annotators, predicted window scores and fluctuation detection
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyHistory, EmptyScores, ScorerUnavailable, TooFewScores
from .features import DEFAULT_SPEC, FeatureVectorSpec, FeatureWindow, check_vector
from .trip_model import WindowSlice

logger = logging.getLogger(__name__)

ANNOTATED = "annotated"
PREDICTED = "predicted"


@dataclass(frozen=True)
class ScoreSeries:
    """Per-window Likert scores, each tagged with where it came from"""
    scores: Tuple[int, ...]
    sources: Tuple[str, ...]

    @property
    def source(self) -> str:
        return ANNOTATED if self.sources and all(s == ANNOTATED for s in self.sources) else PREDICTED

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class FluctuationEvent:
    window_index: int
    current: int
    baseline: int
    delta: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class Agreement:
    std: float
    relaunch: bool


def _ceil_mean(values: Sequence[int]) -> int:
    # integer ceil keeps exact halves exact
    return -(-sum(values) // len(values))


def instant_score(annotator_scores: Sequence[int]) -> int:
    if len(annotator_scores) == 0:
        raise EmptyScores("instant score needs at least one annotator score")
    return _ceil_mean([int(s) for s in annotator_scores])


def annotator_agreement(annotator_scores: Sequence[int], max_std: float = 1.0) -> Agreement:
    """Population std-dev of the ratings, relaunch the annotation when above max_std"""
    if len(annotator_scores) < 2:
        raise TooFewScores("agreement needs at least two scores")
    std = float(np.std(np.asarray(annotator_scores, dtype=float)))
    return Agreement(std=std, relaunch=std > max_std)


def baseline_score(history: Sequence[int]) -> int:
    if len(history) == 0:
        raise EmptyHistory("baseline needs at least one previous window")
    return _ceil_mean([int(s) for s in history])


def detect_fluctuation(history: Sequence[int], current: int, epsilon: float = 1.0,
                       window_index: Optional[int] = None) -> Optional[FluctuationEvent]:
    baseline = baseline_score(history)
    delta = abs(int(current) - baseline)
    if delta > epsilon:
        index = len(history) if window_index is None else window_index
        return FluctuationEvent(index, int(current), baseline, delta)
    return None


def fluctuations(series: ScoreSeries, epsilon: float = 1.0) -> List[FluctuationEvent]:
    """Sweep every window U >= 1 against the ceil-mean of windows 0..U-1"""
    events = []
    for u in range(1, len(series.scores)):
        event = detect_fluctuation(series.scores[:u], series.scores[u], epsilon, window_index=u)
        if event is not None:
            events.append(event)
    return events


# ========================
# Pluggable window scorers
# ========================

class RuleTableScorer:
    """
    Transparent penalty table: one point per active maneuver or micro-event,
    score = 5 - points clamped to [1, 5].
    """

    DEFAULT_PENALTIES = {
        "A_W": 1, "A_S": 1, "A_L": 1, "A_Q": 1, "A_U": 1, "A_J": 1,
        "O": 1, "B": 1, "C": 1, "P": 1, "Q": 1, "L": 1, "H": 1,
    }

    def __init__(self, penalties: Optional[Mapping[str, int]] = None,
                 spec: FeatureVectorSpec = DEFAULT_SPEC):
        self.penalties = dict(self.DEFAULT_PENALTIES if penalties is None else penalties)
        self.spec = spec

    def score(self, window: FeatureWindow) -> int:
        x = check_vector(self.spec, window.values)
        points = sum(weight for name, weight in self.penalties.items()
                     if name in self.spec and x[self.spec.index(name)] > 0)
        return int(min(5, max(1, 5 - points)))


SCORERS = {
    "rules": RuleTableScorer,
}


def get_scorer(name: str, spec: FeatureVectorSpec = DEFAULT_SPEC):
    if name not in SCORERS:
        raise ScorerUnavailable(f"no scorer named {name!r}, available: {sorted(SCORERS)}")
    return SCORERS[name](spec=spec)


def predict_window_score(features: FeatureWindow, scorer=None) -> int:
    if scorer is None:
        scorer = RuleTableScorer()
    if not callable(getattr(scorer, "score", None)):
        raise ScorerUnavailable(f"{type(scorer).__name__} has no score() method")
    score = int(scorer.score(features))
    return min(5, max(1, score))


def window_instant_scores(windows: Sequence[WindowSlice]) -> List[Optional[int]]:
    return [instant_score([a.score for a in w.annotations]) if w.annotations else None
            for w in windows]


def series_from_instants(instants: Sequence[Optional[int]], feature_windows: Sequence[FeatureWindow],
                         scorer=None) -> ScoreSeries:
    """Instant scores where present, predicted scores elsewhere"""
    scores, sources = [], []
    for instant, features in zip(instants, feature_windows):
        if instant is not None:
            scores.append(int(instant))
            sources.append(ANNOTATED)
        else:
            scores.append(predict_window_score(features, scorer))
            sources.append(PREDICTED)
    return ScoreSeries(tuple(scores), tuple(sources))


def window_scores(windows: Sequence[WindowSlice], feature_windows: Sequence[FeatureWindow],
                  scorer=None) -> ScoreSeries:
    """Instant scores where annotations exist, predicted scores elsewhere"""
    return series_from_instants(window_instant_scores(windows), feature_windows, scorer)


def window_agreement(windows: Sequence[WindowSlice]) -> Dict[int, Agreement]:
    """Annotator agreement for every window rated by at least two annotators"""
    result = {}
    for window in windows:
        ratings = [a.score for a in window.annotations]
        if len(ratings) >= 2:
            result[window.window_index] = annotator_agreement(ratings)
    return result

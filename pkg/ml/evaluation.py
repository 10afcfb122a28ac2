"""
DriveLens Evaluation Module
Dice similarity, majority-vote ground truth, percentage of error and mismatch ATE scorecards
"""

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics.pairwise import cosine_similarity

from .causal import HIGH_CAUSAL_THRESHOLD, build_matched_pairs, estimate_ate
from .errors import (EmptyQuery, EmptyResults, EmptySet, NoBallots, NoPairs, ParseError,
                     ValidationError)
from .features import CONFOUNDER, MANEUVER, SPATIAL

logger = logging.getLogger(__name__)

VOTE_THRESHOLD = 0.6
MIN_ANNOTATORS = 3


def dice(f_gt: Iterable[str], f_gen: Iterable[str]) -> float:
    """2|GT ∩ GEN| / (|GT| + |GEN|) over identifier sets"""
    gt, gen = set(f_gt), set(f_gen)
    if not gt or not gen:
        raise EmptySet("dice needs two nonempty sets")
    return 2 * len(gt & gen) / (len(gt) + len(gen))


@dataclass(frozen=True)
class GroundTruthFactors:
    """F_GT: factors kept by majority vote with their vote fractions"""
    factors: frozenset
    fractions: Dict[str, float]
    n_ballots: int

    def to_dict(self) -> Dict:
        return {"factors": sorted(self.factors), "fractions": dict(sorted(self.fractions.items())),
                "n_ballots": self.n_ballots}


def majority_vote(ballots: Sequence[Iterable[str]], threshold: float = VOTE_THRESHOLD) -> GroundTruthFactors:
    """Keep every factor chosen by at least `threshold` of the ballots"""
    if len(ballots) == 0:
        raise NoBallots("majority vote needs at least one ballot")
    if not 0 < threshold <= 1:
        raise ValidationError("threshold", f"vote threshold must lie in (0, 1], got {threshold}")
    if len(ballots) < MIN_ANNOTATORS:
        logger.warning("Only %d ballots, at least %d annotators are expected", len(ballots), MIN_ANNOTATORS)

    votes = Counter()
    for ballot in ballots:
        votes.update(set(ballot))
    n = len(ballots)
    fractions = {name: count / n for name, count in votes.items()}
    # inclusive: a fraction equal to the threshold is kept
    kept = frozenset(name for name, f in fractions.items() if f >= threshold - 1e-12)
    return GroundTruthFactors(kept, fractions, n)


def _bucket(category: str) -> str:
    return SPATIAL if category == CONFOUNDER else category


def percentage_of_error(results: Sequence[Tuple[Iterable[str], Iterable[str]]],
                        category_of: Callable[[str], str]) -> Dict[str, float]:
    """
    Share of trips (in %) whose missed factors F_GT \\ F_GEN include a factor of each
    category. A trip that misses both kinds counts once in each. Confounders count as spatial.
    """
    if len(results) == 0:
        raise EmptyResults("percentage of error needs at least one trip")
    missed = {MANEUVER: 0, SPATIAL: 0}
    for f_gt, f_gen in results:
        categories = {_bucket(category_of(name)) for name in set(f_gt) - set(f_gen)}
        for category in categories:
            missed[category] += 1
    return {category: 100.0 * count / len(results) for category, count in missed.items()}


@dataclass
class MismatchReport:
    """ATE of each generated factor the annotators did not pick"""
    ates: Dict[str, float] = field(default_factory=dict)

    @property
    def mean_ate(self) -> Optional[float]:
        return float(np.mean(list(self.ates.values()))) if self.ates else None

    @property
    def high_causal(self) -> List[str]:
        return sorted(name for name, ate in self.ates.items() if ate > HIGH_CAUSAL_THRESHOLD)

    def to_dict(self) -> Dict:
        return {"ates": dict(sorted(self.ates.items())), "mean_ate": self.mean_ate,
                "high_causal": self.high_causal}


def mismatch_ate(results: Sequence[Tuple[Iterable[str], Iterable[str]]], response: Sequence[float],
                 features: Mapping[str, Sequence[float]],
                 covariates: Optional[Mapping[str, Sequence[float]]] = None) -> MismatchReport:
    """
    ATE of every feature in F_GEN \\ F_GT over the trip corpus. A trip is treated for a
    feature where its value > 0; pairs are matched exactly on the covariates other than
    the feature itself. Features without a matched pair are left out of the report.
    """
    mismatched = sorted({name for f_gt, f_gen in results for name in set(f_gen) - set(f_gt)})
    report = MismatchReport()
    if not mismatched:
        return report

    covariates = covariates or {}
    r = np.asarray(response, dtype=float)
    for name in mismatched:
        if name not in features:
            raise ValidationError(name, f"no series for mismatched feature {name}")
        cov_names = [c for c in sorted(covariates) if c != name]
        cov_values = [np.asarray(covariates[c], dtype=float) for c in cov_names]
        x = np.asarray(features[name], dtype=float)
        try:
            pairs = build_matched_pairs((x > 0).astype(float), cov_values, 0.0, name, cov_names)
            report.ates[name] = estimate_ate(pairs, r, x).ate
        except NoPairs as e:
            logger.warning("   * Skipping mismatch ATE of %s: %s", name, e)
    return report


@dataclass(frozen=True)
class TripEvaluation:
    """One evaluated window: ground truth against the ranked generated factors"""
    trip_id: str
    window_index: int
    f_gt: frozenset
    f_gen: Tuple[str, ...]
    generated_text: str = ""
    human_text: Optional[str] = None


def _dice_or_zero(f_gt: Iterable[str], f_gen: Iterable[str]) -> float:
    try:
        return dice(f_gt, f_gen)
    except EmptySet:
        return 0.0


def _similarity_or_zero(human: str, model: str) -> float:
    try:
        return sentence_similarity(human, model)
    except EmptyQuery:
        return 0.0


@dataclass
class EvalScorecard:
    k: int
    n_trips: int
    n_windows: int
    dice_top3: float
    dice_top5: float
    dice_k: float
    error: Dict[str, float]
    mismatch: MismatchReport
    sentence_similarity: Optional[float] = None
    details: pd.DataFrame = field(repr=False, default_factory=pd.DataFrame)

    def to_dict(self) -> Dict:
        data = {k: v for k, v in asdict(self).items() if k not in ("details", "mismatch")}
        data["mismatch"] = self.mismatch.to_dict()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=str)

    def to_frame(self) -> pd.DataFrame:
        """Metric/value rows for delimited output"""
        rows = [("trips", self.n_trips), ("k", self.k), ("dice_top3", self.dice_top3),
                ("dice_top5", self.dice_top5), (f"dice_top{self.k}", self.dice_k),
                ("windows", self.n_windows)]
        if self.sentence_similarity is not None:
            rows.append(("sentence_similarity", self.sentence_similarity))
        rows += [(f"error_{c}", v) for c, v in sorted(self.error.items())]
        rows += [(f"ate_{name}", ate) for name, ate in sorted(self.mismatch.ates.items())]
        rows.append(("mean_mismatch_ate", self.mismatch.mean_ate))
        return pd.DataFrame(rows, columns=["metric", "value"])


def evaluate_corpus(evaluations: Sequence[TripEvaluation], category_of: Callable[[str], str],
                    k: int = 5, response: Optional[Sequence[float]] = None,
                    features: Optional[Mapping[str, Sequence[float]]] = None,
                    covariates: Optional[Mapping[str, Sequence[float]]] = None) -> EvalScorecard:
    """
    Scorecard over evaluated windows. An empty F_GT or F_GEN scores a Dice of 0.
    The mismatch ATE needs per-evaluation response and feature series.
    """
    if len(evaluations) == 0:
        raise EmptyResults("nothing to evaluate")
    if k < 1:
        raise ValidationError("k", f"k must be positive, got {k}")

    records = []
    for e in evaluations:
        records.append({
            "trip_id": e.trip_id,
            "window_index": e.window_index,
            "f_gt": " ".join(sorted(e.f_gt)),
            "f_gen": " ".join(e.f_gen),
            "dice_top3": _dice_or_zero(e.f_gt, e.f_gen[:3]),
            "dice_top5": _dice_or_zero(e.f_gt, e.f_gen[:5]),
            "dice_k": _dice_or_zero(e.f_gt, e.f_gen[:k]),
            "missed": " ".join(sorted(set(e.f_gt) - set(e.f_gen[:k]))),
        })
        if e.human_text is not None:
            records[-1]["similarity"] = _similarity_or_zero(e.human_text, e.generated_text)
    details = pd.DataFrame(records).sort_values(["trip_id", "window_index"], kind="stable")
    details = details.reset_index(drop=True)

    results = [(e.f_gt, e.f_gen[:k]) for e in evaluations]
    mismatch = MismatchReport()
    if response is not None and features is not None:
        mismatch = mismatch_ate(results, response, features, covariates)

    similarity = None
    if "similarity" in details:
        similarity = float(details["similarity"].mean())

    scorecard = EvalScorecard(
        k=k,
        n_trips=len({e.trip_id for e in evaluations}),
        n_windows=len(evaluations),
        dice_top3=float(details["dice_top3"].mean()),
        dice_top5=float(details["dice_top5"].mean()),
        dice_k=float(details["dice_k"].mean()),
        error=percentage_of_error(results, category_of),
        mismatch=mismatch,
        sentence_similarity=similarity,
        details=details,
    )
    logger.info("Evaluated %d windows of %d trips: dice@3=%.3f dice@5=%.3f", scorecard.n_windows,
                scorecard.n_trips, scorecard.dice_top3, scorecard.dice_top5)
    return scorecard


# ========================
# Ballot files
# ========================

BallotKey = Tuple[str, int]


def parse_ballots(lines: Iterable[str]) -> Dict[BallotKey, List[List[str]]]:
    """JSON lines of {trip_id, window_index, annotator_id, factors}, grouped per window"""
    ballots: Dict[BallotKey, Dict[str, List[str]]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            key = (str(record["trip_id"]), int(record["window_index"]))
            annotator = str(record["annotator_id"])
            factors = [str(f) for f in record["factors"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"ballot line {lineno}: {e}") from e
        ballots.setdefault(key, {})[annotator] = factors
    return {key: [by_annotator[a] for a in sorted(by_annotator)]
            for key, by_annotator in sorted(ballots.items())}


def load_ballots(path: str) -> Dict[BallotKey, List[List[str]]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_ballots(f)
    except OSError as e:
        raise ParseError(f"cannot read ballots {path}: {e}") from e


def ground_truth(ballots: Mapping[BallotKey, Sequence[Iterable[str]]],
                 threshold: float = VOTE_THRESHOLD) -> Dict[BallotKey, GroundTruthFactors]:
    return {key: majority_vote(b, threshold) for key, b in ballots.items()}


def sentence_similarity(human: str, model: str) -> float:
    """TF-IDF cosine similarity between a human and a generated explanation"""
    vectorizer = TfidfVectorizer(lowercase=True, token_pattern=r"[A-Za-z0-9]+")
    try:
        matrix = vectorizer.fit_transform([human, model])
    except ValueError as e:
        raise EmptyQuery("sentence similarity needs text with terms") from e
    return float(cosine_similarity(matrix[0], matrix[1])[0, 0])


def parse_sentences(lines: Iterable[str]) -> Dict[BallotKey, str]:
    """JSON lines of {trip_id, window_index, text}: human-written explanations per window"""
    sentences: Dict[BallotKey, str] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            sentences[(str(record["trip_id"]), int(record["window_index"]))] = str(record["text"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"sentence line {lineno}: {e}") from e
    return sentences


def load_sentences(path: str) -> Dict[BallotKey, str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_sentences(f)
    except OSError as e:
        raise ParseError(f"cannot read sentences {path}: {e}") from e

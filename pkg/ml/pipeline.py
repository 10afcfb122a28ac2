"""
DriveLens Analysis Pipeline
Orchestrates ingest, features, scoring, SOM inference and explanation for each trip
"""

import dataclasses
import io
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from .config import DriveLensConfig
from .errors import ConfigError, DriveLensError, ParseError, StageError, ValidationError
from .explainer import ExplanationReport, Explainer
from .features import FeatureVectorSpec, FeatureWindow, encode_window, spec_for
from .guards import AuditLogger, TripGuard
from .maneuvers import ManeuverDetector, ManeuverFeatures
from .scoring import (Agreement, FluctuationEvent, ScoreSeries, fluctuations, get_scorer,
                      series_from_instants, window_agreement, window_instant_scores)
from .som import GenerativeEvents, SomCodebook, extract_f_gen, init_codebook, load_codebook, train
from .spatial import SpatialExtractor, SpatialFeatures
from .trip_model import TripRecord, WindowSlice, preprocess_trip, window_trip

logger = logging.getLogger(__name__)

T = TypeVar("T")

META_COLUMNS = ["trip_id", "window_index", "t_start", "t_end", "instant_score"]


@dataclass
class RunConfig:
    """Paths, hyperparameters and stage toggles of one run"""
    config: DriveLensConfig = field(default_factory=DriveLensConfig)
    trip_paths: Tuple[str, ...] = ()
    codebook_path: Optional[str] = None
    corpus_path: Optional[str] = None
    lexicon_path: Optional[str] = None
    output_path: str = "-"
    audit_log: Optional[str] = None
    feature_set: str = "all"
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    topk: Optional[int] = None
    seed: Optional[int] = None
    explain: bool = True
    guards: bool = True
    jobs: int = 1

    def __post_init__(self):
        cfg = self.config
        self.delta = cfg.delta_seconds if self.delta is None else self.delta
        self.epsilon = cfg.epsilon if self.epsilon is None else self.epsilon
        self.topk = cfg.topk if self.topk is None else self.topk
        self.seed = cfg.seed if self.seed is None else self.seed
        self.corpus_path = self.corpus_path or cfg.explain.corpus_path
        self.lexicon_path = self.lexicon_path or cfg.explain.lexicon_path

    @property
    def spec(self) -> FeatureVectorSpec:
        return spec_for(self.feature_set)

    def validate(self, needs_codebook: bool = False):
        if self.delta <= 0:
            raise ValidationError("delta", "window size must be positive")
        if not 1 <= self.topk <= len(self.spec):
            raise ValidationError("topk", f"topk must lie in [1, {len(self.spec)}], got {self.topk}")
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if needs_codebook and not self.codebook_path:
            raise ConfigError("a trained codebook is required (--codebook)")
        for name in ("codebook_path", "corpus_path", "lexicon_path"):
            path = getattr(self, name)
            if path and not os.path.exists(path):
                raise ConfigError(f"{name.replace('_path', '')} file not found: {path}")
        for path in self.trip_paths:
            if path != "-" and not os.path.exists(path):
                raise ConfigError(f"trip file not found: {path}")


@dataclass
class TripAnalysis:
    """Everything computed for a trip up to fluctuation detection"""
    trip: TripRecord
    windows: List[WindowSlice]
    maneuvers: List[ManeuverFeatures]
    spatial: List[SpatialFeatures]
    feature_windows: List[FeatureWindow]
    instants: List[Optional[int]]
    scores: ScoreSeries
    fluctuations: List[FluctuationEvent]
    agreement: Dict[int, Agreement] = field(default_factory=dict)


def _stage(name: str, fn: Callable[[], T], trip_id: Optional[str] = None,
           window_index: Optional[int] = None) -> T:
    try:
        return fn()
    except StageError:
        raise
    except DriveLensError as e:
        raise StageError(name, e, window_index=window_index, trip_id=trip_id) from e


class DriveLensPipeline:
    """
    Complete analysis pipeline:
    1. Runs pre-analysis checks on the trip
    2. Resamples, filters and windows the streams
    3. Extracts maneuver and spatial micro-events per window
    4. Scores windows and detects fluctuations
    5. Maps fluctuation windows onto the codebook and explains them
    6. Runs post-analysis checks
    """

    def __init__(self, run_config: Optional[RunConfig] = None, codebook: Optional[SomCodebook] = None,
                 explainer: Optional[Explainer] = None, audit_logger: Optional[AuditLogger] = None):
        self.run_config = run_config or RunConfig()
        cfg = self.run_config.config
        self.spec = self.run_config.spec
        self.maneuver_detector = ManeuverDetector(cfg.maneuver)
        self.spatial_extractor = SpatialExtractor(cfg.spatial)
        self.scorer = get_scorer(cfg.scorer, self.spec)
        self.codebook = codebook
        self._explainer = explainer
        self.guard = TripGuard(self.run_config.delta, cfg.imu_rate_hz,
                               audit_logger or AuditLogger(self.run_config.audit_log))

    @property
    def explainer(self) -> Explainer:
        if self._explainer is None:
            self._explainer = Explainer.from_paths(self.run_config.corpus_path,
                                                   self.run_config.lexicon_path)
        return self._explainer

    def check(self, trip: TripRecord):
        can_proceed, results = self.guard.pre_analysis_check(trip)
        if not can_proceed:
            failed = [r.message for r in results if not r.passed and r.severity == "critical"]
            raise ValidationError("trip", f"trip {trip.trip_id} blocked: {'; '.join(failed)}")

    def analyze(self, trip: TripRecord) -> TripAnalysis:
        rc = self.run_config
        cfg = rc.config
        tid = trip.trip_id
        if rc.guards:
            self.check(trip)

        clean = _stage("preprocess", lambda: preprocess_trip(trip, cfg.imu_rate_hz, cfg.lowpass_cutoff_hz), tid)
        windows = _stage("window", lambda: window_trip(clean, rc.delta), tid)
        logger.info("   * Trip %s: %d windows of %gs", tid, len(windows), rc.delta)

        maneuvers, spatial, feature_windows = [], [], []
        for w in windows:
            m = _stage("maneuvers", lambda: self.maneuver_detector.extract(w), tid, w.window_index)
            s = _stage("spatial", lambda: self.spatial_extractor.extract(w), tid, w.window_index)
            fw = _stage("features", lambda: encode_window(w.window_index, m, s, clean.meta, self.spec),
                        tid, w.window_index)
            maneuvers.append(m)
            spatial.append(s)
            feature_windows.append(fw)

        instants = _stage("score", lambda: window_instant_scores(windows), tid)
        scores = _stage("score", lambda: series_from_instants(instants, feature_windows, self.scorer), tid)
        events = _stage("fluctuation", lambda: fluctuations(scores, rc.epsilon), tid)
        agreement = _stage("score", lambda: window_agreement(windows), tid)
        logger.info("   * Trip %s: %d fluctuation windows", tid, len(events))
        return TripAnalysis(clean, windows, maneuvers, spatial, feature_windows, instants, scores,
                            events, agreement)

    def infer(self, fw: FeatureWindow, trip_id: Optional[str] = None) -> GenerativeEvents:
        if self.codebook is None:
            raise ConfigError("a trained codebook is required (--codebook)")
        som = self.run_config.config.som
        return _stage("infer", lambda: extract_f_gen(self.codebook, fw, self.run_config.topk,
                                                     som.min_weight, som.active_only),
                      trip_id, fw.window_index)

    def reports_for(self, trip_id: str, feature_windows: Sequence[FeatureWindow],
                    events: Sequence[FluctuationEvent],
                    spans: Sequence[Tuple[float, float]]) -> List[ExplanationReport]:
        """Reports for fluctuation events, positions index feature_windows and spans"""
        reports = []
        for event in events:
            k = event.window_index
            t_start, t_end = spans[k]
            f_gen = self.infer(feature_windows[k], trip_id)
            if self.run_config.explain:
                report = _stage("explain", lambda: self.explainer.explain(
                    trip_id, feature_windows[k].window_index, f_gen, event, t_start, t_end),
                    trip_id, k)
            else:
                report = ExplanationReport(trip_id, feature_windows[k].window_index, f_gen,
                                           t_start=t_start, t_end=t_end, score=event.current,
                                           baseline=event.baseline, delta=event.delta)
            self.guard.audit_logger.log_report(trip_id, report.window_index, f_gen.ids)
            reports.append(report)
        return reports

    def run(self, trip: TripRecord) -> List[ExplanationReport]:
        """One report per fluctuation window, ordered by window"""
        analysis = self.analyze(trip)
        tid = trip.trip_id
        self.guard.audit_logger.log_run_start(tid, len(analysis.windows))

        spans = [(w.t_start, w.t_end) for w in analysis.windows]
        reports = self.reports_for(tid, analysis.feature_windows, analysis.fluctuations, spans)

        if self.run_config.guards:
            relaunch = sorted(k for k, a in analysis.agreement.items() if a.relaunch)
            self.guard.post_analysis_check(len(reports), len(analysis.windows),
                                           sum(1 for r in reports if not r.f_gen.events), relaunch)
        self.guard.audit_logger.log_run_end(tid, len(reports))
        return reports

    def run_many(self, trips: Sequence[TripRecord]) -> List[List[ExplanationReport]]:
        """Trips run concurrently up to the configured number of jobs, results in input order"""
        return parallel_map(self.run, trips, self.run_config.jobs)


def run_pipeline(config: RunConfig, trip: TripRecord, codebook: Optional[SomCodebook] = None,
                 explainer: Optional[Explainer] = None) -> List[ExplanationReport]:
    config.validate(needs_codebook=codebook is None)
    if codebook is None:
        codebook = load_codebook(config.codebook_path, config.spec)
    return DriveLensPipeline(config, codebook, explainer).run(trip)


def parallel_map(fn: Callable[..., T], items: Sequence, jobs: int = 1) -> List[T]:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ========================
# Feature tables
# ========================

def features_frame(analysis: TripAnalysis, spec: FeatureVectorSpec) -> pd.DataFrame:
    """One row per window: metadata, instant score (blank when unannotated), encoded features"""
    rows = []
    for w, fw, instant in zip(analysis.windows, analysis.feature_windows, analysis.instants):
        row = {"trip_id": analysis.trip.trip_id, "window_index": w.window_index,
               "t_start": w.t_start, "t_end": w.t_end, "instant_score": instant}
        row.update(zip(spec.ids, fw.values))
        rows.append(row)
    frame = pd.DataFrame(rows, columns=META_COLUMNS + spec.ids)
    frame["instant_score"] = frame["instant_score"].astype("Int64")
    return frame


def write_frame(frame: pd.DataFrame, path: str):
    """CSV to a path, `-` writes standard output"""
    if path == "-":
        frame.to_csv(sys.stdout, index=False, lineterminator="\n")
    else:
        frame.to_csv(path, index=False, lineterminator="\n")


def read_frame(path: str) -> pd.DataFrame:
    """CSV from a path, `-` reads standard input"""
    source = io.StringIO(sys.stdin.read()) if path == "-" else path
    try:
        return pd.read_csv(source, float_precision="round_trip", dtype={"trip_id": str})
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ParseError(f"cannot read table {path}: {e}") from e


def read_features(paths: Iterable[str]) -> pd.DataFrame:
    frames = [read_frame(p) for p in paths]
    if not frames:
        raise ParseError("no feature tables given")
    return pd.concat(frames, ignore_index=True)


def trip_windows(frame: pd.DataFrame, spec: FeatureVectorSpec) -> Dict[str, Tuple[List[FeatureWindow], List[Optional[int]], pd.DataFrame]]:
    """Per trip: feature windows, instant scores and the trip's rows, in file order of trips"""
    missing = [c for c in META_COLUMNS + spec.ids if c not in frame.columns]
    if missing:
        raise ParseError(f"feature table lacks columns {missing}")
    result = {}
    for trip_id, rows in frame.groupby("trip_id", sort=False):
        rows = rows.sort_values("window_index", kind="stable")
        values = rows[spec.ids].to_numpy(dtype=float)
        windows = [FeatureWindow(int(k), tuple(float(v) for v in vec))
                   for k, vec in zip(rows["window_index"], values)]
        instants = [None if pd.isna(s) else int(s) for s in rows["instant_score"]]
        result[str(trip_id)] = (windows, instants, rows)
    return result


def score_frame(trip_id: str, windows: Sequence[FeatureWindow], series: ScoreSeries,
                events: Sequence[FluctuationEvent]) -> pd.DataFrame:
    by_window = {e.window_index: e for e in events}
    rows = []
    for w, score, source in zip(windows, series.scores, series.sources):
        e = by_window.get(w.window_index)
        rows.append({"trip_id": trip_id, "window_index": w.window_index, "score": score,
                     "source": source, "fluctuation": e is not None,
                     "baseline": e.baseline if e else None, "delta": e.delta if e else None})
    frame = pd.DataFrame(rows, columns=["trip_id", "window_index", "score", "source",
                                        "fluctuation", "baseline", "delta"])
    return frame.astype({"baseline": "Int64", "delta": "Int64"})


def train_codebook(samples: Sequence[FeatureWindow], config: DriveLensConfig,
                   spec: FeatureVectorSpec, epochs: Optional[int] = None,
                   seed: Optional[int] = None) -> SomCodebook:
    som = config.som
    codebook = init_codebook(spec, som.rows, som.cols, config.seed if seed is None else seed)
    logger.info("Training %dx%d map on %d windows", som.rows, som.cols, len(samples))
    return train(codebook, samples, som.epochs if epochs is None else epochs, som.alpha0,
                 som.initial_radius)


def with_overrides(config: DriveLensConfig, **values) -> DriveLensConfig:
    """Config copy with top-level values replaced, None values ignored"""
    return dataclasses.replace(config, **{k: v for k, v in values.items() if v is not None})


def response_series(series: ScoreSeries) -> np.ndarray:
    """Negated scores so that higher means worse driving"""
    return -np.asarray(series.scores, dtype=float)

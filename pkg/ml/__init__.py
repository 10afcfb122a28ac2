"""
DriveLens ML Module
Explains driving-score fluctuations through maneuver and spatial micro-events
"""

from .config import DriveLensConfig, load_config
from .errors import DriveLensError, StageError
from .trip_model import TripRecord, load_trip, save_trip, window_trip
from .maneuvers import ManeuverDetector
from .spatial import SpatialExtractor
from .features import DEFAULT_SPEC, FeatureVectorSpec, FeatureWindow
from .scoring import ScoreSeries, fluctuations
from .causal import causal_study
from .som import SomCodebook, extract_f_gen, load_codebook, save_codebook, train
from .explainer import Explainer, ExplanationReport
from .evaluation import EvalScorecard, evaluate_corpus
from .synth import synthesize, synthesize_corpus
from .guards import AuditLogger, CheckResult, TripGuard
from .pipeline import DriveLensPipeline, RunConfig, run_pipeline

__all__ = [
    'DriveLensConfig',
    'load_config',
    'DriveLensError',
    'StageError',
    'TripRecord',
    'load_trip',
    'save_trip',
    'window_trip',
    'ManeuverDetector',
    'SpatialExtractor',
    'DEFAULT_SPEC',
    'FeatureVectorSpec',
    'FeatureWindow',
    'ScoreSeries',
    'fluctuations',
    'causal_study',
    'SomCodebook',
    'extract_f_gen',
    'load_codebook',
    'save_codebook',
    'train',
    'Explainer',
    'ExplanationReport',
    'EvalScorecard',
    'evaluate_corpus',
    'synthesize',
    'synthesize_corpus',
    'AuditLogger',
    'CheckResult',
    'TripGuard',
    'DriveLensPipeline',
    'RunConfig',
    'run_pipeline',
]

"""
DriveLens Guards Module
Pre-analysis trip validation, post-analysis output checks and the JSON-lines audit trail
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .trip_model import TripRecord

logger = logging.getLogger(__name__)

CRITICAL = "critical"
WARNING = "warning"
INFO = "info"


@dataclass
class CheckResult:
    """Result of one validation check"""
    check_name: str
    passed: bool
    severity: str  # 'critical', 'warning', 'info'
    message: str
    details: Optional[Dict] = None

    def to_dict(self) -> Dict:
        return asdict(self)


class TripValidator:
    """Validates a parsed trip before feature extraction"""

    def __init__(self, delta: float = 5.0, imu_rate_hz: float = 30.0):
        self.delta = delta
        self.imu_rate_hz = imu_rate_hz

    def validate(self, trip: TripRecord) -> List[CheckResult]:
        return [
            self._check_stream_coverage(trip),
            self._check_span(trip),
            self._check_imu_rate(trip),
            self._check_calibration(trip),
            self._check_annotations(trip),
        ]

    def _check_stream_coverage(self, trip: TripRecord) -> CheckResult:
        missing = [name for name, stream in (("imu", trip.imu), ("gps", trip.gps)) if not stream]
        if missing:
            return CheckResult("Stream Coverage", False, CRITICAL,
                               f"Trip {trip.trip_id} has no {' or '.join(missing)} samples",
                               {"missing": missing})
        if not trip.frames:
            return CheckResult("Stream Coverage", False, WARNING,
                               "No detection frames, spatial micro-events will all be zero")
        return CheckResult("Stream Coverage", True, INFO,
                           f"{len(trip.imu)} IMU samples, {len(trip.gps)} fixes, "
                           f"{len(trip.frames)} frames")

    def _check_span(self, trip: TripRecord) -> CheckResult:
        span = trip.span
        if span < self.delta:
            return CheckResult("Trip Span", False, CRITICAL,
                               f"Trip spans {span:.2f}s, shorter than one {self.delta:g}s window",
                               {"span": span, "delta": self.delta})
        return CheckResult("Trip Span", True, INFO,
                           f"{int(span // self.delta)} windows of {self.delta:g}s")

    def _check_imu_rate(self, trip: TripRecord) -> CheckResult:
        if len(trip.imu) < 2:
            return CheckResult("IMU Rate", True, INFO, "Not enough IMU samples to estimate a rate")
        steps = np.diff([s.t for s in trip.imu])
        rate = 1.0 / float(np.median(steps))
        irregular = float(np.max(np.abs(steps - np.median(steps)))) > 0.01 * float(np.median(steps))
        if rate < self.imu_rate_hz / 2 or irregular:
            return CheckResult("IMU Rate", False, WARNING,
                               f"IMU runs at {rate:.1f} Hz{' irregularly' if irregular else ''}, "
                               f"resampled to {self.imu_rate_hz:g} Hz",
                               {"rate_hz": rate, "irregular": irregular})
        return CheckResult("IMU Rate", True, INFO, f"IMU sampled at {rate:.1f} Hz")

    def _check_calibration(self, trip: TripRecord) -> CheckResult:
        odd = sorted({f.t for f in trip.frames
                      if f.meters_per_pixel != trip.meta.meters_per_pixel or f.fps != trip.meta.fps})
        if odd:
            return CheckResult("Detection Calibration", False, WARNING,
                               f"{len(odd)} frames override the trip calibration",
                               {"first_frame_t": odd[0]})
        return CheckResult("Detection Calibration", True, INFO, "Frames share the trip calibration")

    def _check_annotations(self, trip: TripRecord) -> CheckResult:
        if not trip.annotations:
            return CheckResult("Annotations", True, INFO,
                               "No annotations, window scores will be predicted")
        annotators = sorted({a.annotator_id for a in trip.annotations})
        return CheckResult("Annotations", True, INFO,
                           f"{len(trip.annotations)} ratings from {len(annotators)} annotators")


class OutputGuard:
    """Sanity checks on the reports of one trip"""

    # more fluctuating windows than this usually means a noisy scorer
    MAX_FLUCTUATION_RATE = 0.5

    def validate(self, n_reports: int, n_windows: int, empty_explanations: int = 0,
                 relaunch_windows: Sequence[int] = ()) -> List[CheckResult]:
        return [
            self._check_fluctuation_rate(n_reports, n_windows),
            self._check_explanations(n_reports, empty_explanations),
            self._check_agreement(relaunch_windows),
        ]

    def _check_fluctuation_rate(self, n_reports: int, n_windows: int) -> CheckResult:
        rate = n_reports / n_windows if n_windows else 0.0
        if rate > self.MAX_FLUCTUATION_RATE:
            return CheckResult("Fluctuation Rate", False, WARNING,
                               f"{rate:.0%} of windows fluctuate, above {self.MAX_FLUCTUATION_RATE:.0%}",
                               {"rate": rate, "reports": n_reports, "windows": n_windows})
        return CheckResult("Fluctuation Rate", True, INFO, f"{n_reports} of {n_windows} windows fluctuate")

    def _check_explanations(self, n_reports: int, empty: int) -> CheckResult:
        if empty:
            return CheckResult("Explanation Coverage", False, WARNING,
                               f"{empty} of {n_reports} reports have no generative events",
                               {"empty": empty})
        return CheckResult("Explanation Coverage", True, INFO, "Every report carries an explanation")

    def _check_agreement(self, relaunch_windows: Sequence[int]) -> CheckResult:
        if relaunch_windows:
            return CheckResult("Annotator Agreement", False, WARNING,
                               f"Ratings disagree by more than one point in windows {list(relaunch_windows)}",
                               {"relaunch": list(relaunch_windows)})
        return CheckResult("Annotator Agreement", True, INFO, "Annotators agree within one point")


class AuditLogger:
    """JSON-lines audit trail of one analysis session, kept in memory without a file"""

    def __init__(self, log_file: Optional[str] = None):
        self.log_file = log_file
        self.session_id = self._generate_session_id()
        self.events: List[Dict[str, Any]] = []

    def _generate_session_id(self) -> str:
        timestamp = datetime.now().isoformat()
        return hashlib.sha256(timestamp.encode()).hexdigest()[:16]

    def log_event(self, event_type: str, details: Dict[str, Any]) -> Dict[str, Any]:
        event = {
            "timestamp": datetime.now().isoformat(),
            "session_id": self.session_id,
            "event_type": event_type,
            "details": details,
        }
        self.events.append(event)
        if self.log_file:
            with open(self.log_file, "a", encoding="utf-8") as f:
                f.write(json.dumps(event, default=str) + "\n")
        return event

    def log_run_start(self, trip_id: str, n_windows: int):
        return self.log_event("RUN_START", {"trip_id": trip_id, "windows": n_windows})

    def log_checks(self, stage: str, results: Sequence[CheckResult]):
        return self.log_event("CHECKS", {
            "stage": stage,
            "checks": [{"name": r.check_name, "passed": r.passed, "severity": r.severity,
                        "message": r.message} for r in results],
            "all_passed": all(r.passed for r in results),
        })

    def log_report(self, trip_id: str, window_index: int, factors: Sequence[str]):
        return self.log_event("REPORT", {"trip_id": trip_id, "window_index": window_index,
                                         "factors": list(factors)})

    def log_run_end(self, trip_id: str, n_reports: int):
        return self.log_event("RUN_END", {"trip_id": trip_id, "reports": n_reports})


def _log_results(results: Sequence[CheckResult]):
    for r in results:
        status = "[OK]" if r.passed else "[FAIL]"
        level = logging.INFO if r.passed or r.severity == INFO else logging.WARNING
        logger.log(level, "   %s %s: %s", status, r.check_name, r.message)


class TripGuard:
    """Runs the validator before and the output guard after an analysis"""

    def __init__(self, delta: float = 5.0, imu_rate_hz: float = 30.0,
                 audit_logger: Optional[AuditLogger] = None):
        self.validator = TripValidator(delta, imu_rate_hz)
        self.output_guard = OutputGuard()
        self.audit_logger = audit_logger or AuditLogger()

    def pre_analysis_check(self, trip: TripRecord) -> Tuple[bool, List[CheckResult]]:
        results = self.validator.validate(trip)
        _log_results(results)
        self.audit_logger.log_checks("pre", results)
        critical = [r for r in results if not r.passed and r.severity == CRITICAL]
        return len(critical) == 0, results

    def post_analysis_check(self, n_reports: int, n_windows: int, empty_explanations: int = 0,
                            relaunch_windows: Sequence[int] = ()) -> Tuple[bool, List[CheckResult]]:
        results = self.output_guard.validate(n_reports, n_windows, empty_explanations, relaunch_windows)
        _log_results(results)
        self.audit_logger.log_checks("post", results)
        critical = [r for r in results if not r.passed and r.severity == CRITICAL]
        return len(critical) == 0, results

"""
DriveLens Maneuver Detection Module
Accelerometer and GPS signatures of weaving, swerving, side slip, abrupt stops, sharp turns and jerk
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from .config import ManeuverConfig
from .errors import TooFewFixes, TooShortWindow
from .trip_model import GpsFix, WindowSlice


@dataclass(frozen=True)
class ManeuverFeatures:
    """Maneuver features F_M of one window"""
    weaving: float = 0.0       # A_W, m/s²
    swerving: float = 0.0      # A_S, m/s²
    side_slip: float = 0.0     # A_L, m/s²
    abrupt_stop: int = 0       # A_Q
    sharp_turn: float = 0.0    # A_U, degrees
    jerk: float = 0.0          # A_J, m/s³

    def to_dict(self) -> Dict:
        return asdict(self)

    def feature_values(self) -> Dict[str, float]:
        return {
            "A_W": self.weaving,
            "A_S": self.swerving,
            "A_L": self.side_slip,
            "A_Q": float(self.abrupt_stop),
            "A_U": self.sharp_turn,
            "A_J": self.jerk,
        }


def _samples(seconds: float, rate_hz: float) -> int:
    return max(1, int(round(seconds * rate_hz)))


def _require_span(signal: np.ndarray, rate_hz: float, seconds: float, name: str):
    if len(signal) < _samples(seconds, rate_hz):
        raise TooShortWindow(f"{name} needs at least {seconds:g}s of samples, got {len(signal)}")


def detect_weaving(ax: Sequence[float], rate_hz: float, prominence: float = 0.1,
                   span_seconds: float = 2.0) -> float:
    """
    Weaving magnitude: std-dev of the 2 s sub-span holding the widest peak/trough pair.

    A pair is a lateral peak and a lateral trough closer than the span. The widest swing
    wins, ties go to the earliest pair. Returns 0 when no pair exists.
    """
    ax = np.asarray(ax, dtype=float)
    _require_span(ax, rate_hz, span_seconds, "weaving")
    span = _samples(span_seconds, rate_hz)

    peaks, _ = find_peaks(ax, prominence=prominence)
    troughs, _ = find_peaks(-ax, prominence=prominence)
    if len(peaks) == 0 or len(troughs) == 0:
        return 0.0

    best: Optional[Tuple[float, int, int]] = None
    for p in peaks:
        for q in troughs:
            if abs(p - q) >= span:
                continue
            swing = ax[p] - ax[q]
            lo, hi = min(p, q), max(p, q)
            if best is None or swing > best[0] or (swing == best[0] and lo < best[1]):
                best = (swing, lo, hi)
    if best is None:
        return 0.0

    _, lo, hi = best
    start = lo - (span - (hi - lo)) // 2
    start = min(max(start, 0), len(ax) - span)
    return float(np.std(ax[start:start + span]))


def detect_swerving(ax: Sequence[float], ay: Sequence[float], rate_hz: float,
                    ay_gate: float = 0.3, opposite_ratio: float = 0.5,
                    prominence: float = 0.1, edge_seconds: float = 1.0) -> float:
    """
    Swerving magnitude: std-dev over the leading and trailing edge of the highest |ax| peak.

    A swerve is single-signed, an opposite excursion above opposite_ratio of the peak
    rejects it. Forward movement must stay near zero (mean |ay| < ay_gate).
    """
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    _require_span(ax, rate_hz, 2 * edge_seconds, "swerving")

    peaks, _ = find_peaks(np.abs(ax), prominence=prominence)
    if len(peaks) == 0:
        return 0.0
    p = int(peaks[np.argmax(np.abs(ax[peaks]))])

    edge = _samples(edge_seconds, rate_hz)
    lo, hi = max(0, p - edge), min(len(ax), p + edge + 1)
    segment = ax[lo:hi]
    sign = 1.0 if ax[p] > 0 else -1.0
    if np.max(-sign * segment) > opposite_ratio * abs(ax[p]):
        return 0.0
    if np.mean(np.abs(ay[lo:hi])) >= ay_gate:
        return 0.0
    return float(np.std(segment))


def _runs(mask: np.ndarray):
    """Yield [start, end) index ranges of consecutive True values"""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return zip(edges[0::2], edges[1::2])


def detect_side_slip(ax: Sequence[float], ay: Sequence[float], rate_hz: float,
                     baseline: float = 0.2, min_seconds: float = 0.5, max_seconds: float = 2.0,
                     baseline_seconds: float = 0.25, span_seconds: float = 2.0) -> float:
    """
    Side-slip magnitude: a single-signed ax excursion that leaves and returns to a
    near-zero baseline within max_seconds while ay drifts slightly forward.
    """
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    _require_span(ax, rate_hz, span_seconds, "side slip")

    n = len(ax)
    span = _samples(span_seconds, rate_hz)
    quiet = _samples(baseline_seconds, rate_hz)
    active = np.abs(ax) >= baseline
    best = 0.0
    for start, end in _runs(active):
        duration = (end - start) / rate_hz
        if not min_seconds <= duration <= max_seconds:
            continue
        run = ax[start:end]
        if not (np.all(run > 0) or np.all(run < 0)):
            continue
        if start < quiet or end + quiet > n:
            continue
        if active[start - quiet:start].any() or active[end:end + quiet].any():
            continue
        lo = min(max((start + end) // 2 - span // 2, 0), n - span)
        if np.mean(ay[lo:lo + span]) <= 0:
            continue
        best = max(best, float(np.std(ax[lo:lo + span])))
    return best


def detect_abrupt_stop(ay: Sequence[float], az: Sequence[float], move_gate: float = 0.5,
                       stop_threshold: float = 0.1, az_band: float = 1.0,
                       gravity_gate: float = 4.9) -> int:
    """
    1 when ay falls from moving (|ay| >= move_gate) to stopped (|ay| < stop_threshold)
    while the vertical axis stays within [0, az_band] after gravity removal.
    """
    ay = np.asarray(ay, dtype=float)
    az = np.asarray(az, dtype=float)
    if len(ay) == 0:
        return 0
    moving = np.flatnonzero(np.abs(ay) >= move_gate)
    if len(moving) == 0:
        return 0
    if not np.any(np.abs(ay[moving[0] + 1:]) < stop_threshold):
        return 0

    if len(az):
        median = float(np.median(az))
        centered = az - median if abs(median) > gravity_gate else az
        if np.mean(np.abs(centered)) > az_band:
            return 0
    return 1


def detect_sharp_turn(fixes: Sequence[GpsFix], floor_deg: float = 0.0) -> float:
    """Largest heading change over consecutive fix triples, atan2(Δlat, Δlon) in degrees"""
    if len(fixes) < 3:
        raise TooFewFixes(f"sharp turn needs at least 3 fixes, got {len(fixes)}")
    lat = np.asarray([f.lat for f in fixes])
    lon = np.asarray([f.lon for f in fixes])
    headings = np.degrees(np.arctan2(np.diff(lat), np.diff(lon)))
    change = np.abs((np.diff(headings) + 180.0) % 360.0 - 180.0)
    worst = float(np.max(change))
    return worst if worst >= floor_deg else 0.0


def detect_jerk(ax: Sequence[float], rate_hz: float) -> float:
    """Maximum |Δax/Δt| over consecutive samples"""
    ax = np.asarray(ax, dtype=float)
    if len(ax) < 2:
        raise TooShortWindow("jerk needs at least 2 samples")
    return float(np.max(np.abs(np.diff(ax))) * rate_hz)


def sample_rate(times: Sequence[float]) -> float:
    if len(times) < 2 or times[-1] <= times[0]:
        raise TooShortWindow("cannot infer a sample rate from fewer than 2 samples")
    return (len(times) - 1) / (times[-1] - times[0])


class ManeuverDetector:
    """Runs all six detectors over a window with one set of gates"""

    def __init__(self, config: Optional[ManeuverConfig] = None):
        self.config = config or ManeuverConfig()

    def extract(self, window: WindowSlice) -> ManeuverFeatures:
        cfg = self.config
        times = [s.t for s in window.imu]
        rate = sample_rate(times)
        ax = np.asarray([s.ax for s in window.imu])
        ay = np.asarray([s.ay for s in window.imu])
        az = np.asarray([s.az for s in window.imu])

        jerk = detect_jerk(ax, rate)
        return ManeuverFeatures(
            weaving=detect_weaving(ax, rate, cfg.prominence, cfg.peak_span_seconds),
            swerving=detect_swerving(ax, ay, rate, cfg.ay_gate, cfg.opposite_ratio,
                                     cfg.prominence, cfg.edge_seconds),
            side_slip=detect_side_slip(ax, ay, rate, cfg.baseline, cfg.slip_min_seconds,
                                       cfg.slip_max_seconds, cfg.slip_baseline_seconds,
                                       cfg.peak_span_seconds),
            abrupt_stop=detect_abrupt_stop(ay, az, cfg.move_gate, cfg.stop_threshold,
                                           cfg.az_band, cfg.gravity_gate),
            sharp_turn=detect_sharp_turn(window.gps, cfg.turn_floor_deg),
            jerk=jerk if jerk >= cfg.jerk_floor else 0.0,
        )


def extract_maneuvers(window: WindowSlice, config: Optional[ManeuverConfig] = None) -> ManeuverFeatures:
    return ManeuverDetector(config).extract(window)

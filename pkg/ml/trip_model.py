"""
DriveLens Trip Model Module
Trip records, the line-delimited trip file format, resampling, filtering and windowing
"""

import dataclasses
import json
import logging
import math
import sys
from bisect import bisect_left
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter, lfilter_zi

from .errors import EmptyTrip, NonUniformSampling, ParseError, ValidationError

logger = logging.getLogger(__name__)

OBJECT_CLASSES = ("Pedestrian", "Car", "Bus", "Truck", "TrafficLight", "Bicycle", "Motorcycle")
LIGHT_COLORS = ("red", "yellow", "green")
ROAD_TYPES = ("parking", "residential", "city street", "highway")
WEATHER_TYPES = ("clear", "overcast", "cloudy", "rainy", "snowy", "foggy")


@dataclass(frozen=True)
class ImuSample:
    """One accelerometer reading, X lateral, Y longitudinal, Z vertical (m/s²)"""
    t: float
    ax: float
    ay: float
    az: float


@dataclass(frozen=True)
class GpsFix:
    t: float
    lat: float
    lon: float


@dataclass(frozen=True)
class DetectedObject:
    """One detector output box in pixel coordinates"""
    cls: str
    bbox: Tuple[float, float, float, float]
    confidence: float
    attrs: Dict[str, Any] = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> float:
        return self.bbox[3] - self.bbox[1]

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center_x(self) -> float:
        return (self.bbox[0] + self.bbox[2]) / 2

    @property
    def bottom_mid(self) -> Tuple[float, float]:
        return (self.center_x, self.bbox[3])


@dataclass(frozen=True)
class DetectionFrame:
    t: float
    frame_width: float
    frame_height: float
    fps: float
    meters_per_pixel: float
    objects: Tuple[DetectedObject, ...] = ()


@dataclass(frozen=True)
class ScoreAnnotation:
    t: float
    annotator_id: str
    score: int


@dataclass(frozen=True)
class TripMeta:
    """Trip header: confounder codes and detection calibration"""
    road_type: int
    weather: int
    meters_per_pixel: float
    fps: float
    duration: Optional[float] = None


@dataclass(frozen=True)
class TripRecord:
    trip_id: str
    meta: TripMeta
    imu: Tuple[ImuSample, ...] = ()
    gps: Tuple[GpsFix, ...] = ()
    frames: Tuple[DetectionFrame, ...] = ()
    annotations: Tuple[ScoreAnnotation, ...] = ()

    @property
    def span(self) -> float:
        """
        Trip length in seconds: the header duration, else the latest timestamp. The last
        IMU sample covers one sample period, so 40 s at 30 Hz ends at 39.967 + 1/30.
        """
        if self.meta.duration is not None:
            return self.meta.duration
        latest = [s[-1].t for s in (self.imu, self.gps, self.frames) if s]
        latest.extend(a.t for a in self.annotations)
        if len(self.imu) >= 2:
            period = float(np.median(np.diff([s.t for s in self.imu])))
            latest.append(self.imu[-1].t + period)
        return max(latest) if latest else 0.0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class WindowSlice:
    """Views of every stream restricted to [t_start, t_end)"""
    window_index: int
    t_start: float
    t_end: float
    imu: Tuple[ImuSample, ...] = ()
    gps: Tuple[GpsFix, ...] = ()
    frames: Tuple[DetectionFrame, ...] = ()
    annotations: Tuple[ScoreAnnotation, ...] = ()

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


# ========================
# Parsing
# ========================

def _number(record: Dict, key: str, lineno: int) -> float:
    if key not in record:
        raise ParseError(f"line {lineno}: missing field '{key}'")
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"line {lineno}: field '{key}' is not a number")
    if not math.isfinite(value):
        raise ValidationError(key, f"line {lineno}: field '{key}' is not finite")
    return float(value)


def _check_range(name: str, value: float, low: float, high: float, lineno: int):
    if not low <= value <= high:
        raise ValidationError(name, f"line {lineno}: {name}={value} outside [{low}, {high}]")


def _parse_header(record: Dict, lineno: int) -> Tuple[str, TripMeta]:
    trip_id = record.get("trip_id")
    if not isinstance(trip_id, str) or not trip_id:
        raise ParseError(f"line {lineno}: header needs a non-empty 'trip_id'")
    road_type = _number(record, "road_type", lineno)
    weather = _number(record, "weather", lineno)
    if road_type != int(road_type) or not 0 <= road_type < len(ROAD_TYPES):
        raise ValidationError("road_type", f"road_type must be an integer in 0..{len(ROAD_TYPES) - 1}")
    if weather != int(weather) or not 0 <= weather < len(WEATHER_TYPES):
        raise ValidationError("weather", f"weather must be an integer in 0..{len(WEATHER_TYPES) - 1}")
    mpp = _number(record, "mpp", lineno)
    fps = _number(record, "fps", lineno)
    if mpp <= 0:
        raise ValidationError("mpp", "meters per pixel must be positive")
    if fps <= 0:
        raise ValidationError("fps", "fps must be positive")
    duration = None
    if record.get("duration") is not None:
        duration = _number(record, "duration", lineno)
        if duration <= 0:
            raise ValidationError("duration", "duration must be positive")
    return trip_id, TripMeta(int(road_type), int(weather), mpp, fps, duration)


def _parse_object(raw: Any, lineno: int) -> DetectedObject:
    if not isinstance(raw, dict):
        raise ParseError(f"line {lineno}: detected object must be an object")
    cls = raw.get("class")
    if cls not in OBJECT_CLASSES:
        raise ValidationError("class", f"line {lineno}: unknown object class {cls!r}")
    bbox = raw.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise ParseError(f"line {lineno}: bbox must be a list of 4 numbers")
    coords = []
    for v in bbox:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"line {lineno}: bbox must be a list of 4 numbers")
        coords.append(float(v))
    x_min, y_min, x_max, y_max = coords
    if not (x_min < x_max and y_min < y_max):
        raise ValidationError("bbox", f"line {lineno}: bbox corners are not ordered")
    confidence = _number(raw, "confidence", lineno)
    _check_range("confidence", confidence, 0.0, 1.0, lineno)
    attrs = raw.get("attrs") or {}
    if not isinstance(attrs, dict):
        raise ParseError(f"line {lineno}: attrs must be an object")
    color = attrs.get("color")
    if color is not None and color not in LIGHT_COLORS:
        raise ValidationError("color", f"line {lineno}: unknown light color {color!r}")
    return DetectedObject(cls, (x_min, y_min, x_max, y_max), confidence, dict(attrs))


def _check_increasing(name: str, previous: Optional[float], t: float, lineno: int):
    if t < 0:
        raise ValidationError("t", f"line {lineno}: negative timestamp in {name} stream")
    if previous is not None and t <= previous:
        raise ValidationError("t", f"line {lineno}: {name} timestamps must be strictly increasing")


def parse_trip(lines: Iterable[str]) -> TripRecord:
    """Parse trip-file lines into a validated TripRecord"""
    header = None
    imu: List[ImuSample] = []
    gps: List[GpsFix] = []
    frames: List[DetectionFrame] = []
    annotations: List[ScoreAnnotation] = []

    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"line {lineno}: {e.msg}") from e
        if not isinstance(record, dict):
            raise ParseError(f"line {lineno}: record must be a JSON object")

        if header is None:
            header = _parse_header(record, lineno)
            continue

        kind = record.get("type")
        if kind == "imu":
            t = _number(record, "t", lineno)
            _check_increasing("imu", imu[-1].t if imu else None, t, lineno)
            imu.append(ImuSample(t, _number(record, "ax", lineno), _number(record, "ay", lineno),
                                 _number(record, "az", lineno)))
        elif kind == "gps":
            t = _number(record, "t", lineno)
            _check_increasing("gps", gps[-1].t if gps else None, t, lineno)
            lat = _number(record, "lat", lineno)
            lon = _number(record, "lon", lineno)
            _check_range("lat", lat, -90.0, 90.0, lineno)
            _check_range("lon", lon, -180.0, 180.0, lineno)
            gps.append(GpsFix(t, lat, lon))
        elif kind == "det":
            t = _number(record, "t", lineno)
            _check_increasing("det", frames[-1].t if frames else None, t, lineno)
            meta = header[1]
            width = _number(record, "frame_width", lineno)
            height = _number(record, "frame_height", lineno)
            fps = _number(record, "fps", lineno) if "fps" in record else meta.fps
            mpp = _number(record, "meters_per_pixel", lineno) if "meters_per_pixel" in record \
                else meta.meters_per_pixel
            for name, value in (("frame_width", width), ("frame_height", height),
                                ("fps", fps), ("meters_per_pixel", mpp)):
                if value <= 0:
                    raise ValidationError(name, f"line {lineno}: {name} must be positive")
            raw_objects = record.get("objects", [])
            if not isinstance(raw_objects, list):
                raise ParseError(f"line {lineno}: objects must be a list")
            objects = tuple(_parse_object(o, lineno) for o in raw_objects)
            frames.append(DetectionFrame(t, width, height, fps, mpp, objects))
        elif kind == "score":
            t = _number(record, "t", lineno)
            if t < 0:
                raise ValidationError("t", f"line {lineno}: negative timestamp in score stream")
            score = _number(record, "score", lineno)
            if score != int(score) or not 1 <= score <= 5:
                raise ValidationError("score", f"line {lineno}: score must be an integer in 1..5")
            annotator = record.get("annotator_id")
            if annotator is None:
                raise ParseError(f"line {lineno}: missing field 'annotator_id'")
            annotations.append(ScoreAnnotation(t, str(annotator), int(score)))
        else:
            raise ParseError(f"line {lineno}: unknown record type {kind!r}")

    if header is None:
        raise ParseError("trip file has no header line")

    trip_id, meta = header
    if meta.duration is not None:
        for name, stream in (("imu", imu), ("gps", gps), ("det", frames)):
            if stream and stream[-1].t > meta.duration:
                raise ValidationError("t", f"{name} stream runs past the declared duration")

    annotations.sort(key=lambda a: (a.t, a.annotator_id))
    return TripRecord(trip_id, meta, tuple(imu), tuple(gps), tuple(frames), tuple(annotations))


def load_trip(path: str) -> TripRecord:
    """Load a trip file, `-` reads standard input"""
    if path == "-":
        return parse_trip(sys.stdin)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_trip(f)
    except OSError as e:
        raise ParseError(f"cannot read trip file {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise ParseError(f"trip file {path} is not UTF-8") from e


# ========================
# Serialization
# ========================

def trip_lines(trip: TripRecord) -> List[str]:
    """Render a trip as file lines (without trailing newlines)"""
    meta = trip.meta
    header = {"trip_id": trip.trip_id, "road_type": meta.road_type, "weather": meta.weather,
              "mpp": meta.meters_per_pixel, "fps": meta.fps}
    if meta.duration is not None:
        header["duration"] = meta.duration
    lines = [json.dumps(header)]
    for s in trip.imu:
        lines.append(json.dumps({"type": "imu", "t": s.t, "ax": s.ax, "ay": s.ay, "az": s.az}))
    for g in trip.gps:
        lines.append(json.dumps({"type": "gps", "t": g.t, "lat": g.lat, "lon": g.lon}))
    for fr in trip.frames:
        record = {"type": "det", "t": fr.t, "frame_width": fr.frame_width,
                  "frame_height": fr.frame_height, "objects": [
                      {"class": o.cls, "bbox": list(o.bbox), "confidence": o.confidence,
                       **({"attrs": o.attrs} if o.attrs else {})}
                      for o in fr.objects]}
        if fr.fps != meta.fps:
            record["fps"] = fr.fps
        if fr.meters_per_pixel != meta.meters_per_pixel:
            record["meters_per_pixel"] = fr.meters_per_pixel
        lines.append(json.dumps(record))
    for a in trip.annotations:
        lines.append(json.dumps({"type": "score", "t": a.t, "annotator_id": a.annotator_id,
                                 "score": a.score}))
    return lines


def save_trip(trip: TripRecord, path: str):
    """Write a trip file, `-` writes standard output"""
    text = "\n".join(trip_lines(trip)) + "\n"
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


# ========================
# Signal conditioning
# ========================

def low_pass_filter(signal: Sequence[Tuple[float, float]],
                    cutoff_hz: float) -> List[Tuple[float, float]]:
    """
    Single-pole exponential low-pass filter.

    alpha = dt / (RC + dt) with RC = 1 / (2π·cutoff). The filter state starts at the
    first value so constant signals pass unchanged.
    """
    if len(signal) == 0:
        return []
    if len(signal) == 1:
        return [(float(signal[0][0]), float(signal[0][1]))]

    t = np.asarray([s[0] for s in signal], dtype=float)
    x = np.asarray([s[1] for s in signal], dtype=float)
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 0.01 * dt:
        raise NonUniformSampling("signal is not uniformly sampled within 1%")
    if cutoff_hz <= 0 or cutoff_hz >= 0.5 / dt:
        raise ValidationError("cutoff_hz", f"cutoff {cutoff_hz} Hz must lie in (0, {0.5 / dt:g}) Hz")

    rc = 1.0 / (2 * math.pi * cutoff_hz)
    alpha = dt / (rc + dt)
    b, a = [alpha], [1.0, alpha - 1.0]
    y, _ = lfilter(b, a, x, zi=lfilter_zi(b, a) * x[0])
    return list(zip(t.tolist(), y.tolist()))


def resample_imu(trip: TripRecord, rate_hz: float) -> TripRecord:
    """Linearly interpolate the IMU stream onto a uniform grid starting at the first sample"""
    if len(trip.imu) < 2:
        return trip
    t = np.asarray([s.t for s in trip.imu])
    n = int(math.floor((t[-1] - t[0]) * rate_hz + 1e-9)) + 1
    grid = t[0] + np.arange(n) / rate_hz
    axes = [np.interp(grid, t, np.asarray([getattr(s, k) for s in trip.imu])) for k in ("ax", "ay", "az")]
    imu = tuple(ImuSample(float(grid[i]), float(axes[0][i]), float(axes[1][i]), float(axes[2][i]))
                for i in range(n))
    return dataclasses.replace(trip, imu=imu)


def preprocess_trip(trip: TripRecord, imu_rate_hz: float = 30.0,
                    cutoff_hz: float = 5.0) -> TripRecord:
    """Resample the IMU stream and low-pass filter each axis"""
    trip = resample_imu(trip, imu_rate_hz)
    if len(trip.imu) < 2:
        return trip
    if cutoff_hz >= imu_rate_hz / 2:
        logger.warning("Cutoff %.2f Hz is above Nyquist for %.1f Hz, skipping low-pass filter",
                       cutoff_hz, imu_rate_hz)
        return trip
    filtered = {}
    for axis in ("ax", "ay", "az"):
        filtered[axis] = [v for _, v in low_pass_filter([(s.t, getattr(s, axis)) for s in trip.imu],
                                                        cutoff_hz)]
    imu = tuple(ImuSample(s.t, filtered["ax"][i], filtered["ay"][i], filtered["az"][i])
                for i, s in enumerate(trip.imu))
    return dataclasses.replace(trip, imu=imu)


# ========================
# Windowing
# ========================

def _slice(items: Sequence, times: List[float], start: float, end: float) -> Tuple:
    return tuple(items[bisect_left(times, start):bisect_left(times, end)])


def window_trip(trip: TripRecord, delta: float = 5.0) -> List[WindowSlice]:
    """Split a trip into contiguous half-open windows [kδ, (k+1)δ); the partial tail is dropped"""
    if delta <= 0:
        raise ValidationError("delta", "window size must be positive")
    span = trip.span
    if span < delta:
        raise EmptyTrip(f"trip {trip.trip_id} spans {span:.3f}s, shorter than one {delta:g}s window")

    n_windows = int(math.floor(span / delta + 1e-9))
    imu_t = [s.t for s in trip.imu]
    gps_t = [g.t for g in trip.gps]
    frame_t = [f.t for f in trip.frames]
    score_t = [a.t for a in trip.annotations]

    windows = []
    for k in range(n_windows):
        start, end = k * delta, (k + 1) * delta
        windows.append(WindowSlice(
            window_index=k,
            t_start=start,
            t_end=end,
            imu=_slice(trip.imu, imu_t, start, end),
            gps=_slice(trip.gps, gps_t, start, end),
            frames=_slice(trip.frames, frame_t, start, end),
            annotations=_slice(trip.annotations, score_t, start, end),
        ))
    return windows

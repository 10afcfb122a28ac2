"""
DriveLens Synthetic Trip Module
Scenario scripts with planted micro-events and known ground truth
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import InvalidMix, InvalidScript, ParseError, ValidationError
from .spatial import encode_pedestrian_speed
from .trip_model import (ROAD_TYPES, WEATHER_TYPES, DetectedObject, DetectionFrame, GpsFix,
                         ImuSample, ScoreAnnotation, TripMeta, TripRecord, save_trip)

logger = logging.getLogger(__name__)

GRAVITY = 9.81
FRAME_WIDTH = 960.0
FRAME_HEIGHT = 540.0
CONFIDENCE = 0.9
GPS_ORIGIN = (48.137, 11.575)
GPS_STEP_DEG = 1e-4

# kind -> default parameters
EVENT_KINDS: Dict[str, Dict[str, float]] = {
    "weave": {"amplitude": 1.0},
    "swerve": {"amplitude": 2.5},
    "side_slip": {"amplitude": 2.0},
    "abrupt_stop": {},
    "sharp_turn": {"angle": 90.0},
    "harsh_jerk": {"magnitude": 1.5},
    "red_light": {},
    "congestion": {"level": 2},
    "leader_brake": {},
    "heavy_vehicle": {},
    "pedestrian_cross": {"speed": 1.5},
}

MANEUVER_EVENTS = ("weave", "swerve", "side_slip", "abrupt_stop", "sharp_turn", "harsh_jerk")

# shortest event (seconds) whose signature fits inside it
MIN_DURATION = {"weave": 1.0, "swerve": 2.0, "side_slip": 2.0, "abrupt_stop": 2.5,
                "harsh_jerk": 2.0}

TEMPLATES: Dict[str, Tuple[Tuple[str, Dict[str, float]], ...]] = {
    "red_light_stop": (("red_light", {}), ("abrupt_stop", {})),
    "congested_stop": (("congestion", {"level": 2}), ("leader_brake", {})),
    "pedestrian_weave": (("pedestrian_cross", {}), ("weave", {})),
    "heavy_swerve": (("heavy_vehicle", {}), ("swerve", {})),
}
TEMPLATES.update({kind: ((kind, {}),) for kind in EVENT_KINDS})


@dataclass(frozen=True)
class ScenarioEvent:
    kind: str
    t_start: float
    t_end: float
    params: Dict[str, float] = field(default_factory=dict)

    def param(self, name: str) -> float:
        return float(self.params.get(name, EVENT_KINDS[self.kind][name]))

    @property
    def midpoint(self) -> float:
        return (self.t_start + self.t_end) / 2

    @property
    def anchor(self) -> float:
        """Time at which the maneuver signature is centred"""
        if self.kind == "abrupt_stop":
            return self.t_start + 2.0
        if self.kind == "sharp_turn":
            return float(math.floor(self.midpoint))
        return self.midpoint

    def factors(self) -> Tuple[str, ...]:
        if self.kind == "weave":
            return ("A_W",)
        if self.kind == "swerve":
            return ("A_S",)
        if self.kind == "side_slip":
            return ("A_L",)
        if self.kind == "abrupt_stop":
            return ("A_Q", "A_J")
        if self.kind == "sharp_turn":
            return ("A_U",)
        if self.kind == "harsh_jerk":
            return ("A_J",)
        if self.kind == "red_light":
            return ("L",)
        if self.kind == "congestion":
            return ("C",) if self.param("level") >= 1 else ()
        if self.kind == "leader_brake":
            return ("B",)
        if self.kind == "heavy_vehicle":
            return ("H",)
        if encode_pedestrian_speed(self.param("speed")) > 0:
            return ("P", "Q")
        return ("P",)


@dataclass(frozen=True)
class ScenarioScript:
    duration: float
    events: Tuple[ScenarioEvent, ...] = ()
    imu_sigma: float = 0.0
    det_jitter: float = 0.0
    seed: int = 0
    trip_id: str = "synth"
    road_type: int = 0
    weather: int = 0
    fps: float = 15.0
    imu_rate: float = 30.0
    mpp: float = 0.05
    baseline_score: int = 5
    annotators: int = 3

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class LabeledTrip:
    """A synthetic trip with its planted factors and instant scores per window"""
    trip: TripRecord
    planted: Tuple[Tuple[str, ...], ...]
    scores: Tuple[int, ...]

    def label_records(self) -> List[Dict[str, Any]]:
        return [{"trip_id": self.trip.trip_id, "window_index": k, "factors": list(f),
                 "score": self.scores[k]} for k, f in enumerate(self.planted)]


# ========================
# Script parsing
# ========================

def _number(data: Mapping, key: str, default: Any) -> Any:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise InvalidScript(f"script field '{key}' must be a finite number")
    return value


def script_from_dict(data: Mapping[str, Any]) -> ScenarioScript:
    if not isinstance(data, Mapping):
        raise InvalidScript("script must be a JSON object")
    if "duration" not in data:
        raise InvalidScript("script needs a 'duration'")
    raw_events = data.get("events", [])
    if not isinstance(raw_events, list):
        raise InvalidScript("script 'events' must be a list")
    events = []
    for i, raw in enumerate(raw_events):
        if not isinstance(raw, Mapping):
            raise InvalidScript(f"event {i} must be an object")
        params = raw.get("params", {})
        if not isinstance(params, Mapping):
            raise InvalidScript(f"event {i} params must be an object")
        events.append(ScenarioEvent(str(raw.get("kind")), float(_number(raw, "t_start", None)),
                                    float(_number(raw, "t_end", None)),
                                    {str(k): float(_number(params, k, None)) for k in params}))
    script = ScenarioScript(
        duration=float(_number(data, "duration", None)),
        events=tuple(events),
        imu_sigma=float(_number(data, "imu_sigma", 0.0)),
        det_jitter=float(_number(data, "det_jitter", 0.0)),
        seed=int(_number(data, "seed", 0)),
        trip_id=str(data.get("trip_id", "synth")),
        road_type=int(_number(data, "road_type", 0)),
        weather=int(_number(data, "weather", 0)),
        fps=float(_number(data, "fps", 15.0)),
        imu_rate=float(_number(data, "imu_rate", 30.0)),
        mpp=float(_number(data, "mpp", 0.05)),
        baseline_score=int(_number(data, "baseline_score", 5)),
        annotators=int(_number(data, "annotators", 3)),
    )
    validate_script(script)
    return script


def load_script(path: str) -> ScenarioScript:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read scenario script {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidScript(f"scenario script {path} is not valid JSON: {e.msg}") from e
    return script_from_dict(data)


def validate_script(script: ScenarioScript):
    if script.duration <= 0:
        raise InvalidScript("duration must be positive")
    if script.imu_sigma < 0 or script.det_jitter < 0:
        raise InvalidScript("noise levels must be non-negative")
    if script.fps <= 0 or script.imu_rate <= 0 or script.mpp <= 0:
        raise InvalidScript("fps, imu_rate and mpp must be positive")
    if not 0 <= script.road_type < len(ROAD_TYPES):
        raise InvalidScript(f"road_type must lie in 0..{len(ROAD_TYPES) - 1}")
    if not 0 <= script.weather < len(WEATHER_TYPES):
        raise InvalidScript(f"weather must lie in 0..{len(WEATHER_TYPES) - 1}")
    if not 3 <= script.baseline_score <= 5:
        raise InvalidScript("baseline_score must lie in 3..5 so planted windows drop by 2")
    if script.annotators < 1:
        raise InvalidScript("at least one annotator is needed")
    for event in script.events:
        if event.kind not in EVENT_KINDS:
            raise InvalidScript(f"unknown event kind {event.kind!r}")
        if not 0 <= event.t_start < event.t_end <= script.duration:
            raise InvalidScript(f"{event.kind} event [{event.t_start}, {event.t_end}) "
                                f"is outside the trip")
        unknown = set(event.params) - set(EVENT_KINDS[event.kind])
        if unknown:
            raise InvalidScript(f"{event.kind} event has unknown params {sorted(unknown)}")
        needed = MIN_DURATION.get(event.kind, 0.0)
        if event.t_end - event.t_start < needed:
            raise InvalidScript(f"{event.kind} event needs at least {needed:g}s")
        if event.kind == "congestion" and event.param("level") not in (0, 1, 2):
            raise InvalidScript("congestion level must be 0, 1 or 2")
        if event.kind == "sharp_turn" and not 0 < event.param("angle") <= 180:
            raise InvalidScript("turn angle must lie in (0, 180]")
        if event.kind == "pedestrian_cross" and event.param("speed") <= 0:
            raise InvalidScript("pedestrian speed must be positive")


# ========================
# Stream generators
# ========================

def _imu_profile(script: ScenarioScript, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ax = np.zeros_like(t)
    ay = np.zeros_like(t)
    az = np.full_like(t, GRAVITY)
    for e in script.events:
        inside = (t >= e.t_start) & (t < e.t_end)
        if e.kind == "weave":
            ax[inside] += e.param("amplitude") * np.sin(2 * np.pi * (t[inside] - e.t_start))
        elif e.kind == "swerve":
            ax += e.param("amplitude") * np.clip(1.0 - np.abs(t - e.midpoint), 0.0, None) * inside
        elif e.kind == "side_slip":
            ramp, plateau = 0.3, 0.5
            edge = np.abs(t - e.midpoint)
            shape = np.clip((plateau + ramp - edge) / ramp, 0.0, 1.0)
            ax += e.param("amplitude") * shape * inside
            ay[inside] = 0.4
        elif e.kind == "abrupt_stop":
            t0 = e.t_start
            braking = (t >= t0) & (t < t0 + 1.0)
            ramp = (t >= t0 + 1.0) & (t < t0 + 2.0)
            ay[braking] = 2.0
            ay[ramp] = 2.0 * (t0 + 2.0 - t[ramp])
            jolt = np.flatnonzero(t >= t0 + 2.0)[:3]
            ax[jolt] += 1.2
            tremble = np.flatnonzero((t >= t0 + 2.0) & (t < e.t_end))
            az[tremble] += 0.3 * np.where(np.arange(len(tremble)) % 2 == 0, 1.0, -1.0)
        elif e.kind == "harsh_jerk":
            jolt = np.flatnonzero(t >= e.midpoint)[:3]
            ax[jolt] += e.param("magnitude")
            ay[inside] = 0.4
    return ax, ay, az


def _imu_stream(script: ScenarioScript, rng: np.random.Generator) -> Tuple[ImuSample, ...]:
    n = int(math.ceil(script.duration * script.imu_rate - 1e-9))
    t = np.arange(n) / script.imu_rate
    axes = list(_imu_profile(script, t))
    if script.imu_sigma > 0:
        for i in range(3):
            axes[i] = axes[i] + rng.normal(0.0, script.imu_sigma, n)
    ax, ay, az = (np.round(a, 6) for a in axes)
    return tuple(ImuSample(float(t[i]), float(ax[i]), float(ay[i]), float(az[i])) for i in range(n))


def _gps_stream(script: ScenarioScript) -> Tuple[GpsFix, ...]:
    """1 Hz fixes heading east; a sharp turn rotates the heading at its vertex"""
    turns = sorted((e.anchor, e.param("angle")) for e in script.events if e.kind == "sharp_turn")
    times = np.arange(0.0, script.duration, 1.0)
    lat, lon = GPS_ORIGIN
    fixes = []
    for t in times:
        fixes.append(GpsFix(float(t), round(lat, 8), round(lon, 8)))
        heading = math.radians(sum(angle for vertex, angle in turns if vertex <= t))
        lat += GPS_STEP_DEG * math.sin(heading)
        lon += GPS_STEP_DEG * math.cos(heading)
    return tuple(fixes)


def _congestion_boxes(level: int) -> List[Tuple[float, float, float, float]]:
    count = {0: 3, 1: 8, 2: 12}[level]
    boxes = []
    for i in range(count):
        if i % 2 == 0:
            x0 = 10.0 + 6.0 * (i // 2)
        else:
            x0 = FRAME_WIDTH - 160.0 - 6.0 * (i // 2)
        y0 = 50.0 + 60.0 * (i // 2)
        boxes.append((x0, y0, x0 + 110.0, y0 + 100.0))
    return boxes


def _frame_objects(script: ScenarioScript, t: float) -> List[DetectedObject]:
    objects = []
    for e in script.events:
        if not e.t_start <= t < e.t_end:
            continue
        if e.kind == "red_light":
            objects.append(DetectedObject("TrafficLight", (40.0, 60.0, 140.0, 170.0), CONFIDENCE,
                                          {"color": "red"}))
        elif e.kind == "congestion":
            objects.extend(DetectedObject("Car", box, CONFIDENCE)
                           for box in _congestion_boxes(int(e.param("level"))))
        elif e.kind == "leader_brake":
            objects.append(DetectedObject("Car", (400.0, 200.0, 560.0, 330.0), CONFIDENCE,
                                          {"braking": True}))
        elif e.kind == "heavy_vehicle":
            objects.append(DetectedObject("Truck", (380.0, 150.0, 580.0, 320.0), CONFIDENCE))
        elif e.kind == "pedestrian_cross":
            x0 = 300.0 + e.param("speed") / script.mpp * (t - e.t_start)
            objects.append(DetectedObject("Pedestrian", (x0, 220.0, x0 + 60.0, 400.0), CONFIDENCE))
    return objects


def _jitter(obj: DetectedObject, rng: np.random.Generator, sigma: float) -> DetectedObject:
    noise = rng.normal(0.0, sigma, 4) if sigma > 0 else np.zeros(4)
    x0, y0, x1, y1 = (round(float(v + d), 3) for v, d in zip(obj.bbox, noise))
    if x1 <= x0 or y1 <= y0:
        x0, y0, x1, y1 = obj.bbox
    return DetectedObject(obj.cls, (x0, y0, x1, y1), obj.confidence, obj.attrs)


def _frame_stream(script: ScenarioScript, rng: np.random.Generator) -> Tuple[DetectionFrame, ...]:
    n = int(math.ceil(script.duration * script.fps - 1e-9))
    frames = []
    for i in range(n):
        t = i / script.fps
        objects = tuple(_jitter(o, rng, script.det_jitter) for o in _frame_objects(script, t))
        frames.append(DetectionFrame(t, FRAME_WIDTH, FRAME_HEIGHT, script.fps, script.mpp, objects))
    return tuple(frames)


def _planted(script: ScenarioScript, n_windows: int, delta: float) -> List[Tuple[str, ...]]:
    planted: List[set] = [set() for _ in range(n_windows)]
    for e in script.events:
        if e.kind in MANEUVER_EVENTS:
            k = int(math.floor(e.anchor / delta))
            if k < n_windows:
                planted[k].update(e.factors())
            if math.floor(e.t_start / delta) != math.floor((e.t_end - 1e-9) / delta):
                logger.warning("%s event [%g, %g) crosses a window boundary", e.kind,
                               e.t_start, e.t_end)
        else:
            first = int(math.floor(e.t_start / delta))
            last = int(math.ceil(e.t_end / delta)) - 1
            for k in range(first, min(last, n_windows - 1) + 1):
                planted[k].update(e.factors())
    return [tuple(sorted(p)) for p in planted]


def synthesize(script: ScenarioScript, delta: float = 5.0) -> LabeledTrip:
    """Render a script into a trip whose detectors recover the planted factors"""
    validate_script(script)
    if delta <= 0:
        raise ValidationError("delta", "window size must be positive")
    rng = np.random.default_rng(script.seed)

    imu = _imu_stream(script, rng)
    gps = _gps_stream(script)
    frames = _frame_stream(script, rng)

    n_windows = int(math.floor(script.duration / delta + 1e-9))
    planted = _planted(script, n_windows, delta)
    scores = tuple(max(1, script.baseline_score - 1 - len(f)) if f else script.baseline_score
                   for f in planted)
    annotations = tuple(ScoreAnnotation(k * delta + delta / 2, f"ann{a + 1}", scores[k])
                        for k in range(n_windows) for a in range(script.annotators))

    meta = TripMeta(script.road_type, script.weather, script.mpp, script.fps, script.duration)
    trip = TripRecord(script.trip_id, meta, imu, gps, frames, annotations)
    return LabeledTrip(trip, tuple(planted), scores)


# ========================
# Corpora
# ========================

def mix_counts(n_trips: int, mix: Mapping[str, float]) -> Dict[str, int]:
    """Largest-remainder apportionment of trips to templates, ties by template name"""
    if not mix:
        raise InvalidMix("scenario mix is empty")
    unknown = [name for name in mix if name not in TEMPLATES]
    if unknown:
        raise InvalidMix(f"unknown scenario templates {unknown}")
    if any(p < 0 for p in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-6:
        raise InvalidMix(f"scenario shares must be non-negative and sum to 1, got {sum(mix.values())}")

    names = sorted(mix)
    exact = {name: n_trips * mix[name] for name in names}
    counts = {name: int(math.floor(exact[name] + 1e-9)) for name in names}
    leftover = n_trips - sum(counts.values())
    by_remainder = sorted(names, key=lambda name: (-(exact[name] - counts[name]), name))
    for name in by_remainder[:leftover]:
        counts[name] += 1
    return counts


def parse_mix(text: str) -> Dict[str, float]:
    """'red_light_stop=0.5,weave=0.5' -> shares"""
    mix = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, _, share = part.partition("=")
        try:
            mix[name.strip()] = float(share)
        except ValueError as e:
            raise InvalidMix(f"bad share in {part!r}") from e
    return mix


def _template_event(kind: str, params: Mapping[str, float], window: int, delta: float) -> ScenarioEvent:
    # detections cover the whole window since spatial encoders average over its frames
    if kind in MANEUVER_EVENTS:
        return ScenarioEvent(kind, window * delta + 0.2 * delta, window * delta + 0.8 * delta, dict(params))
    return ScenarioEvent(kind, window * delta, (window + 1) * delta, dict(params))


def synthesize_corpus(n_trips: int, mix: Mapping[str, float], seed: int = 42, delta: float = 5.0,
                      n_windows: int = 8, road_types: Sequence[int] = (0, 1),
                      weathers: Sequence[int] = (0, 1, 2), imu_sigma: float = 0.0,
                      det_jitter: float = 0.0) -> List[LabeledTrip]:
    """
    Trips built from named templates in the requested shares. Each trip plants its
    template in one window between 2 and n_windows - 1; per-trip seeds come from the
    corpus seed.
    """
    if n_trips < 1:
        raise ValidationError("n_trips", "a corpus needs at least one trip")
    if n_windows < 3:
        raise ValidationError("n_windows", "corpus trips need at least 3 windows")
    counts = mix_counts(n_trips, mix)
    rng = np.random.default_rng(seed)
    names = [name for name in sorted(counts) for _ in range(counts[name])]
    names = [names[i] for i in rng.permutation(len(names))]

    corpus = []
    for i, name in enumerate(names):
        trip_seed = int(rng.integers(0, 2 ** 31 - 1))
        window = int(rng.integers(2, n_windows))
        road_type = int(rng.choice(road_types))
        weather = int(rng.choice(weathers))
        events = tuple(_template_event(kind, params, window, delta) for kind, params in TEMPLATES[name])
        script = ScenarioScript(duration=n_windows * delta, events=events, imu_sigma=imu_sigma,
                                det_jitter=det_jitter, seed=trip_seed, trip_id=f"synth-{i:04d}",
                                road_type=road_type, weather=weather)
        corpus.append(synthesize(script, delta))
    logger.info("   * Synthesized %d trips: %s", len(corpus), counts)
    return corpus


def write_labels(corpus: Sequence[LabeledTrip], path: str):
    with open(path, "w", encoding="utf-8") as f:
        for labeled in corpus:
            for record in labeled.label_records():
                f.write(json.dumps(record, sort_keys=True) + "\n")


def write_ballots(corpus: Sequence[LabeledTrip], path: str):
    """One ballot per annotator for every window with planted factors"""
    with open(path, "w", encoding="utf-8") as f:
        for labeled in corpus:
            annotators = sorted({a.annotator_id for a in labeled.trip.annotations})
            for k, factors in enumerate(labeled.planted):
                if not factors:
                    continue
                for annotator in annotators:
                    f.write(json.dumps({"trip_id": labeled.trip.trip_id, "window_index": k,
                                        "annotator_id": annotator, "factors": list(factors)},
                                       sort_keys=True) + "\n")


def write_corpus(corpus: Sequence[LabeledTrip], out_dir: str) -> List[str]:
    """Trip files plus labels.jsonl and ballots.jsonl into out_dir"""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for labeled in corpus:
        path = os.path.join(out_dir, f"{labeled.trip.trip_id}.trip.jsonl")
        save_trip(labeled.trip, path)
        paths.append(path)
    write_labels(corpus, os.path.join(out_dir, "labels.jsonl"))
    write_ballots(corpus, os.path.join(out_dir, "ballots.jsonl"))
    logger.info("Wrote %d trips to %s", len(paths), out_dir)
    return paths


def load_labels(path: str) -> Dict[Tuple[str, int], Tuple[str, ...]]:
    """Planted factors per (trip_id, window_index)"""
    labels = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    labels[(str(record["trip_id"]), int(record["window_index"]))] = \
                        tuple(record["factors"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise ParseError(f"{path}:{lineno}: {e}") from e
    except OSError as e:
        raise ParseError(f"cannot read labels {path}: {e}") from e
    return labels

"""
DriveLens Spatial Events Module
Detection filtering, lane assignment and the ordinal encoders of spatial micro-events
"""

from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SpatialConfig
from .errors import MissingPrecedingVehicle, NoMatch
from .trip_model import DetectedObject, DetectionFrame, WindowSlice

VEHICLE_CLASSES = ("Car", "Truck", "Bus")
HEAVY_CLASSES = ("Truck", "Bus")


class Lane(str, Enum):
    LEFT = "Left"
    MIDDLE = "Middle"
    RIGHT = "Right"


@dataclass(frozen=True)
class SpatialFeatures:
    """Spatial micro-event features F_S of one window, raw fields absent without a leader"""
    preceding: int = 0            # O
    braking: int = 0              # B
    congestion: int = 0           # C
    pedestrian: int = 0           # P
    pedestrian_speed: int = 0     # Q
    traffic_light: int = 0        # L
    heavy: int = 0                # H
    speed_flag: int = 0           # S
    distance_flag: int = 0        # D
    rel_distance: Optional[float] = None   # D_m
    rel_speed: Optional[float] = None      # S_mps
    car_count: float = 0.0
    ped_speed: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)

    def feature_values(self) -> Dict[str, Optional[float]]:
        return {
            "O": self.preceding,
            "B": self.braking,
            "C": self.congestion,
            "P": self.pedestrian,
            "Q": self.pedestrian_speed,
            "L": self.traffic_light,
            "H": self.heavy,
            "S": self.speed_flag,
            "D": self.distance_flag,
            "D_m": self.rel_distance,
            "S_mps": self.rel_speed,
            "car_count": self.car_count,
            "ped_speed": self.ped_speed,
        }


def filter_detections(frame: DetectionFrame, min_confidence: float = 0.5,
                      min_area: float = 10000.0) -> DetectionFrame:
    """Drop low-confidence and small boxes, order preserved"""
    kept = tuple(o for o in frame.objects if o.confidence >= min_confidence and o.area >= min_area)
    return replace(frame, objects=kept)


def lane_of(bbox: Sequence[float], frame_width: float, left_ratio: float = 0.2,
            right_ratio: float = 0.2) -> Lane:
    """Lane by horizontal box center on a 0.2:0.6:0.2 split"""
    center = (bbox[0] + bbox[2]) / 2
    if center < left_ratio * frame_width:
        return Lane.LEFT
    if center < (1 - right_ratio) * frame_width:
        return Lane.MIDDLE
    return Lane.RIGHT


def congestion_level(mean_car_count: float) -> int:
    if mean_car_count <= 5:
        return 0
    if mean_car_count <= 10:
        return 1
    return 2


def encode_pedestrian_speed(v: float) -> int:
    if v < 1.34:
        return 0
    if v <= 1.43:
        return 1
    return 2


def encode_preceding(speed_flag: int, distance_flag: int) -> int:
    """Joint code: (0,0)->0, (0,1)->1, (1,0)->2, (1,1)->3"""
    return 2 * int(speed_flag) + int(distance_flag)


def preceding_vehicle(frame: DetectionFrame, left_ratio: float = 0.2,
                      right_ratio: float = 0.2) -> Optional[DetectedObject]:
    """Largest middle-lane car, truck or bus"""
    candidates = [o for o in frame.objects
                  if o.cls in VEHICLE_CLASSES
                  and lane_of(o.bbox, frame.frame_width, left_ratio, right_ratio) == Lane.MIDDLE]
    if not candidates:
        return None
    return max(candidates, key=lambda o: (o.area, o.bbox))


def relative_distance(frame: DetectionFrame, left_ratio: float = 0.2,
                      right_ratio: float = 0.2) -> Optional[float]:
    """Ground gap to the preceding vehicle: pixels from its bottom edge to the frame bottom × m/px"""
    leader = preceding_vehicle(frame, left_ratio, right_ratio)
    if leader is None:
        return None
    return (frame.frame_height - leader.bbox[3]) * frame.meters_per_pixel


def relative_speed(d_prev: Optional[float], d_curr: Optional[float], fps: float) -> float:
    """Signed gap change rate, negative when closing"""
    if d_prev is None or d_curr is None:
        raise MissingPrecedingVehicle("relative speed needs the preceding vehicle in both frames")
    return (d_curr - d_prev) * fps


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two xyxy boxes"""
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def match_pedestrians(prev: Sequence[DetectedObject], curr: Sequence[DetectedObject],
                      iou_threshold: float = 0.3) -> List[Tuple[DetectedObject, DetectedObject]]:
    """Greedy one-to-one matching by descending overlap"""
    candidates = []
    for p in prev:
        for c in curr:
            overlap = iou(p.bbox, c.bbox)
            if overlap >= iou_threshold:
                candidates.append((-overlap, p.bbox, c.bbox, p, c))
    candidates.sort(key=lambda item: item[:3])

    used_prev, used_curr = set(), set()
    pairs = []
    for _, _, _, p, c in candidates:
        if id(p) in used_prev or id(c) in used_curr:
            continue
        used_prev.add(id(p))
        used_curr.add(id(c))
        pairs.append((p, c))
    return pairs


def pedestrian_speed(frames: Tuple[DetectionFrame, DetectionFrame],
                     track: Optional[Tuple[DetectedObject, DetectedObject]],
                     iou_threshold: float = 0.3) -> float:
    """Bottom-midpoint displacement converted to meters, times fps"""
    if track is None:
        raise NoMatch("no pedestrian track between the two frames")
    before, after = track
    if iou(before.bbox, after.bbox) < iou_threshold:
        raise NoMatch(f"pedestrian boxes overlap below IoU {iou_threshold}")
    x0, y0 = before.bottom_mid
    x1, y1 = after.bottom_mid
    pixels = float(np.hypot(x1 - x0, y1 - y0))
    current = frames[1]
    return pixels * current.meters_per_pixel * current.fps


class SpatialExtractor:
    """Aggregates per-frame detections of a window into spatial features"""

    def __init__(self, config: Optional[SpatialConfig] = None):
        self.config = config or SpatialConfig()

    def _lane(self, obj: DetectedObject, frame: DetectionFrame) -> Lane:
        return lane_of(obj.bbox, frame.frame_width, self.config.left_ratio, self.config.right_ratio)

    def extract(self, window: WindowSlice) -> SpatialFeatures:
        cfg = self.config
        frames = [filter_detections(f, cfg.min_confidence, cfg.min_area) for f in window.frames]
        if not frames:
            return SpatialFeatures()

        pedestrian = heavy = light = braking = 0
        car_counts = []
        distances: List[Optional[float]] = []
        for frame in frames:
            car_counts.append(sum(1 for o in frame.objects if o.cls == "Car"))
            for obj in frame.objects:
                lane = self._lane(obj, frame)
                if obj.cls == "Pedestrian" and lane == Lane.MIDDLE:
                    pedestrian = 1
                elif obj.cls in HEAVY_CLASSES and lane == Lane.MIDDLE:
                    heavy = 1
                elif obj.cls == "TrafficLight" and obj.attrs.get("color") == "red":
                    light = 1
            leader = preceding_vehicle(frame, cfg.left_ratio, cfg.right_ratio)
            if leader is not None and leader.attrs.get("braking"):
                braking = 1
            distances.append(None if leader is None else
                             (frame.frame_height - leader.bbox[3]) * frame.meters_per_pixel)

        speeds = [relative_speed(d0, d1, f1.fps)
                  for d0, d1, f1 in zip(distances, distances[1:], frames[1:])
                  if d0 is not None and d1 is not None]
        present = [d for d in distances if d is not None]
        rel_distance = float(np.mean(present)) if present else None
        rel_speed = abs(float(np.mean(speeds))) if speeds else (0.0 if present else None)

        ped_speeds = []
        for f0, f1 in zip(frames, frames[1:]):
            prev = [o for o in f0.objects if o.cls == "Pedestrian"]
            curr = [o for o in f1.objects if o.cls == "Pedestrian" and self._lane(o, f1) == Lane.MIDDLE]
            for track in match_pedestrians(prev, curr, cfg.iou_threshold):
                ped_speeds.append(pedestrian_speed((f0, f1), track, cfg.iou_threshold))
        ped_speed = max(ped_speeds) if ped_speeds else None

        mean_cars = float(np.mean(car_counts))
        speed_flag = distance_flag = preceding = 0
        if rel_distance is not None:
            speed_flag = int(rel_speed > cfg.speed_threshold)
            distance_flag = int(rel_distance < cfg.distance_threshold)
            preceding = encode_preceding(speed_flag, distance_flag)

        return SpatialFeatures(
            preceding=preceding,
            braking=braking,
            congestion=congestion_level(mean_cars),
            pedestrian=pedestrian,
            pedestrian_speed=encode_pedestrian_speed(ped_speed) if ped_speed is not None else 0,
            traffic_light=light,
            heavy=heavy,
            speed_flag=speed_flag,
            distance_flag=distance_flag,
            rel_distance=rel_distance,
            rel_speed=rel_speed,
            car_count=mean_cars,
            ped_speed=ped_speed,
        )


def extract_spatial(window: WindowSlice, config: Optional[SpatialConfig] = None) -> SpatialFeatures:
    return SpatialExtractor(config).extract(window)

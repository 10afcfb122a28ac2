"""
DriveLens Feature Vector Module
The feature catalog, min-max normalization and decoding of encoded values to text
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import SpecMismatch, UnknownFeature, ValidationError
from .maneuvers import ManeuverFeatures
from .spatial import SpatialFeatures
from .trip_model import ROAD_TYPES, WEATHER_TYPES, TripMeta

MANEUVER = "F_M"
SPATIAL = "F_S"
CONFOUNDER = "F_C"
CATEGORIES = (MANEUVER, SPATIAL, CONFOUNDER)


def _tier(level: float) -> str:
    if level < 1 / 3:
        return "slight"
    if level < 2 / 3:
        return "moderate"
    return "severe"


def _code(labels: Sequence[str]) -> Callable[[float, float], str]:
    def decode(raw: float, level: float) -> str:
        index = min(max(int(round(raw)), 0), len(labels) - 1)
        return labels[index]
    return decode


@dataclass(frozen=True)
class FeatureDef:
    """One slot of the feature vector"""
    name: str
    label: str
    category: str
    lower: float
    upper: float
    decoder: Optional[Callable[[float, float], str]] = field(default=None, compare=False, repr=False)

    def normalize(self, raw: Optional[float]) -> float:
        if raw is None:
            return 0.0
        value = (float(raw) - self.lower) / (self.upper - self.lower)
        return min(max(value, 0.0), 1.0)

    def denormalize(self, level: float) -> float:
        return self.lower + level * (self.upper - self.lower)

    def decode(self, level: float) -> str:
        """Value string for a normalized level, e.g. weather 0.6 -> 'rainy'"""
        raw = self.denormalize(level)
        if self.decoder is not None:
            return self.decoder(raw, level)
        return f"{raw:.2f}"


CATALOG: Tuple[FeatureDef, ...] = (
    FeatureDef("A_W", "weaving", MANEUVER, 0.0, 1.0, lambda raw, lvl: f"{_tier(lvl)} weaving"),
    FeatureDef("A_S", "swerving", MANEUVER, 0.0, 1.0, lambda raw, lvl: f"{_tier(lvl)} swerving"),
    FeatureDef("A_L", "side slip", MANEUVER, 0.0, 1.0, lambda raw, lvl: f"{_tier(lvl)} side slip"),
    FeatureDef("A_Q", "abrupt stop", MANEUVER, 0.0, 1.0, _code(("no stop", "abrupt stop"))),
    FeatureDef("A_U", "sharp turn", MANEUVER, 0.0, 90.0,
               lambda raw, lvl: f"sharp turn of {raw:.0f} degrees" if raw > 0 else "no turn"),
    FeatureDef("A_J", "jerk", MANEUVER, 0.0, 20.0,
               lambda raw, lvl: "severe jerkiness" if raw > 0 else "smooth"),
    FeatureDef("O", "preceding vehicle", SPATIAL, 0.0, 3.0,
               _code(("steady leader", "short gap to leader", "fast relative speed to leader",
                      "fast approach at a short gap"))),
    FeatureDef("B", "leader braking", SPATIAL, 0.0, 1.0, _code(("no braking", "leader braking"))),
    FeatureDef("C", "congestion", SPATIAL, 0.0, 2.0, _code(("low", "moderate", "high"))),
    FeatureDef("P", "pedestrian", SPATIAL, 0.0, 1.0, _code(("no pedestrian", "pedestrian in lane"))),
    FeatureDef("Q", "pedestrian speed", SPATIAL, 0.0, 2.0,
               _code(("slow pedestrian", "normal pace pedestrian", "fast pedestrian"))),
    FeatureDef("L", "traffic light", SPATIAL, 0.0, 1.0, _code(("no red light", "red light"))),
    FeatureDef("H", "heavy vehicle", SPATIAL, 0.0, 1.0, _code(("no heavy vehicle", "heavy vehicle ahead"))),
    FeatureDef("S", "relative speed flag", SPATIAL, 0.0, 1.0,
               _code(("low relative speed", "high relative speed"))),
    FeatureDef("D", "relative distance flag", SPATIAL, 0.0, 1.0,
               _code(("safe distance", "short distance"))),
    FeatureDef("D_m", "relative distance", SPATIAL, 0.0, 60.0, lambda raw, lvl: f"{raw:.1f} m"),
    FeatureDef("S_mps", "relative speed", SPATIAL, 0.0, 20.0, lambda raw, lvl: f"{raw:.1f} m/s"),
    FeatureDef("car_count", "car count", SPATIAL, 0.0, 30.0, lambda raw, lvl: f"{raw:.1f} cars"),
    FeatureDef("ped_speed", "pedestrian speed", SPATIAL, 0.0, 4.0, lambda raw, lvl: f"{raw:.2f} m/s"),
    FeatureDef("G", "road type", CONFOUNDER, 0.0, 3.0, _code(ROAD_TYPES)),
    FeatureDef("W", "weather", CONFOUNDER, 0.0, 5.0, _code(WEATHER_TYPES)),
)

CATALOG_BY_NAME: Dict[str, FeatureDef] = {f.name: f for f in CATALOG}


class FeatureVectorSpec:
    """Ordered feature identifiers with normalization bounds"""

    def __init__(self, features: Iterable[FeatureDef]):
        self.features: Tuple[FeatureDef, ...] = tuple(features)
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValidationError("features", "feature identifiers must be unique")
        for f in self.features:
            if not f.lower < f.upper:
                raise ValidationError(f.name, f"feature {f.name} needs min < max")
            if f.category not in CATEGORIES:
                raise ValidationError(f.name, f"unknown category {f.category!r}")
        self._index = {name: i for i, name in enumerate(names)}

    @classmethod
    def from_ids(cls, names: Iterable[str]) -> "FeatureVectorSpec":
        missing = [n for n in names if n not in CATALOG_BY_NAME]
        if missing:
            raise UnknownFeature(f"unknown feature identifiers: {missing}")
        return cls(CATALOG_BY_NAME[n] for n in names)

    def __len__(self) -> int:
        return len(self.features)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureVectorSpec) and self.to_list() == other.to_list()

    @property
    def ids(self) -> List[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        if name not in self._index:
            raise UnknownFeature(f"feature {name!r} is not part of this spec")
        return self._index[name]

    def get(self, name: str) -> FeatureDef:
        return self.features[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def category_of(self, name: str) -> str:
        return self.get(name).category

    def subset(self, categories: Iterable[str]) -> "FeatureVectorSpec":
        """Spec restricted to some categories, for ablation runs"""
        wanted = set(categories)
        return FeatureVectorSpec(f for f in self.features if f.category in wanted)

    def to_list(self) -> List[Dict]:
        return [{"name": f.name, "min": f.lower, "max": f.upper} for f in self.features]

    def spec_hash(self) -> str:
        canonical = json.dumps(self.to_list(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def encode(self, raw: Mapping[str, Optional[float]]) -> np.ndarray:
        """Normalized vector from raw values, absent values become 0"""
        return np.asarray([f.normalize(raw.get(f.name)) for f in self.features], dtype=float)

    def decode(self, name: str, level: float) -> str:
        return self.get(name).decode(level)


DEFAULT_SPEC = FeatureVectorSpec(CATALOG)

FEATURE_SETS = {
    "all": CATEGORIES,
    "maneuver": (MANEUVER, CONFOUNDER),
    "spatial": (SPATIAL, CONFOUNDER),
}


def spec_for(feature_set: str = "all") -> FeatureVectorSpec:
    if feature_set not in FEATURE_SETS:
        raise ValidationError("feature_set", f"unknown feature set {feature_set!r}")
    return DEFAULT_SPEC.subset(FEATURE_SETS[feature_set])


@dataclass(frozen=True)
class FeatureWindow:
    """Normalized feature vector of one window"""
    window_index: int
    values: Tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def to_dict(self) -> Dict:
        return asdict(self)


def raw_feature_values(maneuvers: ManeuverFeatures, spatial: SpatialFeatures,
                       meta: TripMeta) -> Dict[str, Optional[float]]:
    values: Dict[str, Optional[float]] = {}
    values.update(maneuvers.feature_values())
    values.update(spatial.feature_values())
    values["G"] = meta.road_type
    values["W"] = meta.weather
    return values


def encode_window(window_index: int, maneuvers: ManeuverFeatures, spatial: SpatialFeatures,
                  meta: TripMeta, spec: FeatureVectorSpec = DEFAULT_SPEC) -> FeatureWindow:
    vector = spec.encode(raw_feature_values(maneuvers, spatial, meta))
    return FeatureWindow(window_index, tuple(float(v) for v in vector))


def check_vector(spec: FeatureVectorSpec, values: Sequence[float]) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or len(x) != len(spec):
        raise SpecMismatch(f"vector of length {x.size} does not match a spec of {len(spec)} features")
    if not np.all(np.isfinite(x)):
        raise SpecMismatch("feature vector holds non-finite values")
    return x

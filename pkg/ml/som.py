"""
DriveLens Self-Organizing Map Module
Codebook training with a bubble neighborhood, BMU lookup and generative micro-event extraction
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (BadDimensions, EmptySamples, NoWindows, ParseError, SpecMismatch,
                     UnknownFeature, ValidationError, VersionMismatch)
from .features import DEFAULT_SPEC, FeatureVectorSpec, FeatureWindow, check_vector

logger = logging.getLogger(__name__)

CODEBOOK_FORMAT = "drivelens-som"
CODEBOOK_VERSION = 1

Vector = Union[FeatureWindow, Sequence[float], np.ndarray]


@dataclass
class SomCodebook:
    """Rectangular neuron grid, weights stored row-major (neuron = row * cols + col)"""
    rows: int
    cols: int
    weights: np.ndarray
    spec: FeatureVectorSpec = field(default_factory=lambda: DEFAULT_SPEC)
    seed: int = 0
    trained: bool = False

    @property
    def n_neurons(self) -> int:
        return self.rows * self.cols

    def grid_position(self, neuron: int) -> Tuple[int, int]:
        return divmod(int(neuron), self.cols)

    def copy(self) -> "SomCodebook":
        return SomCodebook(self.rows, self.cols, self.weights.copy(), self.spec, self.seed, self.trained)


@dataclass(frozen=True)
class GenerativeEvent:
    feature: str
    weight: float
    value: str
    level: float
    category: str

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class GenerativeEvents:
    """F_GEN: top-k features of the BMU, weights non-increasing"""
    events: Tuple[GenerativeEvent, ...]
    k: int
    bmu: int

    @property
    def ids(self) -> List[str]:
        return [e.feature for e in self.events]

    def to_dict(self) -> Dict:
        return {"k": self.k, "bmu": self.bmu, "events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, data: Dict) -> "GenerativeEvents":
        events = tuple(GenerativeEvent(**e) for e in data.get("events", []))
        return cls(events, int(data["k"]), int(data["bmu"]))


def _vector(codebook: SomCodebook, x: Vector) -> np.ndarray:
    values = x.values if isinstance(x, FeatureWindow) else x
    return check_vector(codebook.spec, values)


def init_codebook(spec: FeatureVectorSpec = DEFAULT_SPEC, rows: int = 7, cols: int = 21,
                  seed: int = 42) -> SomCodebook:
    """Weights i.i.d. uniform in [0, 1) from the seeded generator"""
    if rows < 1 or cols < 1:
        raise BadDimensions(f"grid needs at least one row and one column, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    weights = rng.random((rows * cols, len(spec)))
    return SomCodebook(rows, cols, weights, spec, seed, trained=False)


def _distances(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((weights - x) ** 2, axis=1))


def bmu(codebook: SomCodebook, x: Vector) -> Tuple[int, float]:
    """Best matching unit: Euclidean argmin, lowest index on ties"""
    d = _distances(codebook.weights, _vector(codebook, x))
    index = int(np.argmin(d))
    return index, float(d[index])


def grid_distances(rows: int, cols: int) -> np.ndarray:
    """Chebyshev distance between every pair of grid cells"""
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.maximum(np.abs(r[:, None] - r[None, :]), np.abs(c[:, None] - c[None, :]))


def train(codebook: SomCodebook, samples: Sequence[Vector], epochs: int = 500, alpha0: float = 0.5,
          radius0: Optional[float] = None, shuffle: bool = True) -> SomCodebook:
    """
    Competitive training with a bubble neighborhood.

    alpha(e) = alpha0·(1 - e/E) and radius(e) = max(0, round(radius0·(1 - e/E))).
    The radius is floored at 0, not 1, so the final epochs update the BMU alone and
    radius0 = 0 trains the winner only from the start. Samples are shuffled each
    epoch with a generator seeded from the codebook seed.
    """
    if len(samples) == 0:
        raise EmptySamples("training needs at least one sample")
    X = np.vstack([_vector(codebook, s) for s in samples])
    if radius0 is None:
        radius0 = max(codebook.rows, codebook.cols) / 2

    result = codebook.copy()
    w = result.weights
    grid = grid_distances(result.rows, result.cols)
    rng = np.random.default_rng(result.seed)

    for epoch in range(epochs):
        decay = 1.0 - epoch / epochs
        alpha = alpha0 * decay
        radius = max(0, int(round(radius0 * decay)))
        order = rng.permutation(len(X)) if shuffle else np.arange(len(X))
        for i in order:
            x = X[i]
            winner = int(np.argmin(_distances(w, x)))
            hood = grid[winner] <= radius
            w[hood] = (1.0 - alpha) * w[hood] + alpha * x
        if epoch % 100 == 0:
            logger.info("   * epoch %d/%d alpha=%.4f radius=%d", epoch, epochs, alpha, radius)

    result.trained = True
    return result


def quantization_error(codebook: SomCodebook, samples: Sequence[Vector]) -> float:
    """Mean distance from each sample to its BMU"""
    if len(samples) == 0:
        raise EmptySamples("quantization error needs samples")
    return float(np.mean([bmu(codebook, s)[1] for s in samples]))


def topographic_error(codebook: SomCodebook, samples: Sequence[Vector]) -> float:
    """Share of samples whose best and second-best units are not grid neighbours"""
    if len(samples) == 0:
        raise EmptySamples("topographic error needs samples")
    if codebook.n_neurons < 2:
        return 0.0
    grid = grid_distances(codebook.rows, codebook.cols)
    errors = 0
    for s in samples:
        d = _distances(codebook.weights, _vector(codebook, s))
        first, second = np.argsort(d, kind="stable")[:2]
        errors += int(grid[first, second] > 1)
    return errors / len(samples)


def trip_to_grid(windows: Sequence[FeatureWindow], n_rows: int = 8, policy: str = "pad") -> np.ndarray:
    """
    Stack a trip's window vectors into an n_rows × F grid.

    Longer trips are truncated. Shorter trips are padded with the last window under
    the "pad" policy and rejected under "truncate".
    """
    if len(windows) == 0:
        raise NoWindows("trip has no windows")
    if policy not in ("pad", "truncate"):
        raise ValidationError("grid_policy", f"unknown grid policy {policy!r}")
    rows = [np.asarray(w.values, dtype=float) for w in windows[:n_rows]]
    if len(rows) < n_rows:
        if policy != "pad":
            raise NoWindows(f"trip has {len(rows)} windows, the grid needs {n_rows}")
        rows.extend([rows[-1]] * (n_rows - len(rows)))
    return np.vstack(rows)


def extract_f_gen(codebook: SomCodebook, x: Vector, k: int, min_weight: float = 0.0,
                  active_only: bool = False) -> GenerativeEvents:
    """
    Top-k features of the BMU weight vector, descending, decoded through the spec
    using the instance's own encoded values.
    """
    values = _vector(codebook, x)
    spec = codebook.spec
    if not 1 <= k <= len(spec):
        raise ValidationError("k", f"k must lie in [1, {len(spec)}], got {k}")
    winner, _ = bmu(codebook, values)
    weights = codebook.weights[winner]

    ranked = sorted(range(len(spec)), key=lambda i: (-weights[i], i))
    events = []
    for i in ranked:
        if active_only and values[i] <= 0:
            continue
        if weights[i] < min_weight:
            continue
        feature = spec.features[i]
        events.append(GenerativeEvent(feature.name, float(weights[i]), feature.decode(values[i]),
                                      float(values[i]), feature.category))
        if len(events) == k:
            break
    return GenerativeEvents(tuple(events), k, winner)


# ========================
# Codebook files
# ========================

def save_codebook(codebook: SomCodebook, path: str):
    """Versioned JSON header line, then one line of repr floats per neuron"""
    header = {
        "format": CODEBOOK_FORMAT,
        "version": CODEBOOK_VERSION,
        "rows": codebook.rows,
        "cols": codebook.cols,
        "features": len(codebook.spec),
        "seed": codebook.seed,
        "trained": codebook.trained,
        "spec_hash": codebook.spec.spec_hash(),
        "spec": codebook.spec.ids,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for row in codebook.weights:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")
    logger.info("Saved %dx%d codebook to %s", codebook.rows, codebook.cols, path)


def load_codebook(path: str, spec: Optional[FeatureVectorSpec] = None) -> SomCodebook:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ParseError(f"cannot read codebook {path}: {e}") from e
    if not lines:
        raise ParseError(f"codebook {path} is empty")

    try:
        header = json.loads(lines[0])
        fmt, version = header["format"], header["version"]
        rows, cols, n_features = int(header["rows"]), int(header["cols"]), int(header["features"])
        names = list(header["spec"])
        seed, trained, digest = int(header["seed"]), bool(header["trained"]), header["spec_hash"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"codebook {path} has a malformed header: {e}") from e
    if fmt != CODEBOOK_FORMAT or version != CODEBOOK_VERSION:
        raise VersionMismatch(f"codebook {path} is {fmt} v{version}, expected "
                              f"{CODEBOOK_FORMAT} v{CODEBOOK_VERSION}")

    try:
        stored_spec = FeatureVectorSpec.from_ids(names)
    except UnknownFeature as e:
        raise VersionMismatch(f"codebook {path} names features this build does not know") from e
    if len(stored_spec) != n_features or stored_spec.spec_hash() != digest:
        raise VersionMismatch(f"codebook {path} spec does not match its header")
    if spec is not None and (len(spec) != n_features or spec.spec_hash() != digest):
        raise VersionMismatch(f"codebook {path} holds {n_features} features, "
                              f"the requested spec has {len(spec)}")

    body = [line for line in lines[1:] if line.strip()]
    if rows < 1 or cols < 1 or len(body) != rows * cols:
        raise ParseError(f"codebook {path} has {len(body)} weight lines, expected {rows * cols}")
    try:
        weights = np.asarray([[float(v) for v in line.split()] for line in body], dtype=float)
    except ValueError as e:
        raise ParseError(f"codebook {path} holds a non-numeric weight") from e
    if weights.shape != (rows * cols, n_features) or not np.all(np.isfinite(weights)):
        raise ParseError(f"codebook {path} weight matrix is malformed")
    return SomCodebook(rows, cols, weights, stored_spec, seed, trained)


def map_dump(codebook: SomCodebook, trips: Iterable[Tuple[str, Sequence[FeatureWindow]]]) -> pd.DataFrame:
    """Neuron assignment of every window, for external plotting"""
    records = []
    for trip_id, windows in trips:
        for w in windows:
            neuron, distance = bmu(codebook, w)
            row, col = codebook.grid_position(neuron)
            records.append({"trip_id": trip_id, "window_index": w.window_index, "neuron": neuron,
                            "row": row, "col": col, "distance": distance})
    return pd.DataFrame(records, columns=["trip_id", "window_index", "neuron", "row", "col", "distance"])

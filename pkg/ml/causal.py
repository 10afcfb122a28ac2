"""
DriveLens Causal Analysis Module
Rank-correlation screening, matched pairs and the average treatment effect of micro-events
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import kendalltau, spearmanr

from .errors import (DegenerateSeries, LengthMismatch, NoPairs, ValidationError,
                     ZeroDenominator)

logger = logging.getLogger(__name__)

CAUSAL_THRESHOLD = 0.5
HIGH_CAUSAL_THRESHOLD = 1.0

CAUSAL = "causal"
NOT_CAUSAL = "not causal"
ELIMINATED = "eliminated"
NOT_EVALUATED = "n/a"


@dataclass(frozen=True)
class VariableSeries:
    name: str
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValidationError(self.name, f"series {self.name} is empty")
        if not np.all(np.isfinite(np.asarray(self.values, dtype=float))):
            raise ValidationError(self.name, f"series {self.name} holds non-finite values")


@dataclass(frozen=True)
class MatchedPairSet:
    pairs: Tuple[Tuple[int, int], ...]
    treatment_name: str = "treatment"
    covariate_names: Tuple[str, ...] = ()


@dataclass(frozen=True)
class CausalVerdict:
    ate: float
    is_causal: bool
    tau: float

    @property
    def high_causal(self) -> bool:
        return self.ate > HIGH_CAUSAL_THRESHOLD


@dataclass(frozen=True)
class AteEstimate:
    """Mean effect over the usable pairs, pairs with equal treatment scores listed apart"""
    ate: float
    n_pairs: int
    excluded: Tuple[Tuple[int, int], ...] = ()


def _check_pair(x: Sequence[float], y: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise LengthMismatch(f"series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise LengthMismatch("correlation needs at least two observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateSeries("correlation is undefined for a constant series")
    return x, y


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b"""
    x, y = _check_pair(x, y)
    return float(kendalltau(x, y, variant="b").statistic)


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of mid-ranks"""
    x, y = _check_pair(x, y)
    return float(spearmanr(x, y).statistic)


CORRELATIONS = {"kendall": kendall_tau, "spearman": spearman_rho}


def rank_correlation(x: Sequence[float], y: Sequence[float], method: str = "kendall") -> float:
    if method not in CORRELATIONS:
        raise ValidationError("method", f"unknown correlation {method!r}, expected one of {sorted(CORRELATIONS)}")
    return CORRELATIONS[method](x, y)


def screen_features(candidates: Sequence[VariableSeries], response: Sequence[float],
                    cutoff: float = 0.5, method: str = "kendall") -> List[VariableSeries]:
    """Keep candidates with |correlation| >= cutoff against the response, order preserved"""
    return [c for c in candidates if abs(rank_correlation(c.values, response, method)) >= cutoff]


def build_matched_pairs(treatment: Sequence[float], covariates: Sequence[Sequence[float]] = (),
                        tolerance: Union[float, Sequence[float]] = 0.0,
                        treatment_name: str = "treatment",
                        covariate_names: Sequence[str] = ()) -> MatchedPairSet:
    """
    Greedy matching without replacement.

    Treated indices are visited in ascending order and paired with the nearest untreated
    index by L∞ covariate distance within tolerance, lowest index on ties.
    """
    t = np.asarray(treatment, dtype=float)
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise ValidationError(treatment_name, "treatment must be binary")
    cov = np.asarray(covariates, dtype=float).reshape(len(covariates), -1) if len(covariates) \
        else np.zeros((0, len(t)))
    if cov.shape[1] != len(t):
        raise LengthMismatch("covariates are not aligned with the treatment")
    tol = np.broadcast_to(np.asarray(tolerance, dtype=float), (cov.shape[0],))

    treated = np.flatnonzero(t == 1)
    available = list(np.flatnonzero(t == 0))
    pairs = []
    for i in treated:
        best_j, best_d = None, None
        for j in available:
            gaps = np.abs(cov[:, i] - cov[:, j])
            if np.any(gaps > tol):
                continue
            d = float(gaps.max()) if len(gaps) else 0.0
            if best_d is None or d < best_d:
                best_j, best_d = j, d
        if best_j is not None:
            pairs.append((int(i), int(best_j)))
            available.remove(best_j)

    if not pairs:
        raise NoPairs(f"no matched pair for treatment {treatment_name}")
    return MatchedPairSet(tuple(pairs), treatment_name, tuple(covariate_names))


def average_treatment_effect(pairs: MatchedPairSet, response: Sequence[float],
                             x: Sequence[float]) -> float:
    """Mean over pairs of (R(i) - R(j)) / (X(i) - X(j))"""
    if not pairs.pairs:
        raise NoPairs("no pairs to average")
    ratios = []
    for i, j in pairs.pairs:
        dx = float(x[i]) - float(x[j])
        if dx == 0:
            raise ZeroDenominator((i, j))
        ratios.append((float(response[i]) - float(response[j])) / dx)
    return float(np.mean(ratios))


def estimate_ate(pairs: MatchedPairSet, response: Sequence[float], x: Sequence[float]) -> AteEstimate:
    """ATE that skips zero-denominator pairs instead of failing the whole run"""
    usable = tuple(p for p in pairs.pairs if float(x[p[0]]) != float(x[p[1]]))
    excluded = tuple(p for p in pairs.pairs if p not in usable)
    for pair in excluded:
        logger.warning("Excluding pair %s: %s", pair, ZeroDenominator(pair))
    if not usable:
        raise NoPairs(f"every pair of {pairs.treatment_name} has a zero treatment difference")
    ate = average_treatment_effect(MatchedPairSet(usable, pairs.treatment_name, pairs.covariate_names),
                                   response, x)
    return AteEstimate(ate, len(usable), excluded)


def causal_verdict(ate: float, tau: float, threshold: float = CAUSAL_THRESHOLD) -> CausalVerdict:
    if not (np.isfinite(ate) and np.isfinite(tau)):
        raise ValidationError("ate", "verdict needs finite ATE and tau")
    return CausalVerdict(ate=float(ate), is_causal=ate > threshold, tau=float(tau))


# ========================
# Causality study table
# ========================

@dataclass
class CausalRow:
    feature: str
    tau: Optional[float]
    ate: Optional[float]
    n_pairs: int
    verdict: str
    excluded_pairs: List[Tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def aggregate_by_trip(table: pd.DataFrame, features: Sequence[str],
                      response: str = "response") -> pd.DataFrame:
    """One row per trip: worst window of each feature, mean response"""
    agg = {name: "max" for name in features if name in table.columns}
    agg[response] = "mean"
    return table.groupby("trip_id", sort=True).agg(agg).reset_index()


def causal_study(table: pd.DataFrame, candidates: Sequence[str],
                 confounders: Sequence[str] = ("G", "W"), response: str = "response",
                 cutoff: float = 0.5, threshold: float = CAUSAL_THRESHOLD,
                 method: str = "kendall") -> List[CausalRow]:
    """
    Screen every candidate by rank correlation (Kendall tau unless `method` says
    spearman), then estimate the ATE of the survivors on pairs matched exactly on the
    confounders. A candidate is treated where its value > 0. Constant candidates are n/a.
    """
    r = table[response].to_numpy(dtype=float)
    scores: Dict[str, float] = {}
    series = []
    for name in candidates:
        values = table[name].to_numpy(dtype=float)
        try:
            scores[name] = rank_correlation(values, r, method)
        except DegenerateSeries:
            continue
        series.append(VariableSeries(name, tuple(values)))
    kept = {s.name for s in screen_features(series, r, cutoff, method)}

    rows = []
    for name in candidates:
        if name not in scores:
            rows.append(CausalRow(name, None, None, 0, NOT_EVALUATED))
            continue
        tau = scores[name]
        if name not in kept:
            rows.append(CausalRow(name, tau, None, 0, ELIMINATED))
            continue

        values = table[name].to_numpy(dtype=float)
        covariates = [c for c in confounders if c != name and c in table.columns]
        try:
            pairs = build_matched_pairs((values > 0).astype(float),
                                        [table[c].to_numpy(dtype=float) for c in covariates],
                                        0.0, name, covariates)
            estimate = estimate_ate(pairs, r, values)
        except NoPairs as e:
            logger.info("No usable pairs for %s: %s", name, e)
            rows.append(CausalRow(name, tau, None, 0, NOT_EVALUATED))
            continue
        verdict = causal_verdict(estimate.ate, tau, threshold)
        rows.append(CausalRow(name, tau, estimate.ate, estimate.n_pairs,
                              CAUSAL if verdict.is_causal else NOT_CAUSAL,
                              list(estimate.excluded)))
    return rows


def causal_table(rows: Sequence[CausalRow]) -> pd.DataFrame:
    frame = pd.DataFrame([{"feature": r.feature, "tau": r.tau, "ate": r.ate,
                           "pairs": r.n_pairs, "verdict": r.verdict} for r in rows],
                         columns=["feature", "tau", "ate", "pairs", "verdict"])
    return frame

"""Replication statistics: ECDFs, Student-t confidence intervals, KS distances, normalization, ε."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats as sps

from clonesim.models.schemas import CiSummary
from clonesim.utils.errors import AnalysisError

logger = logging.getLogger(__name__)

EcdfPoints = List[Tuple[float, float]]


@dataclass
class ReplicationResult:
    """Post-warm-up response times of one replication, in request order."""
    replication: int
    samples: np.ndarray
    seed: int
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError(f"replication {self.replication} has no post-warm-up samples")
        if np.isnan(self.samples).any() or (self.samples < 0).any():
            raise ValueError(f"replication {self.replication} has invalid response times")

    @property
    def count(self) -> int:
        return int(self.samples.size)

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


def ecdf(samples: Sequence[float]) -> EcdfPoints:
    """Step points (t, P[X <= t]) at the sorted unique sample values."""
    values = np.asarray(samples, dtype=np.float64)
    if values.size == 0:
        raise ValueError("ecdf of an empty sample")
    unique, counts = np.unique(values, return_counts=True)
    cumulative = np.cumsum(counts) / values.size
    cumulative[-1] = 1.0
    return list(zip(unique.tolist(), cumulative.tolist()))


def thin_ecdf(points: EcdfPoints, max_points: int) -> EcdfPoints:
    """Quantile thinning: keep the steps closest to evenly spaced probabilities, always keeping both ends."""
    if len(points) <= max_points:
        return list(points)
    probabilities = np.array([p for _, p in points])
    targets = np.linspace(probabilities[0], 1.0, max_points)
    keep = np.unique(np.searchsorted(probabilities, targets, side="left").clip(0, len(points) - 1))
    keep = np.union1d(keep, [0, len(points) - 1])
    return [points[i] for i in keep]


def mean_ci(means: Sequence[float], level: float = 0.95) -> CiSummary:
    """Mean of replication means ± t_{(1+level)/2, R-1} · s / sqrt(R)."""
    values = np.asarray(means, dtype=np.float64)
    r = values.size
    if r < 2:
        raise ValueError(f"a confidence interval needs at least 2 replications, got {r}")
    estimate = float(values.mean())
    spread = float(values.std(ddof=1))
    quantile = float(sps.t.ppf(0.5 + level / 2.0, r - 1))
    return CiSummary(estimate=estimate, half_width=quantile * spread / np.sqrt(r), replications=r, level=level)


def ks_distance(samples: Sequence[float],
                reference: Union[Sequence[float], Callable[[np.ndarray], np.ndarray]]) -> float:
    """Sup-distance between the ECDF of ``samples`` and a reference ECDF (samples) or analytic cdf."""
    values = np.asarray(samples, dtype=np.float64)
    if values.size == 0:
        raise ValueError("ks_distance of an empty sample")
    if callable(reference):
        return float(sps.kstest(values, reference).statistic)
    other = np.asarray(reference, dtype=np.float64)
    if other.size == 0:
        raise ValueError("ks_distance against an empty reference")
    return float(sps.ks_2samp(values, other).statistic)


def normalize(series: Sequence[CiSummary], baseline: Sequence[CiSummary]) -> List[CiSummary]:
    """Divide estimates and half widths by the baseline estimates, point by point."""
    if len(series) != len(baseline):
        raise AnalysisError(f"grid mismatch: {len(series)} points against {len(baseline)} baseline points")
    normalized = []
    for point, base in zip(series, baseline):
        if base.estimate <= 0:
            raise AnalysisError(f"cannot normalize by a non-positive baseline {base.estimate}")
        normalized.append(CiSummary(estimate=point.estimate / base.estimate,
                                    half_width=point.half_width / base.estimate,
                                    replications=point.replications, level=point.level))
    return normalized


def sync_error(delayed_means: Sequence[float], synchronized_means: Sequence[float],
               level: float = 0.95) -> CiSummary:
    """ε_r = |T̄_a,r - T̄_c,r| / T̄_c,r over seed-paired replications, summarized with ``mean_ci``."""
    a = np.asarray(delayed_means, dtype=np.float64)
    c = np.asarray(synchronized_means, dtype=np.float64)
    if a.shape != c.shape:
        raise AnalysisError(f"unpaired inputs: {a.size} delayed means against {c.size} synchronized means")
    if (c <= 0).any():
        raise AnalysisError("synchronized replication means must be positive")
    return mean_ci(np.abs(a - c) / c, level=level)


def ci_band_polygon(x: Sequence[float], series: Sequence[CiSummary]) -> pd.DataFrame:
    """Closed outline for a filled CI band: x ascending along the lower bound, then descending along the upper."""
    order = np.argsort(np.asarray(x, dtype=np.float64), kind="stable")
    xs = [float(x[i]) for i in order]
    lower = [series[i].lower for i in order]
    upper = [series[i].upper for i in order]
    return pd.DataFrame({"x": xs + xs[::-1], "y": lower + upper[::-1]})


def dkw_bound(n: int, alpha: float = 0.05) -> float:
    """Dvoretzky–Kiefer–Wolfowitz radius for an n-sample ECDF."""
    return float(np.sqrt(np.log(2.0 / alpha) / (2.0 * n)))

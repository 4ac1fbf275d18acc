#!/usr/bin/env python3
"""
Statistics Tests
ECDFs, confidence intervals, KS distances, normalization and the synchronization error
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from clonesim.models.schemas import CiSummary
from clonesim.services.stats import (
    ReplicationResult, ci_band_polygon, dkw_bound, ecdf, ks_distance, mean_ci, normalize, sync_error, thin_ecdf,
)
from clonesim.utils.errors import AnalysisError


def test_ecdf_steps():
    assert ecdf([3.0, 1.0, 2.0]) == [(1.0, pytest.approx(1 / 3)), (2.0, pytest.approx(2 / 3)), (3.0, 1.0)]
    assert ecdf([1.0, 1.0, 2.0]) == [(1.0, pytest.approx(2 / 3)), (2.0, 1.0)]
    with pytest.raises(ValueError):
        ecdf([])


def test_thin_ecdf_keeps_both_ends():
    points = ecdf(np.arange(1000, dtype=float))
    thinned = thin_ecdf(points, 50)
    assert len(thinned) <= 52
    assert thinned[0] == points[0] and thinned[-1] == points[-1]
    assert [t for t, _ in thinned] == sorted(t for t, _ in thinned)
    assert thin_ecdf(points[:10], 50) == points[:10]


def test_mean_ci_values():
    summary = mean_ci([1.0, 2.0, 3.0])
    assert summary.estimate == 2.0
    assert summary.half_width == pytest.approx(2.4842, abs=1e-4)
    assert summary.replications == 3

    # t quantile for 19 degrees of freedom
    values = np.linspace(0.0, 1.0, 20)
    expected = 2.093 * values.std(ddof=1) / np.sqrt(20)
    assert mean_ci(values).half_width == pytest.approx(expected, rel=1e-3)

    with pytest.raises(ValueError):
        mean_ci([1.0])


def test_mean_ci_permutation_and_linearity():
    values = [0.7, 1.9, 1.2, 0.4, 2.2]
    base = mean_ci(values)
    shuffled = mean_ci(values[::-1])
    assert shuffled.estimate == pytest.approx(base.estimate)
    assert shuffled.half_width == pytest.approx(base.half_width)

    scaled = mean_ci([3.0 * v + 1.0 for v in values])
    assert scaled.estimate == pytest.approx(3.0 * base.estimate + 1.0)
    assert scaled.half_width == pytest.approx(3.0 * base.half_width)


def test_identical_replications_have_zero_width():
    summary = mean_ci([4.0, 4.0, 4.0, 4.0])
    assert summary.half_width == 0.0
    assert summary.contains(4.0)


def test_ks_distance():
    assert ks_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert ks_distance([1.0, 2.0], [5.0, 6.0]) == 1.0
    uniform_cdf = lambda x: np.clip(x, 0.0, 1.0)
    assert ks_distance([0.25, 0.5, 0.75], uniform_cdf) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        ks_distance([], [1.0])


def test_normalize():
    series = [CiSummary(estimate=1.2, half_width=0.1, replications=5)]
    baseline = [CiSummary(estimate=1.0, half_width=0.05, replications=5)]
    result = normalize(series, baseline)[0]
    assert result.estimate == pytest.approx(1.2)
    assert result.half_width == pytest.approx(0.1)

    halved = normalize(series, [CiSummary(estimate=2.0, half_width=0.0, replications=5)])[0]
    assert halved.estimate == pytest.approx(0.6)
    assert halved.half_width == pytest.approx(0.05)

    # multiplying back by the baseline restores the series
    raw = [CiSummary(estimate=e, half_width=h, replications=7) for e, h in ((0.37, 0.011), (1.9, 0.2), (12.5, 3.1))]
    base = [CiSummary(estimate=e, half_width=0.0, replications=7) for e in (0.3, 1.7, 9.1)]
    for before, after, b in zip(raw, normalize(raw, base), base):
        assert abs(after.estimate * b.estimate - before.estimate) <= 1e-12
        assert abs(after.half_width * b.estimate - before.half_width) <= 1e-12

    with pytest.raises(AnalysisError):
        normalize(series, baseline * 2)
    with pytest.raises(AnalysisError):
        normalize(series, [CiSummary(estimate=0.0, half_width=0.0, replications=5)])


def test_sync_error():
    same = sync_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert same.estimate == 0.0 and same.half_width == 0.0

    shifted = sync_error([1.1, 2.2, 3.3], [1.0, 2.0, 3.0])
    assert shifted.estimate == pytest.approx(0.1)
    assert shifted.half_width == pytest.approx(0.0, abs=1e-12)

    # sign does not matter
    assert sync_error([0.9, 1.1], [1.0, 1.0]).estimate == pytest.approx(0.1)

    with pytest.raises(AnalysisError):
        sync_error([1.0, 2.0], [1.0])
    with pytest.raises(AnalysisError):
        sync_error([1.0, 2.0], [1.0, 0.0])


def test_ci_band_polygon_outline():
    series = [CiSummary(estimate=e, half_width=0.5, replications=3) for e in (3.0, 1.0, 2.0)]
    band = ci_band_polygon([0.3, 0.1, 0.2], series)
    assert band["x"].tolist() == [0.1, 0.2, 0.3, 0.3, 0.2, 0.1]
    assert band["y"].tolist() == [0.5, 1.5, 2.5, 3.5, 2.5, 1.5]


def test_dkw_bound():
    assert dkw_bound(100_000) == pytest.approx(0.0042947, abs=1e-6)
    assert dkw_bound(400, alpha=1e-3) > dkw_bound(400)


def test_replication_result_validation():
    result = ReplicationResult(replication=0, samples=[1.0, 3.0], seed=1)
    assert result.count == 2 and result.mean == 2.0
    assert result.samples.dtype == np.float64
    with pytest.raises(ValueError):
        ReplicationResult(replication=0, samples=[], seed=1)
    with pytest.raises(ValueError):
        ReplicationResult(replication=0, samples=[1.0, float("nan")], seed=1)
    with pytest.raises(ValueError):
        ReplicationResult(replication=0, samples=[-1.0], seed=1)


def run_all_tests():
    """Run every test in this file and print a summary."""
    tests = [(name, fn) for name, fn in globals().items() if name.startswith("test_") and callable(fn)]
    print("=" * 60)
    print("🧪 STATISTICS TESTS")
    print("=" * 60)
    passed = 0
    for name, fn in tests:
        try:
            fn()
            print(f"  ✅ {name}")
            passed += 1
        except Exception as e:
            print(f"  ❌ {name}: {e}")
    print("=" * 60)
    print(f"📊 Passed: {passed}/{len(tests)} tests")
    print("=" * 60)
    return passed == len(tests)


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)

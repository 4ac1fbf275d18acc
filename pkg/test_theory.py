#!/usr/bin/env python3
"""
Theory Tests
Equivalent server, PS mean response, optimal cloning factor and co-design estimates
"""

import sys
from pathlib import Path

import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from clonesim.models.schemas import Chooser, Scenario, TheoryInputs
from clonesim.services.distributions import Deterministic, Exponential, HyperExponential
from clonesim.services.theory import (
    clone_to_all_response, clone_to_all_sweep, codesign_theory, divisors, effective_load, equivalent_server,
    group_load, optimal_clone_factor, optimal_codesign, ps_mean_response,
)
from clonesim.utils.errors import UnstableSystemError

HYPEREXP = HyperExponential(weights=(0.9, 0.1), rates=(1.8, 0.18))
RATES = [round(0.05 * i, 2) for i in range(1, 14)]


def test_divisors():
    assert divisors(12) == [1, 2, 3, 4, 6, 12]
    assert divisors(7) == [1, 7]


def test_equivalent_server_scales_by_capacity():
    law = equivalent_server([Exponential(rate=1.0), Exponential(rate=1.0)], [2.0, 2.0])
    assert law.mean() == pytest.approx(0.25)

    single = equivalent_server([Deterministic(value=3.0)], [1.0])
    assert single.mean() == 3.0

    with pytest.raises(ValueError):
        equivalent_server([Exponential(rate=1.0)], [1.0, 2.0])


def test_ps_mean_response():
    assert ps_mean_response(Exponential(rate=1.0), 0.5) == pytest.approx(2.0)
    # insensitive to the law beyond its mean
    assert ps_mean_response(Deterministic(value=1.0), 0.5) == pytest.approx(2.0)
    with pytest.raises(UnstableSystemError) as info:
        ps_mean_response(Exponential(rate=1.0), 1.0)
    assert info.value.load == pytest.approx(1.0)


def test_exponential_servers_clone_to_everything():
    for rate in (0.1, 0.5, 0.9):
        best = optimal_clone_factor(TheoryInputs.homogeneous(12, rate, Exponential(rate=1.0)))
        assert best.clone_factor == 12
        assert best.mean_response == pytest.approx((1.0 / 12) / (1.0 - rate))


def test_deterministic_servers_never_clone():
    best = optimal_clone_factor(TheoryInputs.homogeneous(4, 0.2, Deterministic(value=1.0)))
    assert best.clone_factor == 1
    assert best.mean_response == pytest.approx(1.25)
    assert best.candidates[2] == pytest.approx(1.0 / 0.6)


def test_unstable_candidates_are_left_out():
    best = optimal_clone_factor(TheoryInputs.homogeneous(4, 0.6, Deterministic(value=1.0)))
    assert best.clone_factor == 1
    assert best.candidates[2] is None and best.candidates[4] is None

    with pytest.raises(UnstableSystemError):
        optimal_clone_factor(TheoryInputs.homogeneous(4, 1.2, Exponential(rate=1.0)))


def test_heterogeneous_groups_are_averaged():
    inputs = TheoryInputs(n_servers=4, arrival_rate=0.2,
                          laws=[Exponential(rate=1.0), Exponential(rate=1.0), Exponential(rate=2.0), Exponential(rate=2.0)],
                          capacities=[1.0] * 4)
    expected = (0.5 / (1 - 0.4 * 0.5) + 0.25 / (1 - 0.4 * 0.25)) / 2
    assert clone_to_all_response(inputs, 2) == pytest.approx(expected)
    assert group_load(inputs, 2) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        clone_to_all_response(inputs, 3)


def test_candidates_restrict_the_search():
    inputs = TheoryInputs.homogeneous(12, 0.3, Exponential(rate=1.0), candidates=[1, 2, 3])
    best = optimal_clone_factor(inputs)
    assert best.clone_factor == 3
    assert sorted(best.candidates) == [1, 2, 3]


def test_random_codesign_closed_form():
    inputs = TheoryInputs.homogeneous(6, 0.3, Exponential(rate=1.0))
    estimate = codesign_theory(inputs, Chooser.RANDOM, 2)
    assert estimate.source == "closed-form"
    assert estimate.mean_response == pytest.approx(0.5 / (1 - 0.3))

    d, best = optimal_codesign(inputs, Chooser.RANDOM)
    assert d == 6
    assert best.mean_response == pytest.approx((1 / 6) / 0.7)

    with pytest.raises(ValueError):
        codesign_theory(inputs, Chooser.RANDOM, 7)


def test_jsq_codesign_is_simulated():
    inputs = TheoryInputs.homogeneous(3, 0.3, Exponential(rate=1.0))
    estimate = codesign_theory(inputs, Chooser.JSQ, 2, requests=2000, replications=2, seed=5)
    assert estimate.source == "simulation"
    assert estimate.half_width is not None
    # JSQ never does worse than the random closed form by much
    closed = codesign_theory(inputs, Chooser.RANDOM, 2).mean_response
    assert 0 < estimate.mean_response < 1.5 * closed


def test_effective_load_counts_lingering_work():
    base = {
        "name": "load-test",
        "cluster": {"size": 6, "service": {"type": "exponential", "rate": 1.0}},
        "arrival_rate": 0.3,
        "strategy": {"kind": "clone-to-all-groups", "clone_factor": 2},
    }
    assert effective_load(Scenario.model_validate(base)) == pytest.approx(0.3)

    delayed = dict(base, sync_mode="delayed", delays={"cancellation": {"type": "deterministic", "value": 0.1}})
    assert effective_load(Scenario.model_validate(delayed)) == pytest.approx(2 * 0.3 * 0.6)

    bound = dict(base, sync_mode="bound", delays={"arrival": {"type": "deterministic", "value": 0.1},
                                                   "cancellation": {"type": "deterministic", "value": 0.1}})
    assert effective_load(Scenario.model_validate(bound)) == pytest.approx(2 * 0.3 * 0.7)


def test_effective_load_covers_every_server():
    slow_second = {
        "name": "load-test",
        "servers": [{"service": {"type": "exponential", "rate": 1.0}},
                    {"service": {"type": "exponential", "rate": 0.5}}],
        "arrival_rate": 0.6,
        "strategy": {"kind": "clone-to-all-groups", "clone_factor": 1},
    }
    assert effective_load(Scenario.model_validate(slow_second)) == pytest.approx(1.2)

    one_group = dict(slow_second, strategy={"kind": "clone-to-all-groups", "clone_factor": 2})
    assert effective_load(Scenario.model_validate(one_group)) == pytest.approx(2 * 0.6 / 1.5)

    for d in (1, 2):
        subset = dict(slow_second, strategy={"kind": "clone-subset", "clone_factor": d})
        assert effective_load(Scenario.model_validate(subset)) == pytest.approx(1.2)


def test_sweep_skips_unstable_rates():
    table = clone_to_all_sweep(TheoryInputs.homogeneous(6, 0.1, Exponential(rate=1.0)), [0.2, 0.5, 1.5])
    assert table["arrival_rate"].tolist() == [0.2, 0.5]
    assert table["clone_factor"].tolist() == [6, 6]

    with pytest.raises(UnstableSystemError):
        clone_to_all_sweep(TheoryInputs.homogeneous(6, 0.1, Exponential(rate=1.0)), [1.5, 2.0])


def test_optimal_factor_never_grows_with_load():
    table = clone_to_all_sweep(TheoryInputs.homogeneous(12, 0.05, HYPEREXP), RATES)
    factors = table["clone_factor"].tolist()
    assert len(factors) == len(RATES)
    assert all(a >= b for a, b in zip(factors, factors[1:]))


def run_all_tests():
    """Run every test in this file and print a summary."""
    tests = [(name, fn) for name, fn in globals().items() if name.startswith("test_") and callable(fn)]
    print("=" * 60)
    print("🧪 THEORY TESTS")
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

#!/usr/bin/env python3
"""
Cloning Dispatch Tests
Target choice, synchronized and delayed clone lifecycles, structural invariants
"""

import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from clonesim.models.schemas import Chooser, Scenario, StrategyConfig, StrategyKind
from clonesim.services.dispatch import (
    ClusterSimulation, Request, RequestState, choose_targets, replay_on_equivalent_server, replay_without_cloning,
)
from clonesim.services.kernel import derive_stream
from clonesim.utils.errors import ScenarioError, SchedulingError

HETEROGENEOUS = [
    {"service": {"type": "exponential", "rate": 1.0}},
    {"service": {"type": "hyperexponential", "weights": [0.9, 0.1], "rates": [1.8, 0.18]}},
    {"service": {"type": "uniform", "low": 0.0, "high": 2.0}},
]
EXP1 = {"type": "exponential", "rate": 1.0}


def make_scenario(**fields):
    data = {
        "name": "dispatch-test",
        "cluster": {"size": 3, "service": EXP1},
        "arrival_rate": 0.3,
        "strategy": {"kind": "clone-to-all-groups", "clone_factor": 3},
        "requests": 400,
        "replications": 1,
        "seed": 11,
    }
    if "servers" in fields:
        del data["cluster"]
    data.update(fields)
    return Scenario.model_validate(data)


def trace_by_kind(trace):
    grouped = defaultdict(list)
    for kind, time, payload in trace:
        grouped[kind].append((time, payload))
    return grouped


def test_single_group_takes_every_server():
    rng = derive_stream(1, 0, "dispatch")
    strategy = StrategyConfig(kind=StrategyKind.CLONE_TO_ALL_GROUPS, clone_factor=3)
    for _ in range(10):
        assert choose_targets(strategy, [4, 0, 2], rng) == [0, 1, 2]


def test_groups_are_static_blocks():
    rng = derive_stream(1, 0, "dispatch")
    strategy = StrategyConfig(kind=StrategyKind.CLONE_TO_ALL_GROUPS, clone_factor=2)
    seen = {tuple(choose_targets(strategy, [0] * 6, rng)) for _ in range(200)}
    assert seen == {(0, 1), (2, 3), (4, 5)}

    jsq = StrategyConfig(kind=StrategyKind.CLONE_TO_ALL_GROUPS, clone_factor=2, chooser=Chooser.JSQ)
    assert choose_targets(jsq, [3, 3, 0, 1, 2, 2], rng) == [2, 3]


def test_jsq_picks_the_shortest_queues():
    rng = derive_stream(1, 0, "dispatch")
    strategy = StrategyConfig(kind=StrategyKind.CLONE_SUBSET, clone_factor=2, chooser=Chooser.JSQ)
    assert set(choose_targets(strategy, [0, 5, 1, 5], rng)) == {0, 2}

    one = StrategyConfig(kind=StrategyKind.CLONE_SUBSET, clone_factor=1, chooser=Chooser.JSQ)
    picked = {choose_targets(one, [0, 0, 0, 0], rng)[0] for _ in range(200)}
    assert picked == {0, 1, 2, 3}


def test_random_subset_is_distinct():
    rng = derive_stream(1, 0, "dispatch")
    everything = StrategyConfig(kind=StrategyKind.CLONE_SUBSET, clone_factor=4)
    assert sorted(choose_targets(everything, [1, 2, 3, 4], rng)) == [0, 1, 2, 3]

    pair = StrategyConfig(kind=StrategyKind.CLONE_SUBSET, clone_factor=2)
    for _ in range(50):
        targets = choose_targets(pair, [0] * 5, rng)
        assert len(set(targets)) == 2


def test_invalid_strategies_are_rejected():
    with pytest.raises(ValidationError):
        make_scenario(cluster={"size": 4, "service": EXP1})
    with pytest.raises(ValidationError):
        make_scenario(strategy={"kind": "clone-subset", "clone_factor": 5})
    with pytest.raises(ScenarioError):
        ClusterSimulation(make_scenario(delays={"arrival": {"type": "deterministic", "value": 0.1}}), 0)
    with pytest.raises(ScenarioError):
        ClusterSimulation(make_scenario(sync_mode="delayed"), 0)


def test_synchronized_clones_join_together_and_groups_stay_identical():
    scenario = make_scenario(servers=HETEROGENEOUS)

    def same_members(simulation, event):
        members = [{clone_id[0] for clone_id in server.residents} for server in simulation.servers]
        assert members[0] == members[1] == members[2]

    simulation = ClusterSimulation(scenario, 0, trace=True, observer=same_members)
    result = simulation.run()
    assert result.count == scenario.requests - scenario.warmup

    joins = defaultdict(list)
    for time, (request_id, _, _) in trace_by_kind(simulation.trace)["clone-join"]:
        joins[request_id].append(time)
    assert len(joins) == scenario.requests
    assert all(len(times) == 3 and len(set(times)) == 1 for times in joins.values())


def test_zero_delays_reproduce_synchronized_service():
    synced = ClusterSimulation(make_scenario(), 0).run()
    zero = {"type": "deterministic", "value": 0.0}
    delayed = ClusterSimulation(make_scenario(sync_mode="delayed",
                                              delays={"arrival": zero, "cancellation": zero}), 0).run()
    assert np.array_equal(synced.samples, delayed.samples)


def test_arrival_delay_shifts_every_join():
    scenario = make_scenario(sync_mode="delayed", delays={"arrival": {"type": "deterministic", "value": 0.1}})
    simulation = ClusterSimulation(scenario, 0, trace=True)
    simulation.run()
    events = trace_by_kind(simulation.trace)
    arrivals = {payload[0]: time for time, payload in events["external-arrival"]}
    for time, (request_id, _, _) in events["clone-join"]:
        assert time == arrivals[request_id] + 0.1


def test_cancellation_delay_keeps_losers_resident():
    scenario = make_scenario(sync_mode="delayed", delays={"cancellation": {"type": "deterministic", "value": 0.5}})
    simulation = ClusterSimulation(scenario, 0, trace=True, keep_requests=True)
    simulation.run()
    completed_at = {r.request_id: r.t_first_completion for r in simulation.request_log}
    cancels = [(time, payload) for time, payload in trace_by_kind(simulation.trace)["clone-cancel"]
               if payload[2] is not None]
    assert cancels
    for time, (request_id, _, _) in cancels:
        assert time == pytest.approx(completed_at[request_id] + 0.5, abs=1e-12)
    assert all(r.state is RequestState.COMPLETED and r.settled for r in simulation.request_log)


def test_pending_joins_are_suppressed():
    scenario = make_scenario(sync_mode="delayed",
                             delays={"arrival": {"type": "exponential", "rate": 1.0}, "arrival_scope": "non-primary"})
    simulation = ClusterSimulation(scenario, 0, trace=True)
    simulation.run()
    events = trace_by_kind(simulation.trace)
    suppressed = {(p[0], p[1]) for _, p in events["clone-cancel"] if p[2] is None}
    joined = {(p[0], p[1]) for _, p in events["clone-join"]}
    assert suppressed
    assert not suppressed & joined
    assert all(server.queue_len == 0 for server in simulation.servers)


def test_single_clone_matches_plain_ps_cluster():
    scenario = make_scenario(strategy={"kind": "clone-to-all-groups", "clone_factor": 1}, requests=2000)
    simulation = ClusterSimulation(scenario, 0, keep_requests=True)
    simulation.run()
    reference = replay_without_cloning(simulation.request_log, [1.0, 1.0, 1.0])
    assert np.max(np.abs(simulation.responses - reference)) <= 1e-9


def test_cloned_group_matches_equivalent_server_request_by_request():
    scenario = make_scenario(servers=HETEROGENEOUS, arrival_rate=0.5, requests=3000)
    simulation = ClusterSimulation(scenario, 0, keep_requests=True)
    simulation.run()
    replayed = replay_on_equivalent_server(simulation.request_log, [1.0, 1.0, 1.0])
    assert np.max(np.abs(simulation.responses - replayed)) <= 1e-9


def test_bound_mode_inflates_work_by_the_delays():
    synced = ClusterSimulation(make_scenario(), 0, keep_requests=True)
    synced.run()
    bound = ClusterSimulation(make_scenario(sync_mode="bound", delays={
        "arrival": {"type": "deterministic", "value": 0.1},
        "cancellation": {"type": "deterministic", "value": 0.2}}), 0, keep_requests=True)
    bound.run()
    plain = {r.request_id: r.works for r in synced.request_log}
    for request in bound.request_log:
        expected = [w + 1.0 * (0.1 + 0.2) for w in plain[request.request_id]]
        assert request.works == pytest.approx(expected, abs=1e-12)
    assert bound.responses.mean() > synced.responses.mean()


def test_identical_correlation_shares_one_requirement():
    simulation = ClusterSimulation(make_scenario(correlation="identical"), 0, keep_requests=True)
    simulation.run()
    assert all(len(set(r.works)) == 1 for r in simulation.request_log)


def test_double_completion_is_a_programming_error():
    simulation = ClusterSimulation(make_scenario(), 0)
    request = Request(request_id=0, t_arrival=0.0, targets=[0, 1, 2], state=RequestState.COMPLETED)
    with pytest.raises(SchedulingError):
        simulation.on_clone_completion(request, 0, 1.0)


def test_replications_are_reproducible():
    scenario = make_scenario(strategy={"kind": "clone-subset", "clone_factor": 2, "chooser": "jsq"})
    first = ClusterSimulation(scenario, 2).run()
    second = ClusterSimulation(scenario, 2).run()
    other = ClusterSimulation(scenario, 3).run()
    assert np.array_equal(first.samples, second.samples)
    assert not np.array_equal(first.samples, other.samples)


def run_all_tests():
    """Run every test in this file and print a summary."""
    tests = [(name, fn) for name, fn in globals().items() if name.startswith("test_") and callable(fn)]
    print("=" * 60)
    print("🧪 CLONING DISPATCH TESTS")
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

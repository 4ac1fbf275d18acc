#!/usr/bin/env python3
"""
Event Queue and Random Stream Tests
Ordering, lazy cancellation, time checks and reproducible streams
"""

import sys
import math
import zlib
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from clonesim.services.kernel import EventKind, EventQueue, RngStream, component_code, derive_stream
from clonesim.utils.errors import SchedulingError


def test_events_come_out_by_time_then_sequence():
    queue = EventQueue()
    late = queue.schedule(2.0, EventKind.EXTERNAL_ARRIVAL, ("late",))
    first = queue.schedule(1.0, EventKind.EXTERNAL_ARRIVAL, ("first",))
    second = queue.schedule(1.0, EventKind.CLONE_JOIN, ("second",))

    order = [queue.next() for _ in range(3)]
    assert [e.payload[0] for e in order] == ["first", "second", "late"]
    assert [e.seq for e in order] == [first, second, late]
    assert queue.now == 2.0
    assert queue.next() is None


def test_cancelled_events_are_never_delivered():
    queue = EventQueue()
    keep = queue.schedule(1.0, EventKind.CLONE_COMPLETION)
    drop = queue.schedule(0.5, EventKind.CLONE_COMPLETION)

    assert queue.cancel(drop)
    assert not queue.cancel(drop)
    assert not queue.is_pending(drop)
    assert len(queue) == 1
    assert queue.peek_time() == 1.0

    event = queue.next()
    assert event.seq == keep
    assert not queue.cancel(keep)


def test_scheduling_into_the_past_fails():
    queue = EventQueue()
    queue.schedule(1.0, EventKind.EXTERNAL_ARRIVAL)
    queue.next()
    with pytest.raises(SchedulingError):
        queue.schedule(0.5, EventKind.EXTERNAL_ARRIVAL)
    with pytest.raises(SchedulingError):
        queue.schedule(math.inf, EventKind.EXTERNAL_ARRIVAL)
    with pytest.raises(SchedulingError):
        queue.schedule(math.nan, EventKind.EXTERNAL_ARRIVAL)
    # same-time scheduling is allowed
    queue.schedule(1.0, EventKind.END_OF_RUN)
    assert queue.next().kind is EventKind.END_OF_RUN


def test_same_identity_gives_the_same_stream():
    a = derive_stream(42, 3, "service", 1)
    b = derive_stream(42, 3, "service", 1)
    assert [a.random() for _ in range(100)] == [b.random() for _ in range(100)]


def test_distinct_identities_give_distinct_streams():
    base = derive_stream(42, 0, "arrivals").uniforms(50)
    for other in (derive_stream(43, 0, "arrivals"), derive_stream(42, 1, "arrivals"),
                  derive_stream(42, 0, "dispatch"), derive_stream(42, 0, "arrivals", 1)):
        assert not np.array_equal(base, other.uniforms(50))


def test_buffered_draws_match_the_generator_across_blocks():
    stream = derive_stream(7, 0, "arrivals")
    seq = np.random.SeedSequence(entropy=7, spawn_key=(0, component_code("arrivals"), 0))
    generator = np.random.Generator(np.random.PCG64(seq))
    expected = np.concatenate([generator.random(RngStream.BLOCK), generator.random(RngStream.BLOCK)])

    drawn = np.array([stream.random() for _ in range(RngStream.BLOCK + 500)])
    assert np.array_equal(drawn, expected[:RngStream.BLOCK + 500])
    assert ((drawn >= 0.0) & (drawn < 1.0)).all()


def test_uniform_draws_average_one_half():
    stream = derive_stream(42, 0, "arrivals")
    draws = np.array([stream.random() for _ in range(10_000)])
    assert abs(draws.mean() - 0.5) < 0.02
    assert abs(derive_stream(42, 1, "service").uniforms(10_000).mean() - 0.5) < 0.02


def test_component_code_is_stable():
    assert component_code("arrivals") == zlib.crc32(b"arrivals")
    assert component_code("arrivals") != component_code("dispatch")


def run_all_tests():
    """Run every test in this file and print a summary."""
    tests = [(name, fn) for name, fn in globals().items() if name.startswith("test_") and callable(fn)]
    print("=" * 60)
    print("🧪 EVENT QUEUE AND STREAM TESTS")
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

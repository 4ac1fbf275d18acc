"""Event-queue core: virtual time, deterministic event order, lazy cancellation and seeded random streams."""

import heapq
import logging
import math
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Set, Tuple

import numpy as np

from clonesim.utils.errors import SchedulingError

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    """Kinds of simulation occurrences."""
    EXTERNAL_ARRIVAL = "external-arrival"
    CLONE_JOIN = "clone-join"
    CLONE_COMPLETION = "clone-completion"
    CLONE_CANCEL = "clone-cancel"
    END_OF_RUN = "end-of-run"


@dataclass(frozen=True)
class Event:
    """A timestamped occurrence. (time, seq) is unique and totally ordered."""
    time: float
    seq: int
    kind: EventKind
    payload: Tuple = ()


class EventQueue:
    """Pending events keyed by (time, seq).

    Cancellation is lazy: a cancelled handle is dropped from the live set and its
    heap entry is discarded when it reaches the top.
    """

    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: List[Tuple[float, int, Event]] = []
        self._live: Set[int] = set()
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self._live)

    def schedule(self, time: float, kind: EventKind, payload: Tuple = ()) -> int:
        """Schedule an event and return its handle (the sequence number)."""
        if not math.isfinite(time):
            raise SchedulingError(f"cannot schedule {kind.value} at non-finite time {time}")
        if time < self.now:
            raise SchedulingError(f"cannot schedule {kind.value} at t={time!r} before now={self.now!r}")
        seq = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._heap, (time, seq, Event(time, seq, kind, payload)))
        self._live.add(seq)
        return seq

    def cancel(self, handle: int) -> bool:
        """Suppress a pending event. False if it was already delivered or cancelled."""
        if handle in self._live:
            self._live.remove(handle)
            return True
        return False

    def is_pending(self, handle: int) -> bool:
        return handle in self._live

    def next(self) -> Optional[Event]:
        """Pop the smallest live (time, seq) event and advance virtual time; None when exhausted."""
        heap = self._heap
        live = self._live
        while heap:
            time, seq, event = heapq.heappop(heap)
            if seq in live:
                live.remove(seq)
                self.now = time
                return event
        return None

    def peek_time(self) -> Optional[float]:
        while self._heap and self._heap[0][1] not in self._live:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None


class StreamIdentity(NamedTuple):
    replication: int
    component: str
    entity: int


class RngStream:
    """A reproducible uniform stream drawn from an independent PCG64 generator.

    Uniforms are produced in blocks; scalar draws are served from the block, so the
    sequence depends only on the stream identity and the master seed.
    """

    BLOCK = 4096

    __slots__ = ("identity", "generator", "_block", "_pos")

    def __init__(self, identity: StreamIdentity, generator: np.random.Generator):
        self.identity = identity
        self.generator = generator
        self._block: List[float] = []
        self._pos = 0

    def random(self) -> float:
        """Next uniform on [0, 1)."""
        if self._pos >= len(self._block):
            self._block = self.generator.random(self.BLOCK).tolist()
            self._pos = 0
        value = self._block[self._pos]
        self._pos += 1
        return value

    def uniforms(self, n: int) -> np.ndarray:
        return np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)


def component_code(label: str) -> int:
    """Stable integer code for a component label (independent of PYTHONHASHSEED)."""
    return zlib.crc32(label.encode("utf-8"))


def derive_stream(master_seed: int, replication: int, component: str, entity: int = 0) -> RngStream:
    """Build the stream for (replication, component, entity) under a master seed.

    Distinct identities map to distinct spawn keys of one SeedSequence, which numpy
    guarantees to give independent generator states.
    """
    identity = StreamIdentity(replication, component, entity)
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(replication, component_code(component), entity))
    logger.debug(f"Derived stream {identity} from seed {master_seed}")
    return RngStream(identity, np.random.Generator(np.random.PCG64(seq)))

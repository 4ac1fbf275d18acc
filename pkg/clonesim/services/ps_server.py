"""Processor-sharing server with lazy work accounting.

n residents each drain at capacity/n. Remaining work is brought up to date only at
event times (``sync_to``); every membership change cancels the provisional
completion event and schedules a new one for the earliest finisher.
"""

import logging
from typing import Dict, Hashable, Iterable, List, Optional, Tuple

import numpy as np

from clonesim.services.kernel import EventKind, EventQueue
from clonesim.utils.errors import SchedulingError

logger = logging.getLogger(__name__)

# remaining work under this is complete
WORK_EPSILON = 1e-12
# lowest remaining work a resident may show after a sync
NEGATIVE_SLACK = -1e-9

CloneId = Hashable


class ProcessorSharingServer:
    """One PS server owned by a single replication."""

    def __init__(self, server_id: int, capacity: float, queue: EventQueue, drain_factor: float = 1.0):
        if capacity <= 0:
            raise ValueError(f"server {server_id}: capacity must be positive, got {capacity}")
        self.server_id = server_id
        self.capacity = capacity
        self.queue = queue
        # drain_factor != 1 is a fault-injection hook used by the verification suite
        self.rate = capacity * drain_factor
        self.residents: Dict[CloneId, float] = {}
        self.last_update = queue.now
        self.pending_completion: Optional[int] = None

        # work-conservation audit
        self.admitted_work = 0.0
        self.drained_work = 0.0
        self.removed_work = 0.0
        self.busy_time = 0.0

    @property
    def queue_len(self) -> int:
        return len(self.residents)

    def __contains__(self, clone_id: CloneId) -> bool:
        return clone_id in self.residents

    def sync_to(self, t: float) -> None:
        """Drain every resident by (t - last_update) * rate / n."""
        if t < self.last_update:
            raise SchedulingError(f"server {self.server_id}: sync to t={t!r} before last update {self.last_update!r}")
        n = len(self.residents)
        dt = t - self.last_update
        if n and dt > 0.0:
            share = dt * self.rate / n
            residents = self.residents
            lowest = np.inf
            for clone_id in residents:
                remaining = residents[clone_id] - share
                residents[clone_id] = remaining
                if remaining < lowest:
                    lowest = remaining
            self.drained_work += share * n
            self.busy_time += dt
            if lowest < NEGATIVE_SLACK:
                raise SchedulingError(
                    f"server {self.server_id}: resident drained to {lowest:.3e} at t={t!r}; a completion was missed")
        self.last_update = t

    def admit(self, clone_id: CloneId, work: float, t: float) -> Optional[int]:
        """Add a clone with ``work`` units; returns the rescheduled completion handle."""
        if clone_id in self.residents:
            raise SchedulingError(f"server {self.server_id}: clone {clone_id} is already resident")
        if work < 0:
            raise ValueError(f"server {self.server_id}: negative work {work} for clone {clone_id}")
        self.sync_to(t)
        self.residents[clone_id] = work
        self.admitted_work += work
        return self._reschedule()

    def remove(self, clone_id: CloneId, t: float) -> float:
        """Take a clone out (cancellation or departure) and return its remaining work."""
        if clone_id not in self.residents:
            raise SchedulingError(f"server {self.server_id}: clone {clone_id} is not resident")
        self.sync_to(t)
        remaining = self.residents.pop(clone_id)
        if remaining < 0.0:
            remaining = 0.0
        self.removed_work += remaining
        self._reschedule()
        return remaining

    def finish(self, clone_id: CloneId, t: float) -> None:
        """Departure of a clone whose completion event just fired."""
        self.pending_completion = None
        remaining = self.remove(clone_id, t)
        if remaining > 1e-6 * max(1.0, self.capacity):
            raise SchedulingError(
                f"server {self.server_id}: clone {clone_id} departed at t={t!r} with {remaining:.3e} work left")

    def next_completion(self) -> Optional[Tuple[float, CloneId]]:
        """Earliest (time, clone-id) among residents; ties go to the smallest clone id."""
        if not self.residents:
            return None
        per_clone_rate = self.rate / len(self.residents)
        best_work, best_id = min(
            (remaining if remaining > WORK_EPSILON else 0.0, clone_id)
            for clone_id, remaining in self.residents.items())
        return self.last_update + best_work / per_clone_rate, best_id

    def _reschedule(self) -> Optional[int]:
        if self.pending_completion is not None:
            self.queue.cancel(self.pending_completion)
            self.pending_completion = None
        upcoming = self.next_completion()
        if upcoming is not None:
            when, clone_id = upcoming
            self.pending_completion = self.queue.schedule(
                when, EventKind.CLONE_COMPLETION, (self.server_id, clone_id))
        return self.pending_completion

    def audit_residual(self) -> float:
        """Relative violation of drained work == capacity * busy time (0 when conserving)."""
        expected = self.capacity * self.busy_time
        return abs(self.drained_work - expected) / max(expected, 1e-300) if expected > 0 else abs(self.drained_work)

    def balance_residual(self) -> float:
        """Admitted work minus everything accounted for; stays near 0."""
        return self.admitted_work - self.drained_work - self.removed_work - sum(self.residents.values())


def simulate_single_ps(arrival_times: Iterable[float], works: Iterable[float],
                       capacity: float = 1.0, drain_factor: float = 1.0) -> np.ndarray:
    """Run one PS server on explicit arrivals and work requirements; returns departure times.

    Jobs are identified by their position; simultaneous arrivals join in that order.
    """
    arrivals: List[float] = list(arrival_times)
    requirements: List[float] = list(works)
    if len(arrivals) != len(requirements):
        raise ValueError("arrival_times and works must have the same length")
    queue = EventQueue()
    server = ProcessorSharingServer(0, capacity, queue, drain_factor)
    departures = np.full(len(arrivals), np.nan)
    for job, t in enumerate(arrivals):
        queue.schedule(t, EventKind.EXTERNAL_ARRIVAL, (job,))
    while True:
        event = queue.next()
        if event is None:
            break
        if event.kind is EventKind.EXTERNAL_ARRIVAL:
            job = event.payload[0]
            server.admit(job, requirements[job], event.time)
        else:
            _, job = event.payload
            server.finish(job, event.time)
            departures[job] = event.time
    return departures

"""Request cloning: target choice, clone lifecycles and the per-replication cluster simulation.

A request arrives, its clones are placed on ``targets`` and each clone gets its own
work requirement. The first clone to finish answers the request; the others are
cancelled, immediately in synchronized service or after a cancellation delay
otherwise. A clone still waiting for a delayed join when its request completes is
never admitted.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from clonesim.models.schemas import (
    ArrivalScope, CancelScope, Chooser, Correlation, Scenario, StrategyConfig, StrategyKind, SyncMode,
)
from clonesim.services.distributions import Exponential
from clonesim.services.kernel import Event, EventKind, EventQueue, RngStream, derive_stream
from clonesim.services.ps_server import ProcessorSharingServer, simulate_single_ps
from clonesim.services.stats import ReplicationResult
from clonesim.utils.errors import SchedulingError

logger = logging.getLogger(__name__)

TraceEntry = Tuple[str, float, Tuple]


class RequestState(str, Enum):
    ACTIVE = "active"
    COMPLETED = "completed"


@dataclass
class Request:
    """One logical job and the bookkeeping of its clones (indexed by position in ``targets``)."""
    request_id: int
    t_arrival: float
    targets: List[int] = field(default_factory=list)
    works: List[float] = field(default_factory=list)
    offsets: List[float] = field(default_factory=list)
    t_first_completion: Optional[float] = None
    state: RequestState = RequestState.ACTIVE
    resident: Set[int] = field(default_factory=set)
    joins: Dict[int, int] = field(default_factory=dict)
    cancels: Dict[int, int] = field(default_factory=dict)

    @property
    def response_time(self) -> Optional[float]:
        if self.t_first_completion is None:
            return None
        return self.t_first_completion - self.t_arrival

    @property
    def settled(self) -> bool:
        return self.state is RequestState.COMPLETED and not (self.resident or self.joins or self.cancels)


def choose_targets(strategy: StrategyConfig, queue_lengths: Sequence[int], rng: RngStream) -> List[int]:
    """Servers that receive the clones of one request.

    Groups are the static blocks [g·c_f, (g+1)·c_f). Ties in JSQ are broken by one
    uniform key per candidate.
    """
    n = len(queue_lengths)
    if n == 0:
        raise ValueError("cannot place clones on an empty cluster")
    k = strategy.clone_factor
    if strategy.kind is StrategyKind.CLONE_TO_ALL_GROUPS:
        n_groups = n // k
        if n_groups == 1:
            group = 0
        elif strategy.chooser is Chooser.JSQ:
            keys = [rng.random() for _ in range(n_groups)]
            group = min(range(n_groups), key=lambda g: (sum(queue_lengths[g * k:(g + 1) * k]), keys[g]))
        else:
            group = min(int(rng.random() * n_groups), n_groups - 1)
        return list(range(group * k, (group + 1) * k))

    keys = [rng.random() for _ in range(n)]
    if strategy.chooser is Chooser.JSQ:
        ranked = sorted(range(n), key=lambda s: (queue_lengths[s], keys[s]))
    else:
        ranked = sorted(range(n), key=lambda s: keys[s])
    return ranked[:k]


class ClusterSimulation:
    """One replication of a scenario: single-threaded, owns its queue, servers and streams."""

    def __init__(self, scenario: Scenario, replication: int, *, trace: bool = False,
                 observer: Optional[Callable[["ClusterSimulation", Event], None]] = None,
                 keep_requests: bool = False, drain_factor: float = 1.0):
        scenario.check_delays()
        self.scenario = scenario
        self.replication = replication
        self.queue = EventQueue()
        self.servers = [ProcessorSharingServer(i, s.capacity, self.queue, drain_factor)
                        for i, s in enumerate(scenario.servers)]
        self.laws = [s.service for s in scenario.servers]
        self.strategy = scenario.strategy
        self.mode = scenario.sync_mode
        self.delays = scenario.delays

        seed = scenario.seed
        self.arrival_stream = derive_stream(seed, replication, "arrivals")
        self.dispatch_stream = derive_stream(seed, replication, "dispatch")
        self.service_streams = [derive_stream(seed, replication, "service", i) for i in range(len(self.servers))]
        self.arrival_delay_stream = derive_stream(seed, replication, "arrival-delay")
        self.cancel_delay_stream = derive_stream(seed, replication, "cancellation-delay")
        self.interarrival = Exponential(rate=scenario.arrival_rate * len(self.servers))

        self.responses = np.full(scenario.requests, np.nan)
        self.requests: Dict[int, Request] = {}
        self.request_log: Optional[List[Request]] = [] if keep_requests else None
        self.trace: Optional[List[TraceEntry]] = [] if trace else None
        self.observer = observer
        self.arrivals_closed = False

        self._handlers = {
            EventKind.EXTERNAL_ARRIVAL: self._on_arrival,
            EventKind.CLONE_JOIN: self._on_join,
            EventKind.CLONE_COMPLETION: self._on_completion,
            EventKind.CLONE_CANCEL: self._on_cancel,
            EventKind.END_OF_RUN: self._on_end,
        }

    # -- main loop ---------------------------------------------------------

    def run(self) -> ReplicationResult:
        self.queue.schedule(self.interarrival.sample(self.arrival_stream), EventKind.EXTERNAL_ARRIVAL, (0,))
        handlers = self._handlers
        observer = self.observer
        while True:
            event = self.queue.next()
            if event is None:
                break
            handlers[event.kind](event)
            if observer is not None:
                observer(self, event)
        self._check_drained()
        samples = self.responses[self.scenario.warmup:]
        diagnostics = {
            "end_time": self.queue.now,
            "max_audit_residual": max(s.audit_residual() for s in self.servers),
            "max_balance_residual": max(abs(s.balance_residual()) for s in self.servers),
        }
        return ReplicationResult(replication=self.replication, samples=samples,
                                 seed=self.scenario.seed, diagnostics=diagnostics)

    def _record(self, kind: EventKind, time: float, payload: Tuple) -> None:
        if self.trace is not None:
            self.trace.append((kind.value, time, payload))

    def _check_drained(self) -> None:
        leaked = [(s.server_id, list(s.residents)) for s in self.servers if s.residents]
        if leaked or self.requests:
            raise SchedulingError(f"replication {self.replication} ended with residents {leaked} "
                                  f"and {len(self.requests)} unsettled requests")
        if np.isnan(self.responses).any():
            raise SchedulingError(f"replication {self.replication}: some requests never completed")

    # -- event handlers ----------------------------------------------------

    def _on_arrival(self, event: Event) -> None:
        request_id = event.payload[0]
        request = Request(request_id=request_id, t_arrival=event.time)
        self.requests[request_id] = request
        self._record(EventKind.EXTERNAL_ARRIVAL, event.time, (request_id,))
        self.dispatch(request)
        if request_id + 1 < self.scenario.requests:
            self.queue.schedule(event.time + self.interarrival.sample(self.arrival_stream),
                                EventKind.EXTERNAL_ARRIVAL, (request_id + 1,))
        else:
            self.queue.schedule(event.time, EventKind.END_OF_RUN)

    def _on_join(self, event: Event) -> None:
        request_id, j = event.payload
        request = self.requests[request_id]
        del request.joins[j]
        self._admit(request, j, event.time)

    def _on_completion(self, event: Event) -> None:
        server_id, clone_id = event.payload
        self.servers[server_id].finish(clone_id, event.time)
        request_id, j = clone_id
        request = self.requests[request_id]
        request.resident.discard(j)
        if request.state is RequestState.COMPLETED:
            # a loser finished before its cancellation executed: no second response
            handle = request.cancels.pop(j, None)
            if handle is not None:
                self.queue.cancel(handle)
            self._record(EventKind.CLONE_COMPLETION, event.time, (request_id, j, server_id))
            self._retire_if_settled(request)
            return
        self.on_clone_completion(request, j, event.time)

    def _on_cancel(self, event: Event) -> None:
        request_id, j = event.payload
        request = self.requests[request_id]
        del request.cancels[j]
        self._remove(request, j, event.time)
        self._retire_if_settled(request)

    def _on_end(self, event: Event) -> None:
        self.arrivals_closed = True
        self._record(EventKind.END_OF_RUN, event.time, ())
        logger.debug(f"replication {self.replication}: arrivals closed at t={event.time:.3f}, "
                     f"{len(self.requests)} requests still in flight")

    # -- clone lifecycle -------------------------------------------------------

    def dispatch(self, request: Request) -> None:
        """Place the clones of a fresh request and admit or schedule their joins."""
        t = request.t_arrival
        request.targets = choose_targets(self.strategy, [s.queue_len for s in self.servers], self.dispatch_stream)
        request.works = self._draw_works(request.targets)
        n_clones = len(request.targets)

        if self.mode is SyncMode.SYNCHRONIZED:
            request.offsets = [0.0] * n_clones
            for j in range(n_clones):
                self._admit(request, j, t)
            return

        request.offsets = self._draw_arrival_delays(n_clones)
        if self.mode is SyncMode.BOUND:
            # delays become work on a synchronized system
            cancellations = [self._cancellation_delay(None) for _ in range(n_clones)] \
                if self.delays.cancel_scope is CancelScope.PER_CLONE else [self._cancellation_delay(None)] * n_clones
            for j, server_id in enumerate(request.targets):
                request.works[j] += self.servers[server_id].capacity * (request.offsets[j] + cancellations[j])
                self._admit(request, j, t)
            return

        for j, offset in enumerate(request.offsets):
            if offset > 0.0:
                request.joins[j] = self.queue.schedule(t + offset, EventKind.CLONE_JOIN, (request.request_id, j))
            else:
                self._admit(request, j, t)

    def on_clone_completion(self, request: Request, j: int, t: float) -> None:
        """First completion: record the response and cancel or suppress every other clone."""
        if request.state is RequestState.COMPLETED:
            raise SchedulingError(f"request {request.request_id} completed twice")
        request.state = RequestState.COMPLETED
        request.t_first_completion = t
        self.responses[request.request_id] = t - request.t_arrival
        self._record(EventKind.CLONE_COMPLETION, t, (request.request_id, j, request.targets[j]))

        shared_delay: Optional[float] = None
        if self.mode is SyncMode.DELAYED and self.delays.cancel_scope is CancelScope.PER_REQUEST:
            shared_delay = self._cancellation_delay(None)
        for k in range(len(request.targets)):
            if k == j:
                continue
            handle = request.joins.pop(k, None)
            if handle is not None:
                self.queue.cancel(handle)
                self._record(EventKind.CLONE_CANCEL, t, (request.request_id, k, None))
                continue
            if k not in request.resident:
                continue
            delay = 0.0 if self.mode is not SyncMode.DELAYED else self._cancellation_delay(shared_delay)
            if delay > 0.0:
                request.cancels[k] = self.queue.schedule(t + delay, EventKind.CLONE_CANCEL, (request.request_id, k))
            else:
                self._remove(request, k, t)
        self._retire_if_settled(request)

    def _admit(self, request: Request, j: int, t: float) -> None:
        server_id = request.targets[j]
        self.servers[server_id].admit((request.request_id, j), request.works[j], t)
        request.resident.add(j)
        self._record(EventKind.CLONE_JOIN, t, (request.request_id, j, server_id))

    def _remove(self, request: Request, j: int, t: float) -> None:
        server_id = request.targets[j]
        self.servers[server_id].remove((request.request_id, j), t)
        request.resident.discard(j)
        self._record(EventKind.CLONE_CANCEL, t, (request.request_id, j, server_id))

    def _retire_if_settled(self, request: Request) -> None:
        if request.settled:
            del self.requests[request.request_id]
            if self.request_log is not None:
                self.request_log.append(request)

    # -- draws -----------------------------------------------------------------

    def _draw_works(self, targets: List[int]) -> List[float]:
        if self.scenario.correlation is Correlation.IDENTICAL:
            first = targets[0]
            work = self.laws[first].sample(self.service_streams[first])
            return [work] * len(targets)
        return [self.laws[s].sample(self.service_streams[s]) for s in targets]

    def _draw_arrival_delays(self, n_clones: int) -> List[float]:
        law = self.delays.arrival
        if law is None:
            return [0.0] * n_clones
        offsets = [law.sample(self.arrival_delay_stream) for _ in range(n_clones)]
        if self.delays.arrival_scope is ArrivalScope.NON_PRIMARY:
            offsets[0] = 0.0
        return offsets

    def _cancellation_delay(self, shared: Optional[float]) -> float:
        if shared is not None:
            return shared
        law = self.delays.cancellation
        return 0.0 if law is None else law.sample(self.cancel_delay_stream)


def simulate_replication(scenario: Scenario, replication: int, drain_factor: float = 1.0) -> ReplicationResult:
    """Run one replication and return its post-warm-up response times."""
    return ClusterSimulation(scenario, replication, drain_factor=drain_factor).run()


def replay_on_equivalent_server(requests: Sequence[Request], capacities: Sequence[float]) -> np.ndarray:
    """Response times of one PS server (capacity 1) fed the same arrivals with work min_j(X_j / capacity_j).

    ``requests`` come from a synchronized clone-to-all run over a single group.
    """
    ordered = sorted(requests, key=lambda r: r.request_id)
    arrivals = [r.t_arrival for r in ordered]
    works = [min(x / capacities[s] for x, s in zip(r.works, r.targets)) for r in ordered]
    return simulate_single_ps(arrivals, works) - np.asarray(arrivals)


def replay_without_cloning(requests: Sequence[Request], capacities: Sequence[float]) -> np.ndarray:
    """Response times when every request runs alone on its single target (independent PS servers)."""
    ordered = sorted(requests, key=lambda r: r.request_id)
    responses = np.full(len(ordered), np.nan)
    for server_id, capacity in enumerate(capacities):
        mine = [i for i, r in enumerate(ordered) if r.targets[0] == server_id]
        if not mine:
            continue
        arrivals = [ordered[i].t_arrival for i in mine]
        departures = simulate_single_ps(arrivals, [ordered[i].works[0] for i in mine], capacity)
        responses[mine] = departures - np.asarray(arrivals)
    return responses

"""Analytical side: equivalent single server, PS mean response, optimal cloning factor, co-design theory.

A synchronized group of c servers that clone every request to all members behaves
like one PS server whose service time is min_j(X_j / capacity_j), fed with the
group's whole arrival stream. The mean response of an M/G/1-PS server depends on
the service law only through its mean: E[T] = E[S] / (1 - λ E[S]).
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from clonesim.models.schemas import (
    Chooser, OptimalCloning, Scenario, StrategyConfig, StrategyKind, SyncMode, TheoryEstimate, TheoryInputs,
)
from clonesim.services.distributions import BaseDistribution, min_of, scale
from clonesim.utils.config import config
from clonesim.utils.errors import UnstableSystemError

logger = logging.getLogger(__name__)


def equivalent_server(laws: Sequence[BaseDistribution], capacities: Sequence[float]) -> BaseDistribution:
    """Law of min_i(X_i / capacity_i)."""
    if not laws:
        raise ValueError("equivalent_server needs at least one server")
    if len(laws) != len(capacities):
        raise ValueError(f"{len(laws)} laws but {len(capacities)} capacities")
    return min_of([scale(law, 1.0 / capacity) for law, capacity in zip(laws, capacities)])


def ps_mean_response(law: BaseDistribution, arrival_rate: float) -> float:
    """Insensitive M/G/1-PS mean response time."""
    service_mean = law.mean()
    load = arrival_rate * service_mean
    if load >= 1.0:
        raise UnstableSystemError(load, f"PS server at arrival rate {arrival_rate:g}")
    return service_mean / (1.0 - load)


def divisors(n: int) -> List[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def _groups(inputs: TheoryInputs, clone_factor: int) -> List[Tuple[List[BaseDistribution], List[float]]]:
    if inputs.n_servers % clone_factor:
        raise ValueError(f"cloning factor {clone_factor} does not divide {inputs.n_servers}")
    return [(inputs.laws[start:start + clone_factor], inputs.capacities[start:start + clone_factor])
            for start in range(0, inputs.n_servers, clone_factor)]


def group_load(inputs: TheoryInputs, clone_factor: int) -> float:
    """Highest equivalent-server load over the static groups of size ``clone_factor``."""
    rate = clone_factor * inputs.arrival_rate
    return max(rate * equivalent_server(laws, caps).mean() for laws, caps in _groups(inputs, clone_factor))


def clone_to_all_response(inputs: TheoryInputs, clone_factor: int) -> float:
    """E[T] when requests go to a uniformly random group of ``clone_factor`` servers and clone to all of it."""
    rate = clone_factor * inputs.arrival_rate
    responses = [ps_mean_response(equivalent_server(laws, caps), rate)
                 for laws, caps in _groups(inputs, clone_factor)]
    return sum(responses) / len(responses)


def optimal_clone_factor(inputs: TheoryInputs) -> OptimalCloning:
    """Stable cloning factor with the smallest E[T]; the smallest factor wins exact ties."""
    candidates = sorted(set(inputs.candidates or divisors(inputs.n_servers)))
    table: Dict[int, Optional[float]] = {}
    for factor in candidates:
        try:
            table[factor] = clone_to_all_response(inputs, factor)
        except UnstableSystemError:
            table[factor] = None
    stable = {factor: value for factor, value in table.items() if value is not None}
    if not stable:
        lowest = min(group_load(inputs, factor) for factor in candidates)
        raise UnstableSystemError(
            lowest, f"no stable cloning factor among {candidates} at λ={inputs.arrival_rate:g} per server")
    best = min(stable, key=lambda factor: (stable[factor], factor))
    return OptimalCloning(clone_factor=best, mean_response=stable[best], candidates=table)


def codesign_theory(inputs: TheoryInputs, policy: Chooser, d: int,
                    requests: int = 20_000, replications: int = 3,
                    seed: Optional[int] = None) -> TheoryEstimate:
    """E[T] of synchronized cloning to d servers chosen by ``policy``.

    Random choice thins the Poisson stream, so every d-set behaves as an equivalent
    server with arrival rate d·λ (closed form; needs identical servers). No closed
    form is available for JSQ: the value comes from a short seeded simulation and is
    labelled as such.
    """
    if not 1 <= d <= inputs.n_servers:
        raise ValueError(f"d={d} outside 1..{inputs.n_servers}")
    if policy is Chooser.RANDOM:
        if not inputs.is_homogeneous:
            raise ValueError("the random-d closed form assumes identical servers")
        law = equivalent_server([inputs.laws[0]] * d, [inputs.capacities[0]] * d)
        return TheoryEstimate(mean_response=ps_mean_response(law, d * inputs.arrival_rate), source="closed-form")
    return _calibrated_estimate(inputs, d, requests, replications, config.SEED if seed is None else seed)


def _calibrated_estimate(inputs: TheoryInputs, d: int, requests: int, replications: int,
                         seed: int) -> TheoryEstimate:
    # runner depends on this module for load checks
    from clonesim.services.runner import run_point_replications
    from clonesim.services.stats import mean_ci

    load = d * inputs.arrival_rate * equivalent_server(inputs.laws[:d], inputs.capacities[:d]).mean()
    if load >= 1.0:
        raise UnstableSystemError(load, f"c-JSQ-{d}")
    scenario = Scenario(
        name=f"calibration-c-JSQ-{d}",
        servers=[{"capacity": c, "service": law} for law, c in zip(inputs.laws, inputs.capacities)],
        arrival_rate=inputs.arrival_rate,
        strategy=StrategyConfig(kind=StrategyKind.CLONE_SUBSET, clone_factor=d, chooser=Chooser.JSQ),
        requests=requests, replications=max(replications, 2), seed=seed)
    results = run_point_replications(scenario)
    summary = mean_ci([r.mean for r in results])
    logger.info(f"c-JSQ-{d} at λ={inputs.arrival_rate:g}: simulated E[T]={summary.estimate:.4f} ± {summary.half_width:.4f}")
    return TheoryEstimate(mean_response=summary.estimate, source="simulation", half_width=summary.half_width)


def optimal_codesign(inputs: TheoryInputs, policy: Chooser, **calibration) -> Tuple[int, TheoryEstimate]:
    """Best d in 1..N for the policy; unstable choices are skipped."""
    best: Optional[Tuple[int, TheoryEstimate]] = None
    for d in range(1, inputs.n_servers + 1):
        try:
            estimate = codesign_theory(inputs, policy, d, **calibration)
        except UnstableSystemError:
            continue
        if best is None or estimate.mean_response < best[1].mean_response:
            best = (d, estimate)
    if best is None:
        raise UnstableSystemError(inputs.arrival_rate * inputs.laws[0].mean(),
                                  f"no stable d for {policy.value} at λ={inputs.arrival_rate:g}")
    return best


def effective_load(scenario: Scenario) -> float:
    """Highest per-server load estimate k·λ·(E[min work] + delay work) over the cluster.

    Clone-to-all groups take the busiest static group. Clone subsets take, for every
    server, k clones of its own law, which is exact for k = 1 and for identical servers.
    Delayed clones linger for the cancellation delay; the bound mode also carries the
    arrival delay as work.
    """
    k = scenario.strategy.clone_factor
    servers = scenario.servers
    if scenario.strategy.kind is StrategyKind.CLONE_TO_ALL_GROUPS:
        groups = [servers[start:start + k] for start in range(0, len(servers), k)]
    else:
        groups = [[server] * k for server in servers]
    base = max(equivalent_server([s.service for s in group], [s.capacity for s in group]).mean()
               for group in groups)
    extra = 0.0
    if scenario.sync_mode is not SyncMode.SYNCHRONIZED:
        if scenario.delays.cancellation is not None:
            extra += scenario.delays.cancellation.mean()
        if scenario.sync_mode is SyncMode.BOUND and scenario.delays.arrival is not None:
            extra += scenario.delays.arrival.mean()
    return k * scenario.arrival_rate * (base + extra)


def clone_to_all_sweep(inputs: TheoryInputs, arrival_rates: Sequence[float]) -> pd.DataFrame:
    """Optimal cloning factor and E[T] over a λ grid; unstable rates are left out."""
    rows = []
    for rate in arrival_rates:
        try:
            best = optimal_clone_factor(inputs.model_copy(update={"arrival_rate": rate}))
        except UnstableSystemError as exc:
            logger.warning(f"λ={rate:g}: {exc}; point skipped")
            continue
        rows.append({"arrival_rate": rate, "clone_factor": best.clone_factor, "mean_response": best.mean_response})
    if not rows:
        raise UnstableSystemError(min(arrival_rates) * min(law.mean() for law in inputs.laws),
                                  "every arrival rate in the sweep is unstable")
    return pd.DataFrame(rows)

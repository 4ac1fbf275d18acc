"""Desk-scale acceptance suite.

Each criterion returns (passed, detail); an exception inside a criterion is a failure,
never a crash of the suite. ``drain_factor`` scales the effective drain rate of every
simulated server so the suite can be run against a deliberately broken PS model.
"""

import filecmp
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from clonesim.models.schemas import (
    CiSummary, CriterionResult, Scenario, TheoryInputs, VerificationReport,
)
from clonesim.services.dispatch import ClusterSimulation, replay_on_equivalent_server
from clonesim.services.distributions import (
    Deterministic, Exponential, HyperExponential, MinOf, Pareto, Uniform, Weibull, min_of, scale,
)
from clonesim.services.kernel import derive_stream
from clonesim.services.ps_server import simulate_single_ps
from clonesim.services.runner import (
    TIMING_NAME, expand_points, load_scenario, run, run_point_replications, with_overrides,
)
from clonesim.services.stats import dkw_bound, ks_distance, mean_ci, normalize, sync_error
from clonesim.services.theory import clone_to_all_response, equivalent_server, optimal_clone_factor
from clonesim.utils.config import config

logger = logging.getLogger(__name__)

CheckOutcome = Tuple[bool, str]

# (arrivals, works, capacity, expected departures)
HAND_TRACES = [
    ([0.0, 1.0], [2.0, 2.0], 1.0, [3.0, 4.0]),
    ([0.0], [3.0], 2.0, [1.5]),
    ([0.0, 0.0], [1.0, 2.0], 1.0, [2.0, 3.0]),
    ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 1.0, [3.0, 3.0, 3.0]),
    ([0.0, 1.0, 2.0], [4.0, 1.0, 1.0], 1.0, [6.0, 3.5, 4.5]),
    ([0.0, 5.0], [1.0, 1.0], 1.0, [1.0, 6.0]),
    ([0.0, 0.5], [0.0, 1.0], 1.0, [0.0, 1.5]),
]

GG1_SERVERS = [
    {"service": {"type": "exponential", "rate": 1.0}},
    {"service": {"type": "hyperexponential", "weights": [0.9, 0.1], "rates": [1.8, 0.18]}},
    {"service": {"type": "uniform", "low": 0.0, "high": 2.0}},
]
HYPEREXP = {"type": "hyperexponential", "weights": [0.9, 0.1], "rates": [1.8, 0.18]}


@dataclass
class SuiteScale:
    """Run lengths for one verification mode."""
    mm1_requests: int
    mm1_replications: int
    mm1_relative_half_width: float
    equivalence_requests: int
    equivalence_replications: int
    equivalence_ks: float
    coupled_requests: int
    trend_requests: int
    trend_replications: int
    trend_rates: List[float]
    ordering_requests: int
    ordering_replications: int
    delay_requests: int
    delay_replications: int
    delay_ratios: List[float]
    consistency_requests: int
    consistency_replications: int
    consistency_utilizations: List[float]
    distribution_samples: int


FULL_SCALE = SuiteScale(
    mm1_requests=100_000, mm1_replications=10, mm1_relative_half_width=0.02,
    equivalence_requests=100_000, equivalence_replications=5, equivalence_ks=0.02,
    coupled_requests=20_000,
    trend_requests=20_000, trend_replications=10, trend_rates=[0.1, 0.3, 0.5, 0.65],
    ordering_requests=20_000, ordering_replications=5,
    delay_requests=20_000, delay_replications=5, delay_ratios=[0.0, 0.01, 0.05, 0.1, 0.4, 0.8],
    consistency_requests=20_000, consistency_replications=5, consistency_utilizations=[0.1, 0.5, 0.9],
    distribution_samples=100_000,
)

QUICK_SCALE = SuiteScale(
    mm1_requests=20_000, mm1_replications=5, mm1_relative_half_width=0.06,
    equivalence_requests=20_000, equivalence_replications=3, equivalence_ks=0.05,
    coupled_requests=5_000,
    trend_requests=5_000, trend_replications=4, trend_rates=[0.1, 0.5],
    ordering_requests=5_000, ordering_replications=3,
    delay_requests=5_000, delay_replications=3, delay_ratios=[0.0, 0.01, 0.1, 0.8],
    consistency_requests=5_000, consistency_replications=3, consistency_utilizations=[0.1, 0.5],
    distribution_samples=20_000,
)

# CI slack added to the ordering checks on top of the CI half widths
ORDERING_SLACK = 0.02


def _ci(results) -> CiSummary:
    return mean_ci([r.mean for r in results])


class VerificationSuite:
    """Runs every acceptance criterion and collects a VerificationReport."""

    def __init__(self, quick: bool = False, seed: Optional[int] = None, drain_factor: float = 1.0):
        self.quick = quick
        self.seed = config.SEED if seed is None else seed
        self.drain_factor = drain_factor
        self.scale = QUICK_SCALE if quick else FULL_SCALE

    @property
    def criteria(self) -> List[Tuple[str, Callable[[], CheckOutcome]]]:
        return [
            ("ps-hand-traces", self.check_hand_traces),
            ("mm1-ps-mean", self.check_mm1),
            ("ps-insensitivity", self.check_insensitivity),
            ("equivalent-server", self.check_equivalence),
            ("clone-to-all-trend", self.check_clone_to_all_trend),
            ("jsq-vs-random", self.check_jsq_ordering),
            ("delay-limits", self.check_delay_limits),
            ("sync-vs-nonsync", self.check_sync_consistency),
            ("determinism", self.check_determinism),
            ("distributions", self.check_distributions),
        ]

    def run(self, only: Optional[Sequence[str]] = None) -> VerificationReport:
        results = []
        for name, check in self.criteria:
            if only and name not in only:
                continue
            started = time.perf_counter()
            try:
                passed, detail = check()
            except Exception as e:
                passed, detail = False, f"{type(e).__name__}: {e}"
            seconds = time.perf_counter() - started
            log = logger.info if passed else logger.error
            log(f"{'PASS' if passed else 'FAIL'} {name} ({seconds:.1f}s): {detail}")
            results.append(CriterionResult(name=name, passed=passed, detail=detail, seconds=seconds))
        return VerificationReport(passed=all(r.passed for r in results), seed=self.seed, quick=self.quick,
                                  drain_factor=self.drain_factor, criteria=results,
                                  timestamp=datetime.now(timezone.utc))

    # -- helpers ---------------------------------------------------------

    def _scenario(self, **fields) -> Scenario:
        data = {"name": "verify", "seed": self.seed, "warmup_fraction": 0.1}
        data.update(fields)
        return Scenario.model_validate(data)

    def _replicate(self, scenario: Scenario):
        return run_point_replications(scenario, drain_factor=self.drain_factor)

    def _sweep(self, scenario: Scenario) -> Dict[Tuple, CiSummary]:
        """CI per expanded point, keyed by its label values (system excluded)."""
        out = {}
        for point in expand_points(scenario):
            key = tuple(v for k, v in point.labels.items() if k != "system")
            out[key] = (point, self._replicate(point.scenario))
        return out

    # -- criteria ----------------------------------------------------------

    def check_hand_traces(self) -> CheckOutcome:
        worst = 0.0
        for arrivals, works, capacity, expected in HAND_TRACES:
            departures = simulate_single_ps(arrivals, works, capacity, self.drain_factor)
            worst = max(worst, float(np.max(np.abs(departures - np.asarray(expected)))))
        return worst <= 1e-9, f"{len(HAND_TRACES)} traces, worst departure error {worst:.3e}"

    def _mm1(self, law: dict) -> CheckOutcome:
        s = self.scale
        scenario = self._scenario(cluster={"size": 1, "service": law}, arrival_rate=0.5,
                                  strategy={"kind": "clone-to-all-groups", "clone_factor": 1},
                                  requests=s.mm1_requests, replications=s.mm1_replications)
        ci = _ci(self._replicate(scenario))
        relative = ci.half_width / ci.estimate
        passed = ci.contains(2.0) and relative < s.mm1_relative_half_width
        return passed, f"E[T] = {ci.estimate:.4f} ± {ci.half_width:.4f} (target 2.0, relative half width {relative:.4f})"

    def check_mm1(self) -> CheckOutcome:
        return self._mm1({"type": "exponential", "rate": 1.0})

    def check_insensitivity(self) -> CheckOutcome:
        return self._mm1({"type": "deterministic", "value": 1.0})

    def check_equivalence(self) -> CheckOutcome:
        s = self.scale
        cluster = self._scenario(servers=GG1_SERVERS, arrival_rate=0.5,
                                 strategy={"kind": "clone-to-all-groups", "clone_factor": 3},
                                 requests=s.equivalence_requests, replications=s.equivalence_replications)
        law = equivalent_server([srv.service for srv in cluster.servers], [srv.capacity for srv in cluster.servers])
        single = self._scenario(servers=[{"service": law.model_dump(mode="json")}], arrival_rate=1.5,
                                strategy={"kind": "clone-to-all-groups", "clone_factor": 1},
                                requests=s.equivalence_requests, replications=s.equivalence_replications)
        cluster_samples = np.concatenate([r.samples for r in self._replicate(cluster)])
        single_samples = np.concatenate([r.samples for r in self._replicate(single)])
        ks = ks_distance(cluster_samples, single_samples)

        coupled = with_overrides(cluster, requests=s.coupled_requests, replications=1)
        simulation = ClusterSimulation(coupled, 0, keep_requests=True, drain_factor=self.drain_factor)
        simulation.run()
        replayed = replay_on_equivalent_server(simulation.request_log, [srv.capacity for srv in coupled.servers])
        gap = float(np.max(np.abs(simulation.responses - replayed)))

        passed = ks < s.equivalence_ks and gap <= 1e-9
        return passed, f"KS {ks:.5f} (limit {s.equivalence_ks}), coupled per-request gap {gap:.3e}"

    def check_clone_to_all_trend(self) -> CheckOutcome:
        s = self.scale
        law = HyperExponential.model_validate(HYPEREXP)
        grid = [round(0.05 * i, 2) for i in range(1, 14)]
        choices = [optimal_clone_factor(TheoryInputs.homogeneous(12, rate, law)).clone_factor for rate in grid]
        monotone = all(b <= a for a, b in zip(choices, choices[1:]))

        misses = []
        for rate in s.trend_rates:
            inputs = TheoryInputs.homogeneous(12, rate, law)
            best = optimal_clone_factor(inputs)
            scenario = self._scenario(cluster={"size": 12, "service": HYPEREXP}, arrival_rate=rate,
                                      strategy={"kind": "clone-to-all-groups", "clone_factor": best.clone_factor},
                                      requests=s.trend_requests, replications=s.trend_replications)
            ci = mean_ci([r.mean for r in self._replicate(scenario)], level=0.99)
            if not ci.contains(clone_to_all_response(inputs, best.clone_factor)):
                misses.append(f"λ={rate:g}: sim {ci.estimate:.4f} ± {ci.half_width:.4f} vs theory {best.mean_response:.4f}")
        detail = f"c_f^opt over λ: {choices}"
        if misses:
            detail += "; " + "; ".join(misses)
        return monotone and not misses, detail

    def check_jsq_ordering(self) -> CheckOutcome:
        s = self.scale
        scenario = self._scenario(
            cluster={"size": 6, "service": {"type": "exponential", "rate": 1.0}}, arrival_rate=0.3,
            strategy={"kind": "clone-subset", "clone_factor": 2},
            requests=s.ordering_requests, replications=s.ordering_replications,
            sweep={"arrival_rates": [0.3, 0.5, 0.7], "policies": ["jsq", "random"]})
        cis = {key: _ci(results) for key, (_, results) in self._sweep(scenario).items()}
        problems, parts = [], []
        for rate in (0.3, 0.5, 0.7):
            jsq = cis[(rate, 2, "jsq", "synchronized")]
            rnd = cis[(rate, 2, "random", "synchronized")]
            parts.append(f"λ={rate:g}: JSQ {jsq.estimate:.3f} R {rnd.estimate:.3f}")
            if jsq.estimate > rnd.estimate:
                problems.append(f"λ={rate:g} JSQ above random")
            if rate >= 0.5 and not (jsq.lower <= rnd.lower and jsq.upper <= rnd.upper):
                problems.append(f"λ={rate:g} CIs not ordered")
        return not problems, "; ".join(parts + problems)

    def check_delay_limits(self) -> CheckOutcome:
        s = self.scale
        problems, parts = [], []
        for target in ("arrival", "cancellation", "combined"):
            scenario = self._scenario(
                cluster={"size": 6, "service": HYPEREXP}, arrival_rate=0.2,
                strategy={"kind": "clone-to-all-groups", "clone_factor": 3},
                requests=s.delay_requests, replications=s.delay_replications,
                sweep={"sync_modes": ["synchronized", "delayed", "bound"],
                       "delay_ratios": s.delay_ratios, "delay_target": target})
            points = self._sweep(scenario)
            base = _ci(points[(0.2, 3, "random", "synchronized")][1])
            delayed = normalize([_ci(points[(0.2, 3, "random", "delayed", r)][1]) for r in s.delay_ratios],
                                [base] * len(s.delay_ratios))
            bound = normalize([_ci(points[(0.2, 3, "random", "bound", r)][1]) for r in s.delay_ratios],
                              [base] * len(s.delay_ratios))
            parts.append(f"{target}: " + ", ".join(f"{r:g}→{ci.estimate:.3f}" for r, ci in zip(s.delay_ratios, delayed)))
            if s.delay_ratios[0] == 0.0 and abs(delayed[0].estimate - 1.0) > 1e-12:
                problems.append(f"{target}: zero delays differ from synchronized ({delayed[0].estimate!r})")
            smallest = delayed[1] if s.delay_ratios[0] == 0.0 else delayed[0]
            if abs(smallest.estimate - 1.0) > smallest.half_width + ORDERING_SLACK:
                problems.append(f"{target}: smallest delay gives {smallest.estimate:.4f}, not ≈ 1")
            for r, ci in zip(s.delay_ratios, delayed):
                if ci.estimate < 1.0 - ci.half_width - ORDERING_SLACK:
                    problems.append(f"{target}: ratio {r:g} below the no-delay baseline")
            for (r0, a), (r1, b) in zip(zip(s.delay_ratios, delayed), zip(s.delay_ratios[1:], delayed[1:])):
                if b.estimate < a.estimate - a.half_width - b.half_width - ORDERING_SLACK:
                    problems.append(f"{target}: E[T] drops between ratios {r0:g} and {r1:g}")
            for r, d, u in zip(s.delay_ratios, delayed, bound):
                if u.estimate < d.estimate - d.half_width - u.half_width - ORDERING_SLACK:
                    problems.append(f"{target}: upper bound below the delayed series at ratio {r:g}")
        return not problems, "; ".join(parts + problems)

    def check_sync_consistency(self) -> CheckOutcome:
        s = self.scale
        problems, parts = [], []
        scenario = self._scenario(
            cluster={"size": 6, "service": {"type": "exponential", "rate": 1.0}}, arrival_rate=0.1,
            strategy={"kind": "clone-subset", "clone_factor": 2}, sync_mode="delayed",
            delays={"arrival": {"type": "exponential", "rate": 1000.0},
                    "cancellation": {"type": "exponential", "rate": 500.0}},
            requests=s.consistency_requests, replications=s.consistency_replications,
            sweep={"utilizations": s.consistency_utilizations, "policies": ["random", "jsq"],
                   "sync_modes": ["synchronized", "delayed"]})
        points = self._sweep(scenario)
        for rho in s.consistency_utilizations:
            for policy in ("random", "jsq"):
                synced = points[(rho, rho, 2, policy, "synchronized")][1]
                delayed = points[(rho, rho, 2, policy, "delayed")][1]
                epsilon = sync_error([r.mean for r in delayed], [r.mean for r in synced])
                ratio = normalize([_ci(delayed)], [_ci(synced)])[0]
                parts.append(f"ρ={rho:g} {policy}: ε {epsilon.estimate:.4f}, ratio {ratio.estimate:.4f}")
                if epsilon.estimate < 0 or not math.isfinite(epsilon.half_width):
                    problems.append(f"ρ={rho:g} {policy}: invalid ε")
                if rho <= 0.1 and ratio.estimate > 1.0 + ratio.half_width + ORDERING_SLACK:
                    problems.append(f"ρ={rho:g} {policy}: delayed E[T] well above synchronized")
        return not problems, "; ".join(parts + problems)

    def check_determinism(self) -> CheckOutcome:
        scenario = with_overrides(load_scenario("sim_gg1_3dist"), seed=self.seed, requests=2000, replications=2)
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / "jobs1", Path(tmp) / "jobs2"
            run(scenario, jobs=1, out=first)
            run(scenario, jobs=2, out=second)
            files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file() and p.name != TIMING_NAME)
            different = [str(p) for p in files if not filecmp.cmp(first / p, second / p, shallow=False)]
        return not different, f"{len(files)} files compared, {len(different)} differ {different[:3]}"

    def check_distributions(self) -> CheckOutcome:
        n = self.scale.distribution_samples
        bound = dkw_bound(n, alpha=1e-3)
        laws = {
            "exponential": Exponential(rate=2.0),
            "uniform": Uniform(low=0.5, high=2.0),
            "hyperexponential": HyperExponential.model_validate(HYPEREXP),
            "pareto": Pareto(shape=2.5, scale=1.5),
            "weibull": Weibull(shape=0.7, scale=1.0),
            "scaled-pareto": scale(Pareto(shape=3.0, scale=1.0), 0.5),
            "min": min_of([Exponential(rate=1.0), Uniform(low=0.0, high=2.0), HyperExponential.model_validate(HYPEREXP)]),
        }
        problems, parts = [], []
        for index, (name, law) in enumerate(laws.items()):
            rng = derive_stream(self.seed, 0, "distribution-suite", index)
            draws = np.array([law.sample(rng) for _ in range(n)])
            ks = ks_distance(draws, law.cdf)
            parts.append(f"{name} KS {ks:.4f}")
            if ks >= bound:
                problems.append(f"{name}: KS {ks:.4f} >= {bound:.4f}")

        identities = {
            "exp-min": (min_of([Exponential(rate=1.0), Exponential(rate=2.0)]).mean(), 1.0 / 3.0),
            "identity": (min_of([Pareto(shape=3.0, scale=2.0)]).mean(), 1.0),
            "deterministic-min": (MinOf(components=(Deterministic(value=2.0), Deterministic(value=0.5))).mean(), 0.5),
            "scaled-exp": (scale(Exponential(rate=2.0), 0.5).mean(), 0.25),
        }
        for name, (value, expected) in identities.items():
            if abs(value - expected) > 1e-12:
                problems.append(f"{name}: {value!r} != {expected!r}")
        parts.append(f"{len(identities)} closed-form identities checked")
        return not problems, f"DKW bound {bound:.4f}; " + "; ".join(parts + problems)


def verify(quick: bool = False, seed: Optional[int] = None, drain_factor: float = 1.0,
           only: Optional[Sequence[str]] = None) -> VerificationReport:
    return VerificationSuite(quick=quick, seed=seed, drain_factor=drain_factor).run(only)

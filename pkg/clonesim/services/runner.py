"""Scenario loading, sweep expansion, the replication worker pool and run persistence."""

import concurrent.futures
import hashlib
import itertools
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

import clonesim
from clonesim.models.schemas import (
    DelayConfig, DelayTarget, PointRecord, ReplicationSidecar, RunManifest, RunTiming, Scenario, ScenarioPoint,
    StrategyKind, SweepConfig, SyncMode,
)
from clonesim.services.dispatch import simulate_replication
from clonesim.services.distributions import Deterministic, Exponential
from clonesim.services.stats import ReplicationResult, mean_ci
from clonesim.services.theory import effective_load, equivalent_server
from clonesim.utils.config import config
from clonesim.utils.errors import ScenarioError, UnstableSystemError

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[2]
MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"
SUMMARY_NAME = "summary.csv"

_SLUG_KEYS = {
    "system": "",
    "arrival_rate": "l",
    "utilization": "rho",
    "clone_factor": "k",
    "policy": "",
    "sync_mode": "",
    "delay_ratio": "r",
}

Labels = Dict[str, Union[float, int, str]]


# === SCENARIO FILES ===

def resolve_scenario_path(reference: Union[str, Path]) -> Path:
    """A path to a JSON file, or the name of a preset."""
    path = Path(reference)
    if path.is_file():
        return path
    name = path.name if path.suffix == ".json" else f"{path.name}.json"
    for directory in (Path(config.PRESETS_DIR), PROJECT_ROOT / "presets"):
        candidate = directory / name
        if candidate.is_file():
            return candidate
    raise ScenarioError(f"no scenario file or preset named '{reference}'")


def load_scenario(reference: Union[str, Path]) -> Scenario:
    path = resolve_scenario_path(reference)
    logger.info(f"Loading scenario from {path}")
    with open(path, "r", encoding="utf-8") as f:
        return Scenario.model_validate(json.load(f))


def with_overrides(scenario: Scenario, **overrides) -> Scenario:
    """Re-validated copy with the non-None overrides applied."""
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return scenario
    data = scenario.model_dump(mode="json")
    data.update(updates)
    return Scenario.model_validate(data)


def scenario_hash(scenario: Scenario) -> str:
    return hashlib.sha256(scenario.model_dump_json().encode("utf-8")).hexdigest()


# === SWEEP EXPANSION ===

def _service_time_mean(scenario: Scenario) -> float:
    server = scenario.servers[0]
    return server.service.mean() / server.capacity


def _delay_config(base: DelayConfig, target: DelayTarget, ratio: float, service_mean: float) -> DelayConfig:
    """Exponential delays with mean ratio·E[X]; combined splits the ratio between a and c."""
    share = ratio / 2.0 if target is DelayTarget.COMBINED else ratio
    law = Deterministic(value=0.0) if share == 0 else Exponential(rate=1.0 / (share * service_mean))
    return base.model_copy(update={
        "arrival": law if target in (DelayTarget.ARRIVAL, DelayTarget.COMBINED) else None,
        "cancellation": law if target in (DelayTarget.CANCELLATION, DelayTarget.COMBINED) else None,
    })


def _slug(labels: Labels) -> str:
    parts = []
    for key, value in labels.items():
        text = f"{value:g}" if isinstance(value, float) else str(value)
        parts.append(f"{_SLUG_KEYS.get(key, key)}{text}")
    return "-".join(parts)


def _point_scenario(scenario: Scenario, **updates) -> Scenario:
    data = scenario.model_dump(mode="json")
    data.update(updates)
    data["sweep"] = None
    return Scenario.model_validate(data)


def _cluster_points(scenario: Scenario, sweep: SweepConfig) -> List[Tuple[Labels, Scenario]]:
    service_mean = _service_time_mean(scenario)
    if sweep.arrival_rates:
        rate_axis = [("arrival_rate", rate, rate) for rate in sweep.arrival_rates]
    elif sweep.utilizations:
        rate_axis = [("utilization", rho, rho / service_mean) for rho in sweep.utilizations]
    else:
        rate_axis = [(None, None, scenario.arrival_rate)]
    factors = sweep.clone_factors or [scenario.strategy.clone_factor]
    policies = sweep.policies or [scenario.strategy.chooser]
    modes = sweep.sync_modes or [scenario.sync_mode]
    ratios: List[Optional[float]] = list(sweep.delay_ratios) or [None]

    points: List[Tuple[Labels, Scenario]] = []
    seen = set()
    for (rate_key, rate_value, rate), factor, policy, mode, ratio in itertools.product(
            rate_axis, factors, policies, modes, ratios):
        if mode is SyncMode.SYNCHRONIZED:
            ratio = None
        labels: Labels = {"system": "cluster", "arrival_rate": float(rate)}
        if rate_key == "utilization":
            labels["utilization"] = float(rate_value)
        labels.update({"clone_factor": int(factor), "policy": policy.value, "sync_mode": mode.value})
        if ratio is not None:
            labels["delay_ratio"] = float(ratio)
        key = tuple(labels.items())
        if key in seen:
            continue
        seen.add(key)

        if mode is SyncMode.SYNCHRONIZED:
            delays = DelayConfig(arrival_scope=scenario.delays.arrival_scope, cancel_scope=scenario.delays.cancel_scope)
        elif ratio is not None:
            delays = _delay_config(scenario.delays, sweep.delay_target, ratio, service_mean)
        else:
            delays = scenario.delays
        strategy = scenario.strategy.model_copy(update={"clone_factor": int(factor), "chooser": policy})
        points.append((labels, _point_scenario(
            scenario, arrival_rate=float(rate), strategy=strategy.model_dump(mode="json"),
            sync_mode=mode.value, delays=delays.model_dump(mode="json"))))
    return points


def _equivalent_points(scenario: Scenario, cluster: List[Tuple[Labels, Scenario]]) -> List[Tuple[Labels, Scenario]]:
    """One single-server point per (λ, c_f) of the cluster points: group 0 collapsed into its equivalent server."""
    points = []
    seen = set()
    for labels, point in cluster:
        if point.strategy.kind is not StrategyKind.CLONE_TO_ALL_GROUPS:
            raise ScenarioError("the equivalent single server is defined for clone-to-all groups only")
        k = point.strategy.clone_factor
        key = (labels["arrival_rate"], k)
        if key in seen:
            continue
        seen.add(key)
        group = point.servers[:k]
        law = equivalent_server([s.service for s in group], [s.capacity for s in group])
        eq_labels: Labels = {"system": "equivalent", "arrival_rate": labels["arrival_rate"], "clone_factor": k}
        points.append((eq_labels, _point_scenario(
            scenario,
            servers=[{"capacity": 1.0, "service": law.model_dump(mode="json")}],
            arrival_rate=k * point.arrival_rate,
            strategy={"kind": StrategyKind.CLONE_TO_ALL_GROUPS.value, "clone_factor": 1},
            sync_mode=SyncMode.SYNCHRONIZED.value,
            delays=DelayConfig().model_dump(mode="json"))))
    return points


def expand_points(scenario: Scenario, allow_unstable: bool = False) -> List[ScenarioPoint]:
    """Scenario points in a fixed order; every point keeps the master seed (common random numbers)."""
    sweep = scenario.sweep or SweepConfig()
    candidates = _cluster_points(scenario, sweep)
    if sweep.equivalent:
        candidates += _equivalent_points(scenario, candidates)

    points: List[ScenarioPoint] = []
    for labels, point in candidates:
        point.check_delays()
        load = effective_load(point)
        if load >= 1.0:
            if sweep.skip_unstable:
                logger.warning(f"{scenario.name}: skipping unstable point {_slug(labels)} (load {load:.3f})")
                continue
            if not allow_unstable:
                raise UnstableSystemError(load, f"{scenario.name}: point {_slug(labels)}")
            logger.warning(f"{scenario.name}: running unstable point {_slug(labels)} (load {load:.3f})")
        points.append(ScenarioPoint(point_id=f"p{len(points):03d}-{_slug(labels)}", labels=labels,
                                    scenario=point, expected_load=load))
    if not points:
        raise UnstableSystemError(1.0, f"{scenario.name}: every sweep point is unstable")
    return points


# === REPLICATIONS ===

def _replication_task(task: Tuple[str, Scenario, int, float]) -> Tuple[str, int, np.ndarray, float, Dict[str, float]]:
    point_id, scenario, replication, drain_factor = task
    started = time.perf_counter()
    result = simulate_replication(scenario, replication, drain_factor)
    seconds = time.perf_counter() - started
    logger.debug(f"{point_id} rep {replication}: {result.count} samples, mean {result.mean:.5f}, {seconds:.2f}s")
    return point_id, replication, result.samples, seconds, result.diagnostics


def _execute(tasks: List[Tuple[str, Scenario, int, float]], jobs: int) -> Iterable:
    if jobs <= 1 or len(tasks) <= 1:
        return map(_replication_task, tasks)
    with concurrent.futures.ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as executor:
        # map yields in submission order whatever the completion order
        return list(executor.map(_replication_task, tasks))


def run_point_replications(scenario: Scenario, drain_factor: float = 1.0, jobs: int = 1) -> List[ReplicationResult]:
    """All replications of one fully specified scenario, in replication order."""
    scenario.check_delays()
    tasks = [("inline", scenario, r, drain_factor) for r in range(scenario.replications)]
    return [ReplicationResult(replication=rep, samples=samples, seed=scenario.seed, diagnostics=diagnostics)
            for _, rep, samples, _, diagnostics in _execute(tasks, jobs)]


# === PERSISTENCE ===

def _sample_paths(point_id: str, replication: int) -> Tuple[str, str]:
    stem = f"samples/{point_id}/rep-{replication:03d}"
    return f"{stem}.f64", f"{stem}.txt"


def write_samples(run_dir: Path, point_id: str, replication: int, samples: np.ndarray, seed: int) -> Tuple[str, str]:
    """Flat little-endian float64 file plus a key=value sidecar; returns both paths relative to ``run_dir``."""
    data_rel, sidecar_rel = _sample_paths(point_id, replication)
    data_path = run_dir / data_rel
    data_path.parent.mkdir(parents=True, exist_ok=True)
    np.asarray(samples, dtype="<f8").tofile(data_path)
    sidecar = ReplicationSidecar(point_id=point_id, replication=replication, count=int(samples.size),
                                 mean=float(samples.mean()), seed=seed)
    lines = [f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}"
             for key, value in sidecar.model_dump(mode="json").items()]
    lines.append(f"streams=seed {seed} / replication {replication}")
    (run_dir / sidecar_rel).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return data_rel, sidecar_rel


def read_samples(run_dir: Path, relative: str) -> np.ndarray:
    return np.fromfile(Path(run_dir) / relative, dtype="<f8")


def summarize(points: List[ScenarioPoint], means: Dict[str, List[float]]) -> pd.DataFrame:
    rows = []
    for point in points:
        values = means[point.point_id]
        row = {"point_id": point.point_id, **point.labels, "expected_load": point.expected_load,
               "mean": float(np.mean(values)), "replications": len(values)}
        row["half_width"] = mean_ci(values).half_width if len(values) >= 2 else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def default_run_dir(scenario: Scenario) -> Path:
    if scenario.output_dir:
        return Path(scenario.output_dir)
    return Path(config.OUTPUT_DIR) / scenario.name


def run(reference: Union[str, Path, Scenario], jobs: Optional[int] = None, seed: Optional[int] = None,
        requests: Optional[int] = None, replications: Optional[int] = None, out: Optional[Union[str, Path]] = None,
        allow_unstable: bool = False) -> RunManifest:
    """Expand, simulate every (point, replication) and persist samples, manifest, timing and summary."""
    scenario = reference if isinstance(reference, Scenario) else load_scenario(reference)
    scenario = with_overrides(scenario, seed=seed, requests=requests, replications=replications)
    jobs = max(1, jobs if jobs is not None else config.JOBS)
    run_dir = Path(out) if out is not None else default_run_dir(scenario)
    run_dir.mkdir(parents=True, exist_ok=True)

    points = expand_points(scenario, allow_unstable=allow_unstable)
    tasks = [(point.point_id, point.scenario, r, 1.0) for point in points for r in range(scenario.replications)]
    logger.info(f"Running {scenario.name}: {len(points)} points x {scenario.replications} replications "
                f"of {scenario.requests} requests on {jobs} worker(s)")

    started_at = datetime.now(timezone.utc)
    clock = time.perf_counter()
    files: Dict[str, Dict[int, Tuple[str, str]]] = {point.point_id: {} for point in points}
    means: Dict[str, List[float]] = {point.point_id: [] for point in points}
    point_seconds: Dict[str, float] = {point.point_id: 0.0 for point in points}
    for point_id, rep, samples, seconds, _ in _execute(tasks, jobs):
        files[point_id][rep] = write_samples(run_dir, point_id, rep, samples, scenario.seed)
        means[point_id].append(float(samples.mean()))
        point_seconds[point_id] += seconds
    for point in points:
        logger.info(f"{point.point_id}: mean response {np.mean(means[point.point_id]):.5f}")

    manifest = RunManifest(
        scenario_name=scenario.name,
        scenario_hash=scenario_hash(scenario),
        seed=scenario.seed,
        tool_version=clonesim.__version__,
        figure=scenario.figure,
        replications=scenario.replications,
        requests=scenario.requests,
        scenario=scenario,
        points=[PointRecord(point_id=point.point_id, labels=point.labels, expected_load=point.expected_load,
                            sample_files=[files[point.point_id][r][0] for r in range(scenario.replications)],
                            sidecar_files=[files[point.point_id][r][1] for r in range(scenario.replications)])
                for point in points],
    )
    (run_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    summarize(points, means).to_csv(run_dir / SUMMARY_NAME, index=False)

    timing = RunTiming(started_at=started_at, finished_at=datetime.now(timezone.utc),
                       wall_seconds=time.perf_counter() - clock, jobs=jobs, point_seconds=point_seconds)
    (run_dir / TIMING_NAME).write_text(timing.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Run written to {run_dir} ({timing.wall_seconds:.1f}s)")
    return manifest


def load_manifest(path: Union[str, Path]) -> Tuple[RunManifest, Path]:
    """Parse a manifest (file or run directory) and return it with its run directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    manifest = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    return manifest, path.parent

"""Plot-data emitters: ECDF CSVs, four-column error-bar files and CI-band polygons.

Analysis only reads the flat sample files listed in a run manifest; nothing is re-simulated.

File formats:
  * ECDF / curve CSVs: header ``x,y``, comma separated.
  * Error-bar TXT: four whitespace-separated columns x, xerr, y, yerr, no header.
  * Band CSVs: header ``x,y``, x ascending along the lower bound then descending along the upper bound.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from clonesim.models.schemas import (
    Chooser, CiSummary, FigureKind, PointRecord, RunManifest, Scenario, StrategyKind, SyncMode, TheoryInputs,
)
from clonesim.services.runner import default_run_dir, load_manifest, load_scenario, read_samples
from clonesim.services.stats import ci_band_polygon, ecdf, ks_distance, mean_ci, normalize, sync_error, thin_ecdf
from clonesim.services.theory import clone_to_all_sweep, codesign_theory, optimal_clone_factor, optimal_codesign
from clonesim.utils.config import config
from clonesim.utils.errors import AnalysisError, UnstableSystemError

logger = logging.getLogger(__name__)

FIGURE_DIRS = {
    FigureKind.GG1: "gg1-example",
    FigureKind.CLONE_TO_ALL: "clone-to-all",
    FigureKind.CODESIGN: "co-design",
    FigureKind.ARRIVAL_DELAYS: "randomized-delays",
    FigureKind.CANCELLATION_DELAYS: "randomized-delays",
    FigureKind.COMBINED_DELAYS: "randomized-delays",
    FigureKind.SYNC_VS_NONSYNC: "randomized-sync-vs-nonsync",
}

POLICY_FILE_NAMES = {Chooser.JSQ: "SQF", Chooser.RANDOM: "Random"}

DEFAULT_THEORY_RATES = [round(0.05 * i, 2) for i in range(1, 14)]

THEORY_SOURCE_TAGS = {"closed-form": "theory", "simulation": "calibrated"}

JSQ_CALIBRATION_REQUESTS = 5_000
JSQ_CALIBRATION_REPLICATIONS = 2

FLOAT_FORMAT = "%.10g"


# === WRITERS AND READERS ===

def write_xy_csv(path: Path, x: Sequence[float], y: Sequence[float]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"x": list(x), "y": list(y)}).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path}")
    return path


def write_ecdf_csv(path: Path, samples: np.ndarray, max_points: Optional[int] = None) -> Path:
    points = thin_ecdf(ecdf(samples), max_points or config.ECDF_POINTS)
    return write_xy_csv(path, [t for t, _ in points], [p for _, p in points])


def write_errorbar_txt(path: Path, rows: Sequence[Tuple[float, float, float, float]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=["x", "xerr", "y", "yerr"])
    frame.to_csv(path, sep=" ", header=False, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path}")
    return path


def write_band_csv(path: Path, x: Sequence[float], series: Sequence[CiSummary]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    ci_band_polygon(x, series).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path}")
    return path


def read_xy_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)


def read_errorbar_txt(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, sep=r"\s+", header=None, names=["x", "xerr", "y", "yerr"])


# === RUN DATA ===

class RunData:
    """Sample access and per-point replication statistics for one run."""

    def __init__(self, manifest: RunManifest, run_dir: Path):
        self.manifest = manifest
        self.run_dir = Path(run_dir)
        self._means: Dict[str, List[float]] = {}

    def select(self, **labels) -> List[PointRecord]:
        return [p for p in self.manifest.points if all(p.labels.get(k) == v for k, v in labels.items())]

    def one(self, **labels) -> PointRecord:
        matches = self.select(**labels)
        if len(matches) != 1:
            raise AnalysisError(f"expected one point with {labels}, found {len(matches)}")
        return matches[0]

    def samples(self, point: PointRecord) -> List[np.ndarray]:
        arrays = []
        for relative in point.sample_files:
            if not (self.run_dir / relative).is_file():
                raise AnalysisError(f"missing replication file {self.run_dir / relative}")
            arrays.append(read_samples(self.run_dir, relative))
        return arrays

    def pooled(self, point: PointRecord) -> np.ndarray:
        return np.concatenate(self.samples(point))

    def means(self, point: PointRecord) -> List[float]:
        if point.point_id not in self._means:
            self._means[point.point_id] = [float(a.mean()) for a in self.samples(point)]
        return self._means[point.point_id]

    def ci(self, point: PointRecord) -> CiSummary:
        values = self.means(point)
        if len(values) < 2:
            return CiSummary(estimate=values[0], half_width=0.0, replications=1)
        return mean_ci(values)


def _groups(points: Sequence[PointRecord], keys: Sequence[str]) -> Dict[Tuple, List[PointRecord]]:
    grouped: Dict[Tuple, List[PointRecord]] = {}
    for point in points:
        grouped.setdefault(tuple(point.labels.get(k) for k in keys), []).append(point)
    return grouped


def _suffix(keys: Sequence[str], group: Tuple, n_groups: int) -> str:
    if n_groups <= 1:
        return ""
    return "-" + "-".join(f"{k}{v:g}" if isinstance(v, float) else f"{k}{v}" for k, v in zip(keys, group))


# === FIGURES ===

class FigureAnalyzer:
    """Turns a completed run into the data files of one figure family."""

    def __init__(self, data: RunData, out_dir: Optional[Path] = None):
        self.data = data
        self.out_root = Path(out_dir) if out_dir is not None else data.run_dir / "data"

    def emit(self, figure: FigureKind) -> List[Path]:
        handlers = {
            FigureKind.GG1: self.gg1,
            FigureKind.CLONE_TO_ALL: self.clone_to_all,
            FigureKind.CODESIGN: self.codesign,
            FigureKind.ARRIVAL_DELAYS: lambda d: self.delays(d, "arrival"),
            FigureKind.CANCELLATION_DELAYS: lambda d: self.delays(d, "cancellation"),
            FigureKind.COMBINED_DELAYS: lambda d: self.delays(d, "combined"),
            FigureKind.SYNC_VS_NONSYNC: self.sync_vs_nonsync,
        }
        return handlers[figure](self.out_root / FIGURE_DIRS[figure])

    def gg1(self, out: Path) -> List[Path]:
        """ECDF of the cloned cluster against its equivalent single server."""
        cluster = self.data.select(system="cluster")
        equivalent = self.data.select(system="equivalent")
        if not cluster or not equivalent:
            raise AnalysisError("the gg1 figure needs cluster and equivalent points (sweep.equivalent = true)")
        written = []
        for point in cluster:
            twin = self.data.one(system="equivalent", arrival_rate=point.labels["arrival_rate"],
                                 clone_factor=point.labels["clone_factor"])
            suffix = "" if len(cluster) == 1 else f"-{point.point_id}"
            cluster_samples = self.data.pooled(point)
            twin_samples = self.data.pooled(twin)
            written.append(write_ecdf_csv(out / f"3dist-ps{suffix}.csv", cluster_samples))
            written.append(write_ecdf_csv(out / f"equivalent-ps{suffix}.csv", twin_samples))
            logger.info(f"{point.point_id}: KS distance to the equivalent server "
                        f"{ks_distance(cluster_samples, twin_samples):.5f}")
        return written

    def clone_to_all(self, out: Path) -> List[Path]:
        """Theory optimum vs simulated mean per λ, plus the simulated optimum band."""
        points = self.data.select(system="cluster", sync_mode=SyncMode.SYNCHRONIZED.value)
        by_rate = _groups(points, ["arrival_rate"])
        factors = sorted({int(p.labels["clone_factor"]) for p in points})
        scenario = self.data.manifest.scenario
        rows = []
        for (rate,), group in sorted(by_rate.items()):
            inputs = TheoryInputs.from_scenario(scenario, rate).model_copy(update={"candidates": factors})
            try:
                best = optimal_clone_factor(inputs)
            except UnstableSystemError as exc:
                logger.warning(f"λ={rate:g}: {exc}; left out of the clone-to-all figure")
                continue
            cis = {int(p.labels["clone_factor"]): self.data.ci(p) for p in group}
            if best.clone_factor not in cis:
                raise AnalysisError(f"λ={rate:g}: no simulated point for the optimal cloning factor {best.clone_factor}")
            sim_best = min(cis, key=lambda k: (cis[k].estimate, k))
            plausible = [k for k, ci in cis.items() if ci.lower <= cis[sim_best].upper]
            rows.append({
                "arrival_rate": rate,
                "theory_clone_factor": best.clone_factor,
                "theory_mean": best.mean_response,
                "sim_mean": cis[best.clone_factor].estimate,
                "sim_half_width": cis[best.clone_factor].half_width,
                "sim_clone_factor": sim_best,
                "plausible_low": min(plausible),
                "plausible_high": max(plausible),
                "replications": cis[best.clone_factor].replications,
            })
        if not rows:
            raise AnalysisError("no stable arrival rate in the clone-to-all run")
        table = pd.DataFrame(rows)
        x = table["arrival_rate"].tolist()
        opt_bands = [CiSummary(estimate=r.sim_mean, half_width=r.sim_half_width, replications=r.replications)
                     for r in table.itertuples()]
        clone_bands = [CiSummary(estimate=(r.plausible_low + r.plausible_high) / 2.0,
                                 half_width=(r.plausible_high - r.plausible_low) / 2.0, replications=r.replications)
                       for r in table.itertuples()]
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "clone-to-all-summary.csv", index=False, float_format=FLOAT_FORMAT)
        return [
            write_xy_csv(out / "meanRTs-ps.csv", x, table["theory_mean"]),
            write_xy_csv(out / "optclones-ps.csv", x, table["theory_clone_factor"]),
            write_band_csv(out / "optmean-confint.csv", x, opt_bands),
            write_band_csv(out / "optclone-confint.csv", x, clone_bands),
            out / "clone-to-all-summary.csv",
        ]

    def codesign(self, out: Path) -> List[Path]:
        """Per policy and λ, the d with the smallest simulated mean, as horizontal segments."""
        half = config.SEGMENT_HALF_WIDTH
        points = self.data.select(system="cluster", sync_mode=SyncMode.SYNCHRONIZED.value)
        written = []
        for policy in (Chooser.JSQ, Chooser.RANDOM):
            mine = [p for p in points if p.labels.get("policy") == policy.value]
            if not mine:
                continue
            rt_x, rt_y, clone_y = [], [], []
            for (rate,), group in sorted(_groups(mine, ["arrival_rate"]).items()):
                cis = {int(p.labels["clone_factor"]): self.data.ci(p) for p in group}
                d = min(cis, key=lambda k: (cis[k].estimate, k))
                rt_x += [rate - half, rate + half]
                rt_y += [cis[d].estimate] * 2
                clone_y += [d, d]
            stem = f"cluster{POLICY_FILE_NAMES[policy]}-PS"
            written.append(write_xy_csv(out / f"{stem}-RT.csv", rt_x, rt_y))
            written.append(write_xy_csv(out / f"{stem}-clone.csv", rt_x, clone_y))
        if not written:
            raise AnalysisError("no synchronized clone-subset points in the co-design run")
        return written

    def delays(self, out: Path, target: str) -> List[Path]:
        """Delayed and upper-bound E[T], normalized by the synchronized baseline, against the delay ratio."""
        keys = ["arrival_rate", "clone_factor", "policy"]
        grouped = _groups(self.data.select(system="cluster"), keys)
        written = []
        for group, members in sorted(grouped.items()):
            baseline = [p for p in members if p.labels["sync_mode"] == SyncMode.SYNCHRONIZED.value]
            if len(baseline) != 1:
                raise AnalysisError(f"group {group}: need exactly one synchronized baseline, found {len(baseline)}")
            base_ci = self.data.ci(baseline[0])
            suffix = _suffix(["l", "k", ""], group, len(grouped))
            for mode, tag in ((SyncMode.DELAYED, "resp"), (SyncMode.BOUND, "bound")):
                series = sorted((p for p in members if p.labels["sync_mode"] == mode.value),
                                key=lambda p: p.labels["delay_ratio"])
                if not series:
                    continue
                cis = normalize([self.data.ci(p) for p in series], [base_ci] * len(series))
                rows = [(p.labels["delay_ratio"], 0.0, ci.estimate, ci.half_width) for p, ci in zip(series, cis)]
                written.append(write_errorbar_txt(
                    out / f"randomized_{target}_delays_confint_{tag}{suffix}.txt", rows))
        if not written:
            raise AnalysisError(f"no delayed or bound points for the {target}-delay figure")
        return written

    def sync_vs_nonsync(self, out: Path) -> List[Path]:
        """E[ε] and E[T] of a-ℓ-d normalized by c-ℓ-d, against utilization."""
        scenario = self.data.manifest.scenario
        service_mean = scenario.servers[0].service.mean() / scenario.servers[0].capacity
        grouped = _groups(self.data.select(system="cluster"), ["policy", "clone_factor"])
        written = []
        for (policy, d), members in sorted(grouped.items()):
            by_rate = _groups(members, ["arrival_rate"])
            error_rows, mean_rows = [], []
            for (rate,), pair in sorted(by_rate.items()):
                modes = {p.labels["sync_mode"]: p for p in pair}
                if SyncMode.SYNCHRONIZED.value not in modes or SyncMode.DELAYED.value not in modes:
                    raise AnalysisError(f"{policy} d={d} λ={rate:g}: need a synchronized and a delayed point")
                synced, delayed = modes[SyncMode.SYNCHRONIZED.value], modes[SyncMode.DELAYED.value]
                x = delayed.labels.get("utilization", rate * service_mean)
                epsilon = sync_error(self.data.means(delayed), self.data.means(synced))
                ratio = normalize([self.data.ci(delayed)], [self.data.ci(synced)])[0]
                error_rows.append((x, 0.0, epsilon.estimate, epsilon.half_width))
                mean_rows.append((x, 0.0, ratio.estimate, ratio.half_width))
            name = "sqf" if policy == Chooser.JSQ.value else "random"
            suffix = "" if len({k[1] for k in grouped}) == 1 else f"-d{d}"
            written.append(write_errorbar_txt(out / f"randomized_{name}_clone_confint{suffix}.txt", error_rows))
            written.append(write_errorbar_txt(out / f"randomized_{name}_mean_confint{suffix}.txt", mean_rows))
        if not written:
            raise AnalysisError("no points in the sync-vs-nonsync run")
        return written


def analyze(manifest_path: Union[str, Path], figure: Optional[Union[FigureKind, str]] = None,
            out_dir: Optional[Union[str, Path]] = None) -> List[Path]:
    """Emit the plot data of ``figure`` (default: the scenario's own figure) for a completed run."""
    manifest, run_dir = load_manifest(manifest_path)
    kind = FigureKind(figure) if figure is not None else manifest.figure
    if kind is None:
        raise AnalysisError(f"{manifest.scenario_name}: no figure kind given and none recorded in the scenario")
    logger.info(f"Analyzing {manifest.scenario_name} as {kind.value}")
    return FigureAnalyzer(RunData(manifest, run_dir), out_dir).emit(kind)


# === THEORY EMITTER ===

def theory(reference: Union[str, Path, Scenario], out_dir: Optional[Union[str, Path]] = None,
           jsq_requests: int = JSQ_CALIBRATION_REQUESTS,
           jsq_replications: int = JSQ_CALIBRATION_REPLICATIONS) -> List[Path]:
    """Analytical curves for a scenario over its λ sweep (default 0.05..0.65).

    Clone-subset scenarios get the optimum d and its E[T] per policy. The JSQ series
    has no closed form: it comes from short seeded simulations and its files say so.
    """
    scenario = reference if isinstance(reference, Scenario) else load_scenario(reference)
    rates = (scenario.sweep.arrival_rates if scenario.sweep and scenario.sweep.arrival_rates
             else DEFAULT_THEORY_RATES)
    root = Path(out_dir) if out_dir is not None else default_run_dir(scenario) / "data"
    inputs = TheoryInputs.from_scenario(scenario)

    if scenario.strategy.kind is StrategyKind.CLONE_SUBSET:
        out = root / FIGURE_DIRS[FigureKind.CODESIGN]
        policies = (scenario.sweep.policies if scenario.sweep and scenario.sweep.policies
                    else [scenario.strategy.chooser])
        written = []
        if Chooser.RANDOM in policies:
            written.append(_codesign_theory_table(inputs, rates, out))
        for policy in sorted(set(policies), key=lambda p: p.value):
            calibration = ({"requests": jsq_requests, "replications": jsq_replications, "seed": scenario.seed}
                           if policy is Chooser.JSQ else {})
            written += _codesign_optimum_curves(inputs, rates, policy, out, calibration)
        return written

    if scenario.sweep and scenario.sweep.clone_factors:
        inputs = inputs.model_copy(update={"candidates": sorted(scenario.sweep.clone_factors)})
    table = clone_to_all_sweep(inputs, rates)
    out = root / FIGURE_DIRS[FigureKind.CLONE_TO_ALL]
    return [
        write_xy_csv(out / "optclones-ps.csv", table["arrival_rate"], table["clone_factor"]),
        write_xy_csv(out / "meanRTs-ps.csv", table["arrival_rate"], table["mean_response"]),
    ]


def _codesign_optimum_curves(inputs: TheoryInputs, rates: Sequence[float], policy: Chooser, out: Path,
                             calibration: Dict[str, int]) -> List[Path]:
    """Optimum d and its E[T] against λ for one policy; unstable rates are left out."""
    rows = []
    for rate in rates:
        try:
            d, estimate = optimal_codesign(inputs.model_copy(update={"arrival_rate": rate}), policy, **calibration)
        except UnstableSystemError as exc:
            logger.warning(f"{policy.value} at λ={rate:g}: {exc}; point skipped")
            continue
        rows.append((rate, d, estimate))
    if not rows:
        raise UnstableSystemError(1.0, f"every arrival rate of the {policy.value} co-design sweep is unstable")
    source = rows[0][2].source
    stem = f"cluster{POLICY_FILE_NAMES[policy]}-PS-{THEORY_SOURCE_TAGS[source]}"
    x = [rate for rate, _, _ in rows]
    return [
        write_xy_csv(out / f"{stem}-clone.csv", x, [d for _, d, _ in rows]),
        write_xy_csv(out / f"{stem}-RT.csv", x, [estimate.mean_response for _, _, estimate in rows]),
    ]


def _codesign_theory_table(inputs: TheoryInputs, rates: Sequence[float], out: Path) -> Path:
    """Closed-form c-R-d mean response for every stable (λ, d)."""
    if not inputs.is_homogeneous:
        raise AnalysisError("the c-R-d closed form needs identical servers")
    rows = []
    for rate in rates:
        at_rate = inputs.model_copy(update={"arrival_rate": rate})
        for d in range(1, inputs.n_servers + 1):
            try:
                estimate = codesign_theory(at_rate, Chooser.RANDOM, d)
            except UnstableSystemError:
                continue
            rows.append({"arrival_rate": rate, "d": d, "mean_response": estimate.mean_response})
    if not rows:
        raise UnstableSystemError(1.0, "every (λ, d) pair of the co-design sweep is unstable")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "clusterRandom-PS-theory.csv"
    pd.DataFrame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path}")
    return path

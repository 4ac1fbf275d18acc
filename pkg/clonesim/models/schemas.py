"""Pydantic models for scenarios, run manifests and reports."""

from datetime import datetime
from enum import Enum
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from clonesim.services.distributions import BaseDistribution, Distribution
from clonesim.utils.config import config
from clonesim.utils.errors import ScenarioError


class StrategyKind(str, Enum):
    """Clone placement strategies."""
    CLONE_TO_ALL_GROUPS = "clone-to-all-groups"
    CLONE_SUBSET = "clone-subset"


class Chooser(str, Enum):
    """How servers (or groups) are picked."""
    RANDOM = "random"
    JSQ = "jsq"


class SyncMode(str, Enum):
    """Clone lifecycle."""
    SYNCHRONIZED = "synchronized"
    DELAYED = "delayed"
    BOUND = "bound"


class ArrivalScope(str, Enum):
    ALL_CLONES = "all-clones"
    NON_PRIMARY = "non-primary"


class CancelScope(str, Enum):
    PER_CLONE = "per-clone"
    PER_REQUEST = "per-request"


class Correlation(str, Enum):
    INDEPENDENT = "independent"
    IDENTICAL = "identical"


class DelayTarget(str, Enum):
    ARRIVAL = "arrival"
    CANCELLATION = "cancellation"
    COMBINED = "combined"


class FigureKind(str, Enum):
    """Plot-data families emitted by ``analyze``."""
    GG1 = "gg1"
    CLONE_TO_ALL = "clone-to-all"
    CODESIGN = "codesign"
    ARRIVAL_DELAYS = "arrival-delays"
    CANCELLATION_DELAYS = "cancellation-delays"
    COMBINED_DELAYS = "combined-delays"
    SYNC_VS_NONSYNC = "sync-vs-nonsync"


class ServerConfig(BaseModel):
    """One PS server."""
    model_config = ConfigDict(frozen=True)

    capacity: float = Field(default=1.0, gt=0, description="Work units per second")
    service: Distribution = Field(..., description="Service requirement law (work units)")


class StrategyConfig(BaseModel):
    """Placement of the clones of one request."""
    model_config = ConfigDict(frozen=True)

    kind: StrategyKind
    clone_factor: int = Field(default=1, ge=1, description="c_f for groups, d for subsets")
    chooser: Chooser = Field(default=Chooser.RANDOM, description="Group or server chooser")

    def label(self, sync_mode: "SyncMode" = None) -> str:
        """Policy name in the c-l-d / a-l-d notation."""
        policy = "JSQ" if self.chooser is Chooser.JSQ else "R"
        prefix = "a" if sync_mode is SyncMode.DELAYED else "c"
        return f"{prefix}-{policy}-{self.clone_factor}"

    def check_cluster(self, n_servers: int) -> None:
        if self.kind is StrategyKind.CLONE_TO_ALL_GROUPS and n_servers % self.clone_factor:
            raise ScenarioError(f"cloning factor {self.clone_factor} does not divide cluster size {n_servers}")
        if self.clone_factor > n_servers:
            raise ScenarioError(f"clone count {self.clone_factor} exceeds cluster size {n_servers}")


class DelayConfig(BaseModel):
    """Arrival (a) and cancellation (c) delay laws; both absent means synchronized service."""
    model_config = ConfigDict(frozen=True)

    arrival: Optional[Distribution] = None
    cancellation: Optional[Distribution] = None
    arrival_scope: ArrivalScope = ArrivalScope.ALL_CLONES
    cancel_scope: CancelScope = CancelScope.PER_CLONE

    @property
    def is_empty(self) -> bool:
        return self.arrival is None and self.cancellation is None


class ClusterShorthand(BaseModel):
    """N identical servers."""
    size: int = Field(..., ge=1)
    capacity: float = Field(default=1.0, gt=0)
    service: Distribution


class SweepConfig(BaseModel):
    """Axes expanded, in field order, into scenario points."""
    arrival_rates: List[float] = Field(default_factory=list)
    utilizations: List[float] = Field(default_factory=list)
    clone_factors: List[int] = Field(default_factory=list)
    policies: List[Chooser] = Field(default_factory=list)
    sync_modes: List[SyncMode] = Field(default_factory=list)
    delay_ratios: List[float] = Field(default_factory=list)
    delay_target: DelayTarget = DelayTarget.ARRIVAL
    equivalent: bool = Field(default=False, description="Add the equivalent single-server point")
    skip_unstable: bool = Field(default=False, description="Drop unstable points instead of refusing the run")

    @model_validator(mode="after")
    def _check_axes(self):
        if self.arrival_rates and self.utilizations:
            raise ValueError("sweep over arrival_rates or utilizations, not both")
        if any(v <= 0 for v in self.arrival_rates + self.utilizations):
            raise ValueError("swept rates and utilizations must be positive")
        if any(v < 0 for v in self.delay_ratios):
            raise ValueError("delay ratios must be nonnegative")
        if any(v < 1 for v in self.clone_factors):
            raise ValueError("clone factors must be >= 1")
        return self


class Scenario(BaseModel):
    """A complete experiment description."""

    name: str = Field(..., min_length=1)
    description: str = ""
    figure: Optional[FigureKind] = Field(default=None, description="Default analysis for this scenario")
    servers: List[ServerConfig] = Field(..., min_length=1)
    arrival_rate: float = Field(..., gt=0, description="Poisson arrival rate per server (1/s)")
    strategy: StrategyConfig
    sync_mode: SyncMode = SyncMode.SYNCHRONIZED
    delays: DelayConfig = Field(default_factory=DelayConfig)
    correlation: Correlation = Correlation.INDEPENDENT
    requests: int = Field(default=100_000, ge=1, description="Requests per replication")
    warmup_fraction: float = Field(default=0.1, ge=0, lt=1)
    replications: int = Field(default=5, ge=1)
    seed: int = Field(default_factory=lambda: config.SEED, ge=0)
    output_dir: Optional[str] = None
    sweep: Optional[SweepConfig] = None

    @model_validator(mode="before")
    @classmethod
    def _expand_cluster(cls, data):
        if isinstance(data, dict) and "cluster" in data:
            data = dict(data)
            cluster = ClusterShorthand.model_validate(data.pop("cluster"))
            if "servers" in data:
                raise ValueError("give either 'cluster' or 'servers'")
            data["servers"] = [{"capacity": cluster.capacity, "service": cluster.service}] * cluster.size
        return data

    @model_validator(mode="after")
    def _check_strategy(self):
        self.strategy.check_cluster(self.n_servers)
        if self.sweep is not None:
            for factor in self.sweep.clone_factors:
                self.strategy.model_copy(update={"clone_factor": factor}).check_cluster(self.n_servers)
        return self

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def warmup(self) -> int:
        return int(self.warmup_fraction * self.requests)

    def check_delays(self) -> None:
        """Synchronized service has no delay laws; the other modes need at least one."""
        if self.sync_mode is SyncMode.SYNCHRONIZED and not self.delays.is_empty:
            raise ScenarioError(f"{self.name}: synchronized mode cannot carry delay laws")
        if self.sync_mode is not SyncMode.SYNCHRONIZED and self.delays.is_empty:
            raise ScenarioError(f"{self.name}: {self.sync_mode.value} mode needs an arrival or cancellation delay law")


class ScenarioPoint(BaseModel):
    """One fully specified configuration produced by sweep expansion."""
    point_id: str
    labels: Dict[str, Union[float, int, str]] = Field(default_factory=dict)
    scenario: Scenario
    expected_load: float = Field(..., description="Load estimate used for the stability check")


class PointRecord(BaseModel):
    point_id: str
    labels: Dict[str, Union[float, int, str]]
    expected_load: float
    sample_files: List[str]
    sidecar_files: List[str]


class RunManifest(BaseModel):
    """Everything needed to analyze a run without re-simulating."""
    scenario_name: str
    scenario_hash: str
    seed: int
    tool_version: str
    figure: Optional[FigureKind] = None
    replications: int
    requests: int
    scenario: Scenario
    points: List[PointRecord]


class RunTiming(BaseModel):
    started_at: datetime
    finished_at: datetime
    wall_seconds: float
    jobs: int
    point_seconds: Dict[str, float]


class ReplicationSidecar(BaseModel):
    """Text sidecar written next to each flat sample file."""
    point_id: str
    replication: int
    count: int
    mean: float
    seed: int
    dtype: Literal["<f8"] = "<f8"


class CiSummary(BaseModel):
    """Replication-mean confidence interval."""
    model_config = ConfigDict(frozen=True)

    estimate: float
    half_width: float = Field(..., ge=0)
    replications: int = Field(..., ge=1)
    level: float = 0.95

    @property
    def lower(self) -> float:
        return self.estimate - self.half_width

    @property
    def upper(self) -> float:
        return self.estimate + self.half_width

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


class TheoryInputs(BaseModel):
    """Cluster description for the analytical side."""
    n_servers: int = Field(..., ge=1)
    arrival_rate: float = Field(..., gt=0, description="Arrival rate per server (1/s)")
    laws: List[Distribution] = Field(..., min_length=1)
    capacities: List[float] = Field(..., min_length=1)
    candidates: Optional[List[int]] = Field(default=None, description="Cloning factors to consider (default: divisors of N)")

    @model_validator(mode="after")
    def _check_lengths(self):
        if len(self.laws) != self.n_servers or len(self.capacities) != self.n_servers:
            raise ValueError("laws and capacities need one entry per server")
        if any(c <= 0 for c in self.capacities):
            raise ValueError("capacities must be positive")
        return self

    @classmethod
    def homogeneous(cls, n_servers: int, arrival_rate: float, law: BaseDistribution,
                    capacity: float = 1.0, candidates: Optional[List[int]] = None) -> "TheoryInputs":
        return cls(n_servers=n_servers, arrival_rate=arrival_rate, laws=[law] * n_servers,
                   capacities=[capacity] * n_servers, candidates=candidates)

    @classmethod
    def from_scenario(cls, scenario: Scenario, arrival_rate: Optional[float] = None) -> "TheoryInputs":
        return cls(n_servers=scenario.n_servers,
                   arrival_rate=arrival_rate if arrival_rate is not None else scenario.arrival_rate,
                   laws=[s.service for s in scenario.servers],
                   capacities=[s.capacity for s in scenario.servers])

    @property
    def is_homogeneous(self) -> bool:
        return all(law == self.laws[0] for law in self.laws) and len(set(self.capacities)) == 1


class TheoryEstimate(BaseModel):
    """A theory value and where it came from."""
    mean_response: float
    source: Literal["closed-form", "simulation"]
    half_width: Optional[float] = None


class OptimalCloning(BaseModel):
    clone_factor: int
    mean_response: float
    candidates: Dict[int, Optional[float]] = Field(..., description="E[T] per candidate, None when unstable")


class CriterionResult(BaseModel):
    name: str
    passed: bool
    detail: str
    seconds: float


class VerificationReport(BaseModel):
    passed: bool
    seed: int
    quick: bool
    drain_factor: float
    criteria: List[CriterionResult]
    timestamp: datetime

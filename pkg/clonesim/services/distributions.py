"""Parametric nonnegative distributions for service times and delays.

Every law is an immutable pydantic record tagged by ``type``, so scenario files can
spell them as ``{"type": "exponential", "rate": 1.0}``. Sampling is by inverse
transform on the caller's RngStream; ``cdf`` accepts scalars or numpy arrays.

Pareto uses the Lomax (shifted-to-origin) convention: support starts at 0 and
``cdf(t) = 1 - (1 + t/scale) ** -shape``.
"""

import logging
import math
from typing import Annotated, Callable, List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator
from scipy import integrate

from clonesim.services.kernel import RngStream
from clonesim.utils.errors import InfiniteMeanError

logger = logging.getLogger(__name__)

SURVIVAL_HORIZON = 1e-9
_QUAD_OPTIONS = {"limit": 500, "epsabs": 1e-13, "epsrel": 1e-10}


def _evaluate(t, fn: Callable[[np.ndarray], np.ndarray]):
    arr = np.asarray(t, dtype=np.float64)
    out = fn(arr)
    return float(out) if arr.ndim == 0 else out


class BaseDistribution(BaseModel):
    """Common interface of all laws."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    def sample(self, rng: RngStream) -> float:
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def survival(self, t):
        return _evaluate(t, lambda arr: 1.0 - np.asarray(self.cdf(arr)))

    def mean(self) -> float:
        raise NotImplementedError

    def upper_bound(self) -> float:
        """Supremum of the support."""
        return math.inf

    def tail_index(self) -> float:
        """Power-law exponent of the survival function (inf for lighter tails)."""
        return math.inf

    def breakpoints(self) -> List[float]:
        """Atoms and kinks of the cdf, handed to quadrature as hints."""
        return []


class Deterministic(BaseDistribution):
    type: Literal["deterministic"] = "deterministic"
    value: float = Field(..., ge=0, description="Constant value")

    def sample(self, rng: RngStream) -> float:
        return self.value

    def cdf(self, t):
        return _evaluate(t, lambda arr: (arr >= self.value).astype(np.float64))

    def mean(self) -> float:
        return self.value

    def upper_bound(self) -> float:
        return self.value

    def breakpoints(self) -> List[float]:
        return [self.value]


class Exponential(BaseDistribution):
    type: Literal["exponential"] = "exponential"
    rate: float = Field(..., gt=0, description="Rate (1/s)")

    def sample(self, rng: RngStream) -> float:
        return -math.log1p(-rng.random()) / self.rate

    def cdf(self, t):
        return _evaluate(t, lambda arr: -np.expm1(-self.rate * np.maximum(arr, 0.0)))

    def mean(self) -> float:
        return 1.0 / self.rate


class Uniform(BaseDistribution):
    type: Literal["uniform"] = "uniform"
    low: float = Field(..., ge=0)
    high: float = Field(..., gt=0)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.high <= self.low:
            raise ValueError(f"uniform needs low < high, got [{self.low}, {self.high}]")
        return self

    def sample(self, rng: RngStream) -> float:
        return self.low + (self.high - self.low) * rng.random()

    def cdf(self, t):
        width = self.high - self.low
        return _evaluate(t, lambda arr: np.clip((arr - self.low) / width, 0.0, 1.0))

    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def upper_bound(self) -> float:
        return self.high

    def breakpoints(self) -> List[float]:
        return [self.low, self.high]


class HyperExponential(BaseDistribution):
    """Probabilistic mixture of exponential phases."""

    type: Literal["hyperexponential"] = "hyperexponential"
    weights: Tuple[float, ...]
    rates: Tuple[float, ...]

    @field_validator("weights", "rates")
    @classmethod
    def _positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if not values or any(v <= 0 for v in values):
            raise ValueError("hyperexponential parameters must be nonempty and positive")
        return values

    @model_validator(mode="after")
    def _check_mixture(self):
        if len(self.weights) != len(self.rates):
            raise ValueError("weights and rates must have the same length")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")
        return self

    def sample(self, rng: RngStream) -> float:
        u = rng.random()
        phase = len(self.weights) - 1
        acc = 0.0
        for i, w in enumerate(self.weights):
            acc += w
            if u < acc:
                phase = i
                break
        return -math.log1p(-rng.random()) / self.rates[phase]

    def cdf(self, t):
        def fn(arr):
            arr = np.maximum(arr, 0.0)
            return sum(w * -np.expm1(-r * arr) for w, r in zip(self.weights, self.rates))
        return _evaluate(t, fn)

    def mean(self) -> float:
        return sum(w / r for w, r in zip(self.weights, self.rates))


class Pareto(BaseDistribution):
    """Lomax law: a Pareto shifted so that its support starts at 0."""

    type: Literal["pareto"] = "pareto"
    shape: float = Field(..., gt=0)
    scale: float = Field(..., gt=0)

    def sample(self, rng: RngStream) -> float:
        return self.scale * ((1.0 - rng.random()) ** (-1.0 / self.shape) - 1.0)

    def cdf(self, t):
        return _evaluate(t, lambda arr: 1.0 - (1.0 + np.maximum(arr, 0.0) / self.scale) ** (-self.shape))

    def survival(self, t):
        return _evaluate(t, lambda arr: (1.0 + np.maximum(arr, 0.0) / self.scale) ** (-self.shape))

    def mean(self) -> float:
        if self.shape <= 1:
            raise InfiniteMeanError(f"pareto mean is infinite for shape {self.shape} <= 1")
        return self.scale / (self.shape - 1.0)

    def tail_index(self) -> float:
        return self.shape


class Weibull(BaseDistribution):
    type: Literal["weibull"] = "weibull"
    shape: float = Field(..., gt=0)
    scale: float = Field(..., gt=0)

    def sample(self, rng: RngStream) -> float:
        return self.scale * (-math.log1p(-rng.random())) ** (1.0 / self.shape)

    def cdf(self, t):
        return _evaluate(t, lambda arr: -np.expm1(-(np.maximum(arr, 0.0) / self.scale) ** self.shape))

    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)


class Scaled(BaseDistribution):
    """Law of factor * X."""

    type: Literal["scaled"] = "scaled"
    inner: "Distribution"
    factor: float = Field(..., gt=0)

    def sample(self, rng: RngStream) -> float:
        return self.factor * self.inner.sample(rng)

    def cdf(self, t):
        return _evaluate(t, lambda arr: np.asarray(self.inner.cdf(arr / self.factor), dtype=np.float64))

    def survival(self, t):
        return _evaluate(t, lambda arr: np.asarray(self.inner.survival(arr / self.factor), dtype=np.float64))

    def mean(self) -> float:
        return self.factor * self.inner.mean()

    def upper_bound(self) -> float:
        return self.factor * self.inner.upper_bound()

    def tail_index(self) -> float:
        return self.inner.tail_index()

    def breakpoints(self) -> List[float]:
        return [self.factor * b for b in self.inner.breakpoints()]


class MinOf(BaseDistribution):
    """Law of the minimum of independent components: survival is the product of survivals."""

    type: Literal["min"] = "min"
    components: Tuple["Distribution", ...]

    @field_validator("components")
    @classmethod
    def _nonempty(cls, values):
        if not values:
            raise ValueError("min-composition needs at least one component")
        return values

    def sample(self, rng: RngStream) -> float:
        # every component is drawn so the stream advances the same way whatever the outcome
        return min([c.sample(rng) for c in self.components])

    def cdf(self, t):
        def fn(arr):
            survival = np.ones_like(arr)
            for c in self.components:
                survival = survival * (1.0 - np.asarray(c.cdf(arr), dtype=np.float64))
            return 1.0 - survival
        return _evaluate(t, fn)

    def survival(self, t):
        def fn(arr):
            product = np.ones_like(arr)
            for c in self.components:
                product = product * np.asarray(c.survival(arr), dtype=np.float64)
            return product
        return _evaluate(t, fn)

    def upper_bound(self) -> float:
        return min(c.upper_bound() for c in self.components)

    def tail_index(self) -> float:
        return sum(c.tail_index() for c in self.components)

    def breakpoints(self) -> List[float]:
        upper = self.upper_bound()
        points = {b for c in self.components for b in c.breakpoints() if 0.0 < b <= upper}
        return sorted(points)

    def mean(self) -> float:
        if all(isinstance(c, Exponential) for c in self.components):
            return 1.0 / sum(c.rate for c in self.components)
        if all(isinstance(c, Deterministic) for c in self.components):
            return min(c.value for c in self.components)
        return self._integrate_survival()

    def _integrate_survival(self) -> float:
        if self.tail_index() <= 1.0:
            raise InfiniteMeanError(f"min-composition tail index {self.tail_index()} <= 1: mean is infinite")
        survival = lambda x: float(self.survival(x))
        upper = self.upper_bound()
        if math.isfinite(upper):
            points = [b for b in self.breakpoints() if 0.0 < b < upper] or None
            value, _ = integrate.quad(survival, 0.0, upper, points=points, **_QUAD_OPTIONS)
            return value
        horizon = self._survival_horizon()
        # doubling pieces keep quad accurate on slowly decaying power laws
        head = 0.0
        left, right = 0.0, 1.0
        while left < horizon:
            points = [b for b in self.breakpoints() if left < b < right] or None
            piece, _ = integrate.quad(survival, left, right, points=points, **_QUAD_OPTIONS)
            head += piece
            left, right = right, 2.0 * right
        alpha = self.tail_index()
        if math.isfinite(alpha):
            # survival ~ C t^-alpha beyond the horizon
            tail = float(self.survival(horizon)) * horizon / (alpha - 1.0)
        else:
            tail, _ = integrate.quad(survival, horizon, math.inf, **_QUAD_OPTIONS)
        logger.debug(f"min-composition mean: head={head:.12g} tail={tail:.3g} horizon={horizon:.4g}")
        return head + tail

    def _survival_horizon(self) -> float:
        horizon = 1.0
        for _ in range(200):
            if float(self.survival(horizon)) < SURVIVAL_HORIZON:
                return horizon
            horizon *= 2.0
        return horizon


Distribution = Annotated[
    Union[Deterministic, Exponential, Uniform, HyperExponential, Pareto, Weibull, Scaled, MinOf],
    Field(discriminator="type"),
]

Scaled.model_rebuild()
MinOf.model_rebuild()

_DISTRIBUTION_ADAPTER = TypeAdapter(Distribution)


def parse_distribution(data) -> BaseDistribution:
    """Build a Distribution from a tagged mapping such as ``{"type": "exponential", "rate": 1}``."""
    if isinstance(data, BaseDistribution):
        return data
    return _DISTRIBUTION_ADAPTER.validate_python(data)


def sample(d: BaseDistribution, rng: RngStream) -> float:
    return d.sample(rng)


def cdf(d: BaseDistribution, t):
    return d.cdf(t)


def mean(d: BaseDistribution) -> float:
    return d.mean()


def min_of(ds: List[BaseDistribution]) -> BaseDistribution:
    """Law of the minimum of independent draws, one per component."""
    if not ds:
        raise ValueError("min_of needs at least one distribution")
    if len(ds) == 1:
        return ds[0]
    return MinOf(components=tuple(ds))


def scale(d: BaseDistribution, k: float) -> BaseDistribution:
    """Law of k * X, folded into the parameters where the family is closed under scaling."""
    if not k > 0 or not math.isfinite(k):
        raise ValueError(f"scale factor must be a positive real, got {k}")
    if k == 1.0:
        return d
    if isinstance(d, Deterministic):
        return Deterministic(value=d.value * k)
    if isinstance(d, Exponential):
        return Exponential(rate=d.rate / k)
    if isinstance(d, Uniform):
        return Uniform(low=d.low * k, high=d.high * k)
    if isinstance(d, Scaled):
        return Scaled(inner=d.inner, factor=d.factor * k)
    return Scaled(inner=d, factor=k)

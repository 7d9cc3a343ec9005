"""Community model: configuration, interest kernel, utilities and the potential.

Periphery agents are identified by their index ``0..K-1`` on a uniform grid
over the topic interval.  Rate arrays follow one convention throughout:

* ``core_rates[z]``            rate at which the core follows agent ``z``
* ``periphery_to_core[y]``     rate at which agent ``y`` follows the core
* ``periphery_to_periphery[y, z]``  rate at which ``y`` follows ``z`` (diagonal 0)
* ``outside[y]``               rate at which ``y`` follows outside platforms

A rate of exactly zero contributes nothing: ``exp(-alpha / 0)`` is taken as 0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .errors import (
    AssumptionViolation,
    InvalidConfigError,
    InvalidInputError,
    StrategySpaceError,
)

# Relative slack when deciding whether a rate sits below the rate floor.
FLOOR_SLACK = 1e-12


@dataclass(frozen=True)
class InterestKernel:
    """Linear interest kernel ``f(d) = intercept - slope * d``."""

    intercept: float = 1.0
    slope: float = 0.25

    def __call__(self, distance):
        return self.intercept - self.slope * np.asarray(distance, dtype=float)

    def check(self, diameter: float) -> None:
        if not 0.0 < self.intercept <= 1.0:
            raise InvalidConfigError(f"kernel intercept must lie in (0, 1], got {self.intercept}")
        if self.slope < 0.0:
            raise InvalidConfigError(f"kernel slope must be nonnegative, got {self.slope}")
        if self.intercept - self.slope * diameter <= 0.0:
            raise InvalidConfigError(
                f"kernel is not positive over the community diameter {diameter}: "
                f"f({diameter}) = {self.intercept - self.slope * diameter}"
            )


@dataclass(frozen=True)
class CommunityConfig:
    """Full parameterization of a single-core community.

    Defaults reproduce the desk configuration used throughout the tests:
    K=11 agents on [-1, 1], alpha=1, c=0.4, f(d)=1-0.25d, r_p=r_0=1, B_0=0.5,
    M_c=50, M_p=20.
    """

    num_periphery: int = 11
    center: float = 0.0
    half_width: float = 1.0
    alpha: float = 1.0
    cost: float = 0.4
    rate_produce: float = 1.0
    rate_outside: float = 1.0
    interest_outside: float = 0.5
    budget_core: float = 50.0
    budget_periphery: float = 20.0
    kernel: InterestKernel = field(default_factory=InterestKernel)

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            object.__setattr__(self, "kernel", InterestKernel(**self.kernel))
        self.check()

    def check(self) -> None:
        """Raise :class:`InvalidConfigError` on structural problems.

        The standing assumptions (c > 1/e and positive aggregate interest) are
        *not* enforced here; see :func:`validate_assumptions`.
        """
        K = self.num_periphery
        if isinstance(K, bool) or not isinstance(K, (int, np.integer)):
            raise InvalidConfigError(f"num_periphery must be an integer, got {K!r}")
        if K < 2:
            raise InvalidConfigError(f"num_periphery must be at least 2, got {K}")
        values = {
            "center": self.center,
            "half_width": self.half_width,
            "alpha": self.alpha,
            "cost": self.cost,
            "rate_produce": self.rate_produce,
            "rate_outside": self.rate_outside,
            "interest_outside": self.interest_outside,
            "budget_core": self.budget_core,
            "budget_periphery": self.budget_periphery,
        }
        for name, value in values.items():
            if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
                raise InvalidConfigError(f"{name} must be a finite number, got {value!r}")
        for name in ("half_width", "alpha", "rate_produce", "rate_outside",
                     "budget_core", "budget_periphery"):
            if values[name] <= 0:
                raise InvalidConfigError(f"{name} must be positive, got {values[name]}")
        if not 0.0 < self.cost < 1.0:
            raise InvalidConfigError(f"cost must lie in (0, 1), got {self.cost}")
        if not 0.0 <= self.interest_outside <= 1.0:
            raise InvalidConfigError(
                f"interest_outside must lie in [0, 1], got {self.interest_outside}")
        self.kernel.check(2.0 * self.half_width)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.num_periphery - 1)

    @property
    def positions(self) -> np.ndarray:
        k = np.arange(self.num_periphery)
        return self.center - self.half_width + k * self.spacing

    @property
    def center_distance(self) -> np.ndarray:
        # Integer-based so mirror agents are exactly equidistant.
        k = np.arange(self.num_periphery)
        return np.abs(2 * k - (self.num_periphery - 1)) * (self.spacing / 2.0)

    @property
    def interest_matrix(self) -> np.ndarray:
        """``P[y, z] = p(z|y)``; symmetric, diagonal holds ``f(0)``."""
        k = np.arange(self.num_periphery)
        dist = np.abs(k[:, None] - k[None, :]) * self.spacing
        return self.kernel(dist)

    @property
    def mu_floor(self) -> float:
        return mu_floor(self)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CommunityConfig:
        data = dict(data)
        kernel = data.pop("kernel", None)
        if kernel is not None and not isinstance(kernel, InterestKernel):
            kernel = InterestKernel(**kernel)
        if kernel is not None:
            data["kernel"] = kernel
        return cls(**data)


@dataclass(frozen=True)
class UtilityBreakdown:
    via_core: float
    direct: float
    outside: float

    @property
    def total(self) -> float:
        return self.via_core + self.direct + self.outside

    @property
    def community(self) -> float:
        return self.via_core + self.direct

    def to_dict(self) -> dict[str, float]:
        return {"via_core": self.via_core, "direct": self.direct,
                "outside": self.outside, "total": self.total}


@dataclass(frozen=True, eq=False)
class Allocation:
    """Joint strategy profile of the core and all periphery agents."""

    core_rates: np.ndarray
    periphery_to_core: np.ndarray
    periphery_to_periphery: np.ndarray
    outside: np.ndarray

    def __post_init__(self):
        for name in ("core_rates", "periphery_to_core", "periphery_to_periphery", "outside"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        K = self.core_rates.shape[0]
        if (self.core_rates.shape != (K,) or self.periphery_to_core.shape != (K,)
                or self.outside.shape != (K,) or self.periphery_to_periphery.shape != (K, K)):
            raise InvalidInputError("allocation arrays have inconsistent shapes")
        if np.any(np.diag(self.periphery_to_periphery) != 0.0):
            raise InvalidInputError("an agent cannot follow itself")

    @property
    def num_periphery(self) -> int:
        return self.core_rates.shape[0]

    @classmethod
    def zeros(cls, num_periphery: int) -> Allocation:
        K = num_periphery
        return cls(np.zeros(K), np.zeros(K), np.zeros((K, K)), np.zeros(K))

    def __eq__(self, other):
        if not isinstance(other, Allocation):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.core_rates, self.periphery_to_core,
                self.periphery_to_periphery, self.outside)

    def with_core(self, core_rates) -> Allocation:
        return Allocation(core_rates, self.periphery_to_core,
                          self.periphery_to_periphery, self.outside)

    def with_periphery(self, y: int, to_core: float, direct, outside: float) -> Allocation:
        to_core_all = self.periphery_to_core.copy()
        pp = self.periphery_to_periphery.copy()
        out = self.outside.copy()
        to_core_all[y] = to_core
        pp[y] = direct
        pp[y, y] = 0.0
        out[y] = outside
        return Allocation(self.core_rates, to_core_all, pp, out)

    def periphery_spend(self) -> np.ndarray:
        return self.periphery_to_core + self.outside + self.periphery_to_periphery.sum(axis=1)

    def distance(self, other: Allocation) -> float:
        """Sup-norm distance over every stored rate."""
        return max(float(np.max(np.abs(a - b), initial=0.0))
                   for a, b in zip(self.arrays(), other.arrays()))

    def violations(self, config: CommunityConfig, tol: float = 1e-9) -> list[str]:
        """Human-readable list of strategy-space and budget violations."""
        problems = []
        floor = config.mu_floor
        checks = [
            ("core_rates", self.core_rates, config.budget_core),
            ("periphery_to_core", self.periphery_to_core, config.budget_periphery),
            ("periphery_to_periphery", self.periphery_to_periphery, config.budget_periphery),
            ("outside", self.outside, config.budget_periphery),
        ]
        for name, arr, cap in checks:
            if not np.all(np.isfinite(arr)):
                problems.append(f"{name}: non-finite rate")
                continue
            bad = (arr < 0) | ((arr > 0) & (arr < floor * (1 - FLOOR_SLACK) - tol)) | (arr > cap + tol)
            for idx in zip(*np.nonzero(bad)):
                problems.append(f"{name}{list(map(int, idx))} = {arr[idx]!r} outside {{0}} U [{floor}, {cap}]")
        if self.core_rates.sum() > config.budget_core + tol:
            problems.append(f"core spends {self.core_rates.sum()} > {config.budget_core}")
        spend = self.periphery_spend()
        for y in np.nonzero(spend > config.budget_periphery + tol)[0]:
            problems.append(f"agent {y} spends {spend[y]} > {config.budget_periphery}")
        return problems

    def to_dict(self) -> dict[str, Any]:
        return {
            "core_rates": self.core_rates.tolist(),
            "periphery_to_core": self.periphery_to_core.tolist(),
            "periphery_to_periphery": self.periphery_to_periphery.tolist(),
            "outside": self.outside.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Allocation:
        return cls(np.asarray(data["core_rates"], dtype=float),
                   np.asarray(data["periphery_to_core"], dtype=float),
                   np.asarray(data["periphery_to_periphery"], dtype=float),
                   np.asarray(data["outside"], dtype=float))


@dataclass(frozen=True)
class AssumptionReport:
    passed: bool
    cost_ok: bool
    consume_sums: tuple[float, ...]
    produce_sums: tuple[float, ...]
    failing_agents: tuple[int, ...]
    messages: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# --------------------------------------------------------------------------
# Elementary functions


def build_community(config: CommunityConfig) -> np.ndarray:
    """Topic positions of the K periphery agents, evenly spaced end to end."""
    config.check()
    return config.positions


def interest(x: float, y: float, kernel: InterestKernel, max_distance: float | None = None) -> float:
    """Probability that content produced at ``x`` interests an agent at ``y``."""
    d = abs(x - y)
    if max_distance is not None and d > max_distance:
        raise InvalidInputError(f"distance {d} exceeds kernel support {max_distance}")
    value = float(kernel(d))
    if value <= 0.0:
        raise InvalidInputError(f"distance {d} lies outside the positive region of the kernel")
    return value


def delay_factor(rate, alpha: float):
    """``exp(-alpha / rate)`` with the convention that a zero rate gives 0."""
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(rate > 0, np.exp(-alpha / np.where(rate > 0, rate, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def floor_rate(alpha: float, cost: float) -> float:
    """Rate at which the delay factor equals the per-item cost."""
    if not cost < 1.0:
        raise InvalidInputError(f"cost must be below 1, got {cost}")
    if cost <= math.exp(-1.0):
        raise AssumptionViolation(
            f"cost c={cost} violates c > exp(-1) = {math.exp(-1.0):.6f}")
    return alpha / math.log(1.0 / cost)


def mu_floor(config: CommunityConfig) -> float:
    return floor_rate(config.alpha, config.cost)


def _check_rate(rate: float, floor: float, name: str = "rate") -> None:
    if not math.isfinite(rate) and rate != math.inf:
        raise InvalidInputError(f"{name} is not a number: {rate!r}")
    if rate < 0:
        raise InvalidInputError(f"{name} must be nonnegative, got {rate}")
    if 0 < rate < floor * (1 - FLOOR_SLACK):
        raise StrategySpaceError(f"{name}={rate} lies in (0, {floor})")


def utility_direct(y: int, z: int, rate: float, config: CommunityConfig) -> float:
    """Utility rate of ``y`` from following ``z`` directly."""
    _check_rate(rate, config.mu_floor)
    if rate == 0:
        return 0.0
    p = config.interest_matrix[y, z]
    return config.rate_produce * (p * delay_factor(rate, config.alpha) - config.cost)


def utility_via_core(y: int, z: int, core_rate: float, to_core: float,
                     config: CommunityConfig) -> float:
    """Utility rate of ``y`` from the content of ``z`` relayed by the core."""
    floor = config.mu_floor
    _check_rate(core_rate, floor, "core rate")
    _check_rate(to_core, floor, "rate to core")
    if core_rate == 0 or to_core == 0:
        return 0.0
    p = config.interest_matrix[y, z]
    a = config.alpha
    return config.rate_produce * (p * math.exp(-a / core_rate - a / to_core) - config.cost)


def utility_outside(rate: float, config: CommunityConfig) -> float:
    _check_rate(rate, config.mu_floor, "outside rate")
    return config.rate_outside * config.interest_outside * delay_factor(rate, config.alpha)


# --------------------------------------------------------------------------
# Aggregates over an allocation


def utility_arrays(allocation: Allocation, config: CommunityConfig):
    """Per-agent ``(via_core, direct, outside)`` utility arrays."""
    a, c, rp = config.alpha, config.cost, config.rate_produce
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)

    core_on = allocation.core_rates > 0
    core_delay = delay_factor(allocation.core_rates, a)
    to_core = allocation.periphery_to_core
    n_followed = core_on.sum() - core_on            # z != y
    relay = P @ core_delay
    via = np.where(to_core > 0,
                   rp * (delay_factor(to_core, a) * relay - c * n_followed), 0.0)

    pp = allocation.periphery_to_periphery
    pp_on = pp > 0
    direct = rp * np.where(pp_on, P * delay_factor(pp, a) - c, 0.0).sum(axis=1)

    outside = config.rate_outside * config.interest_outside * delay_factor(allocation.outside, a)
    return via, direct, np.asarray(outside, dtype=float)


def periphery_utilities(allocation: Allocation, config: CommunityConfig) -> list[UtilityBreakdown]:
    via, direct, outside = utility_arrays(allocation, config)
    return [UtilityBreakdown(float(v), float(d), float(o)) for v, d, o in zip(via, direct, outside)]


def periphery_utility(y: int, allocation: Allocation, config: CommunityConfig) -> UtilityBreakdown:
    return periphery_utilities(allocation, config)[y]


def core_objective(allocation: Allocation, config: CommunityConfig) -> float:
    """Total utility the periphery receives through the core."""
    via, _, _ = utility_arrays(allocation, config)
    return float(via.sum())


def potential(allocation: Allocation, config: CommunityConfig) -> float:
    """Exact potential of the game; equals the summed periphery welfare."""
    via, direct, outside = utility_arrays(allocation, config)
    return float(via.sum() + direct.sum() + outside.sum())


def core_content_value(y: int, allocation: Allocation, config: CommunityConfig) -> float:
    """Interest-weighted value of what the core collects, as seen by ``y``, net of ``c``."""
    return float(core_content_values(allocation, config)[y])


def core_content_values(allocation: Allocation, config: CommunityConfig) -> np.ndarray:
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)
    return P @ delay_factor(allocation.core_rates, config.alpha) - config.cost


def validate_assumptions(config: CommunityConfig) -> AssumptionReport:
    """Check positive aggregate interest per agent and ``c > 1/e``."""
    P = config.interest_matrix
    c = config.cost
    K = config.num_periphery
    off = ~np.eye(K, dtype=bool)
    consume = np.where(off, P - c, 0.0).sum(axis=1)     # sum_z p(z|y) - c
    produce = np.where(off, P.T - c, 0.0).sum(axis=1)   # sum_z p(y|z) - c
    failing = tuple(int(y) for y in np.nonzero((consume <= 0) | (produce <= 0))[0])
    cost_ok = c > math.exp(-1.0)
    messages = []
    if not cost_ok:
        messages.append(f"cost c={c} violates c > exp(-1) = {math.exp(-1.0):.6f}")
    for y in failing:
        messages.append(f"agent {y}: consume sum {consume[y]:.6g}, produce sum {produce[y]:.6g} "
                        "(both must be > 0)")
    return AssumptionReport(
        passed=cost_ok and not failing,
        cost_ok=cost_ok,
        consume_sums=tuple(float(v) for v in consume),
        produce_sums=tuple(float(v) for v in produce),
        failing_agents=failing,
        messages=tuple(messages),
    )

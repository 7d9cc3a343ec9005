"""Numerical checks of the structural properties of the equilibrium.

Each ``check_*`` function inspects a converged :class:`EquilibriumResult` and
returns a :class:`PropertyReport` whose witnesses list every violation found.
Sweeps and threshold searches solve one equilibrium per grid cell.  The
brute-force oracle maximizes the potential over a rate grid for tiny
communities and gives an independent reference for the solver.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Literal, Sequence

import numpy as np

from .errors import InvalidInputError, NotConvergedError
from .model import (
    Allocation,
    CommunityConfig,
    core_content_values,
    delay_factor,
    potential,
    utility_arrays,
    utility_direct,
    utility_outside,
    utility_via_core,
)
from .solver import EquilibriumResult, SolverOptions, solve_equilibrium

PropertyId = Literal[
    "full_connectivity",
    "threshold_following",
    "center_monotone_rates",
    "participation_monotone",
    "welfare_optimal",
    "potential_exactness",
    "core_influence",
]
PROPERTY_IDS = (
    "full_connectivity",
    "threshold_following",
    "center_monotone_rates",
    "participation_monotone",
    "welfare_optimal",
    "potential_exactness",
    "core_influence",
)

STRICT_TOL = 1e-9      # a strict inequality must clear this margin
EQUAL_TOL = 1e-8       # mirror-image agents must agree to this
WELFARE_TOL = 1e-8
EXACTNESS_TOL = 1e-9
MONOTONE_TOL = 1e-8
MAX_REDRAWS = 100


@dataclass(frozen=True)
class PropertyReport:
    property_id: str
    passed: bool
    witnesses: tuple[dict[str, Any], ...] = ()
    thresholds: dict[int, float] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.property_id not in PROPERTY_IDS:
            raise InvalidInputError(f"unknown property {self.property_id!r}")
        if self.passed != (len(self.witnesses) == 0):
            raise InvalidInputError("a report passes exactly when it has no witnesses")

    def to_dict(self) -> dict[str, Any]:
        return {
            "property_id": self.property_id,
            "passed": self.passed,
            "witnesses": [dict(w) for w in self.witnesses],
            "thresholds": {str(k): v for k, v in self.thresholds.items()},
            "details": dict(self.details),
        }


def _report(property_id, witnesses, config, thresholds=None, **details) -> PropertyReport:
    details = {"spacing": config.spacing, **details}
    return PropertyReport(property_id, not witnesses, tuple(witnesses), thresholds or {}, details)


def _require_converged(result: EquilibriumResult) -> None:
    if not result.converged:
        raise NotConvergedError("the check needs a converged equilibrium")


def _distance_pairs(config: CommunityConfig):
    """Yield ``(inner, outer)`` pairs and equidistant pairs of agents."""
    d = config.center_distance
    eps = 1e-12 * config.half_width
    K = config.num_periphery
    ordered, level = [], []
    for y, w in itertools.combinations(range(K), 2):
        if abs(d[y] - d[w]) <= eps:
            level.append((y, w))
        elif d[y] < d[w]:
            ordered.append((y, w))
        else:
            ordered.append((w, y))
    return ordered, level


def _ordering_witnesses(name: str, values: np.ndarray, config: CommunityConfig) -> list[dict]:
    """Witnesses against ``values`` strictly decreasing away from the center."""
    ordered, level = _distance_pairs(config)
    out = []
    for inner, outer in ordered:
        if not values[inner] - values[outer] > STRICT_TOL:
            out.append({"quantity": name, "kind": "order", "inner": inner, "outer": outer,
                        "inner_value": float(values[inner]), "outer_value": float(values[outer])})
    for y, w in level:
        if abs(values[y] - values[w]) > EQUAL_TOL:
            out.append({"quantity": name, "kind": "mirror", "inner": y, "outer": w,
                        "inner_value": float(values[y]), "outer_value": float(values[w])})
    return out


# --------------------------------------------------------------------------
# Structural checks on one equilibrium


def check_full_connectivity(result: EquilibriumResult, config: CommunityConfig) -> PropertyReport:
    """The core follows every agent and every agent follows the core."""
    _require_converged(result)
    a = result.allocation
    witnesses = []
    for y in range(config.num_periphery):
        if not a.core_rates[y] > 0:
            witnesses.append({"agent": y, "side": "core", "rate": float(a.core_rates[y])})
        if not a.periphery_to_core[y] > 0:
            witnesses.append({"agent": y, "side": "periphery", "rate": float(a.periphery_to_core[y])})
    return _report("full_connectivity", witnesses, config)


def check_threshold_following(result: EquilibriumResult, config: CommunityConfig) -> PropertyReport:
    """Each agent's directly followed set is a strict upper level set of its interest.

    The inferred cut for an agent is the midpoint between the smallest
    followed interest and the largest unfollowed one (0 when it follows
    everyone).  Agents that follow nobody directly pass vacuously.
    """
    _require_converged(result)
    P = config.interest_matrix
    pp = result.allocation.periphery_to_periphery
    K = config.num_periphery
    witnesses, thresholds = [], {}
    for y in range(K):
        others = np.arange(K) != y
        followed = others & (pp[y] > 0)
        unfollowed = others & ~(pp[y] > 0)
        if not followed.any():
            continue
        low = float(P[y][followed].min())
        z_low = int(np.nonzero(followed & (P[y] == low))[0][0])
        high = float(P[y][unfollowed].max()) if unfollowed.any() else 0.0
        thresholds[y] = 0.5 * (low + high)
        for z in np.nonzero(unfollowed)[0]:
            if not low - P[y, z] > STRICT_TOL:
                witnesses.append({"agent": y, "unfollowed": int(z), "followed": z_low,
                                  "p_unfollowed": float(P[y, z]), "p_followed": low})
    return _report("threshold_following", witnesses, config, thresholds)


def check_center_monotone(result: EquilibriumResult, config: CommunityConfig) -> PropertyReport:
    """Rates between core and agent strictly fall with distance from the center."""
    _require_converged(result)
    a = result.allocation
    witnesses = (_ordering_witnesses("core_rate", a.core_rates, config)
                 + _ordering_witnesses("rate_to_core", a.periphery_to_core, config))
    return _report("center_monotone_rates", witnesses, config)


def participation(allocation: Allocation, config: CommunityConfig) -> np.ndarray:
    """Budget each agent does not send to outside platforms."""
    return config.budget_periphery - allocation.outside


def check_participation_monotone(result: EquilibriumResult, config: CommunityConfig) -> PropertyReport:
    """Participation and community utility strictly fall with distance from the center."""
    _require_converged(result)
    a = result.allocation
    via, direct, _ = utility_arrays(a, config)
    witnesses = (_ordering_witnesses("participation", participation(a, config), config)
                 + _ordering_witnesses("community_utility", via + direct, config))
    return _report("participation_monotone", witnesses, config)


# --------------------------------------------------------------------------
# Random feasible strategies


def _agent_layout(config: CommunityConfig):
    """Per agent: (usable source mask, budget).  Agent -1 is the core."""
    K = config.num_periphery
    layouts = {-1: (np.ones(K, dtype=bool), config.budget_core)}
    for y in range(K):
        usable = np.ones(K + 2, dtype=bool)
        usable[1 + y] = False
        layouts[y] = (usable, config.budget_periphery)
    return layouts


def _strategy(allocation: Allocation, agent: int) -> np.ndarray:
    if agent < 0:
        return allocation.core_rates.copy()
    return np.concatenate(([allocation.periphery_to_core[agent]],
                           allocation.periphery_to_periphery[agent],
                           [allocation.outside[agent]]))


def _with_strategy(allocation: Allocation, agent: int, rates: np.ndarray) -> Allocation:
    if agent < 0:
        return allocation.with_core(rates)
    return allocation.with_periphery(agent, rates[0], rates[1:-1], rates[-1])


def random_strategy(rng: np.random.Generator, usable: np.ndarray, budget: float,
                    floor: float) -> np.ndarray:
    """A random point of ``{0} U [floor, budget]`` per source with total at most ``budget``.

    The support is uniform among feasible sizes; rates come from a symmetric
    Dirichlet split of a random total.  Draws with a rate below the floor
    are redrawn; after ``MAX_REDRAWS`` the split is shifted onto the floor.
    """
    rates = np.zeros(usable.size)
    idx = np.nonzero(usable)[0]
    max_active = min(idx.size, int(budget / floor * (1 + 1e-12)))
    k = int(rng.integers(0, max_active + 1))
    if k == 0:
        return rates
    support = rng.choice(idx, size=k, replace=False)
    total = rng.uniform(k * floor, budget)
    for _ in range(MAX_REDRAWS):
        share = rng.dirichlet(np.ones(k))
        if np.all(share * total >= floor):
            rates[support] = share * total
            return rates
    rates[support] = floor + share * (total - k * floor)
    return rates


def random_allocation(config: CommunityConfig, rng: np.random.Generator) -> Allocation:
    alloc = Allocation.zeros(config.num_periphery)
    for agent, (usable, budget) in _agent_layout(config).items():
        alloc = _with_strategy(alloc, agent, random_strategy(rng, usable, budget, config.mu_floor))
    return alloc


def perturb_strategy(rng: np.random.Generator, rates: np.ndarray, usable: np.ndarray,
                     budget: float, floor: float) -> np.ndarray:
    """Move a little mass between two sources, or drop or activate one source."""
    rates = rates.copy()
    active = np.nonzero(rates > 0)[0]
    if active.size == 0:
        idx = np.nonzero(usable)[0]
        rates[rng.choice(idx)] = min(budget, floor * (1 + rng.uniform()))
        return rates
    eps = float(rng.choice([1e-4, 1e-3, 1e-2])) * budget
    i = int(rng.choice(active))
    targets = np.nonzero(usable & (np.arange(rates.size) != i))[0]
    op = rng.integers(3)
    if op == 0 and targets.size:                      # shift mass i -> j
        j = int(rng.choice(targets))
        amount = eps if rates[j] > 0 else max(eps, floor)
        if rates[i] - amount >= floor:
            rates[i] -= amount
        else:                                         # i leaves the support
            amount = rates[i]
            rates[i] = 0.0
        rates[j] += amount
        if rates[j] < floor:
            rates[j] = 0.0
    elif op == 1:                                     # spend less
        rates[i] = rates[i] - eps if rates[i] - eps >= floor else 0.0
    else:                                             # drop i, hand its mass to another active source
        others = active[active != i]
        if others.size:
            rates[int(rng.choice(others))] += rates[i]
        rates[i] = 0.0
    return rates


def perturb_allocation(allocation: Allocation, config: CommunityConfig,
                       rng: np.random.Generator) -> Allocation:
    layouts = _agent_layout(config)
    agents = list(layouts)
    for agent in rng.choice(agents, size=int(rng.integers(1, 4)), replace=False):
        agent = int(agent)
        usable, budget = layouts[agent]
        new = perturb_strategy(rng, _strategy(allocation, agent), usable, budget, config.mu_floor)
        allocation = _with_strategy(allocation, agent, new)
    return allocation


# --------------------------------------------------------------------------
# Potential checks


def check_welfare_optimal(result: EquilibriumResult, config: CommunityConfig,
                          trials: int = 500, seed: int = 0) -> PropertyReport:
    """The equilibrium potential dominates random and nearby feasible allocations."""
    _require_converged(result)
    rng = np.random.default_rng(seed)
    base = potential(result.allocation, config)
    witnesses = []
    best = -math.inf
    for kind in ("random", "perturbed"):
        for t in range(trials):
            if kind == "random":
                cand = random_allocation(config, rng)
            else:
                cand = perturb_allocation(result.allocation, config, rng)
            problems = cand.violations(config)
            if problems:
                raise AssertionError(f"infeasible candidate drawn: {problems[0]}")
            g = potential(cand, config)
            best = max(best, g)
            if g > base + WELFARE_TOL:
                witnesses.append({"kind": kind, "trial": t, "candidate_potential": g,
                                  "equilibrium_potential": base})
    return _report("welfare_optimal", witnesses, config, trials=trials, seed=seed,
                   equilibrium_potential=base, best_candidate_potential=best)


def agent_utility(agent: int, allocation: Allocation, config: CommunityConfig) -> float:
    """Utility of one agent summed term by term (agent -1 is the core).

    Deliberately built from the scalar utility functions rather than the
    vectorized arrays used by :func:`potential`.
    """
    K = config.num_periphery
    a = allocation
    if agent < 0:
        return sum(utility_via_core(y, z, a.core_rates[z], a.periphery_to_core[y], config)
                   for y in range(K) for z in range(K) if z != y)
    y = agent
    total = utility_outside(a.outside[y], config)
    for z in range(K):
        if z == y:
            continue
        total += utility_via_core(y, z, a.core_rates[z], a.periphery_to_core[y], config)
        total += utility_direct(y, z, a.periphery_to_periphery[y, z], config)
    return total


def check_potential_exactness(result: EquilibriumResult, config: CommunityConfig,
                              deviations: int = 1000, seed: int = 0) -> PropertyReport:
    """Unilateral deviations change the potential by exactly the deviator's gain.

    Half of the deviations start from the given allocation, half from random
    feasible allocations.
    """
    rng = np.random.default_rng(seed)
    layouts = _agent_layout(config)
    agents = list(layouts)
    witnesses = []
    worst = 0.0
    for t in range(deviations):
        base = result.allocation if t % 2 == 0 else random_allocation(config, rng)
        agent = int(rng.choice(agents))
        usable, budget = layouts[agent]
        dev = _with_strategy(base, agent, random_strategy(rng, usable, budget, config.mu_floor))
        d_g = potential(dev, config) - potential(base, config)
        d_u = agent_utility(agent, dev, config) - agent_utility(agent, base, config)
        gap = abs(d_g - d_u)
        worst = max(worst, gap)
        if gap > EXACTNESS_TOL:
            witnesses.append({"deviation": t, "agent": agent, "delta_potential": d_g,
                              "delta_utility": d_u})
    return _report("potential_exactness", witnesses, config, deviations=deviations, seed=seed,
                   max_gap=worst)


# --------------------------------------------------------------------------
# Sweeps


def _solve_one(args):
    config, options = args
    return solve_equilibrium(config, options)


def solve_many(configs: Sequence[CommunityConfig], options: SolverOptions | None = None,
               workers: int = 1) -> list[EquilibriumResult]:
    """Solve independent equilibria, optionally in worker processes."""
    jobs = [(c, options) for c in configs]
    if workers <= 1 or len(jobs) <= 1:
        return [_solve_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_one, jobs))


SWEEPABLE = {"Mc": "budget_core", "Mp": "budget_periphery", "K": "num_periphery"}


@dataclass(frozen=True)
class SweepResult:
    swept_parameter: str
    values: tuple[float, ...]
    records: tuple[dict[str, Any], ...]

    def __post_init__(self):
        if len(self.values) != len(self.records):
            raise InvalidInputError("sweep records must align with the swept values")

    def monotone_witnesses(self, tol: float = MONOTONE_TOL) -> list[dict[str, Any]]:
        """Agents whose core value falls or outside rate rises between consecutive values."""
        out = []
        for i in range(1, len(self.records)):
            prev, cur = self.records[i - 1], self.records[i]
            if len(prev["core_value"]) != len(cur["core_value"]):
                continue
            for y in range(len(cur["core_value"])):
                if cur["core_value"][y] < prev["core_value"][y] - tol:
                    out.append({"agent": y, "quantity": "core_value", "from": self.values[i - 1],
                                "to": self.values[i], "before": prev["core_value"][y],
                                "after": cur["core_value"][y]})
                if cur["outside"][y] > prev["outside"][y] + tol:
                    out.append({"agent": y, "quantity": "outside", "from": self.values[i - 1],
                                "to": self.values[i], "before": prev["outside"][y],
                                "after": cur["outside"][y]})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"swept_parameter": self.swept_parameter, "values": list(self.values),
                "records": [dict(r) for r in self.records]}


def equilibrium_summary(result: EquilibriumResult, config: CommunityConfig) -> dict[str, Any]:
    a = result.allocation
    via, direct, _ = utility_arrays(a, config)
    return {
        "core_value": core_content_values(a, config).tolist(),
        "outside": a.outside.tolist(),
        "participation": participation(a, config).tolist(),
        "via_core_utility": via.tolist(),
        "community_utility": (via + direct).tolist(),
        "core_rates": a.core_rates.tolist(),
        "periphery_to_core": a.periphery_to_core.tolist(),
        "potential": result.potential,
        "converged": result.converged,
        "iterations": result.iterations,
    }


def sweep_parameter(config: CommunityConfig, parameter: str, values: Sequence[float],
                    options: SolverOptions | None = None, workers: int = 1) -> SweepResult:
    """Solve one equilibrium per value of ``parameter`` (``Mc``, ``Mp`` or ``K``)."""
    if parameter not in SWEEPABLE:
        raise InvalidInputError(f"cannot sweep {parameter!r}; choose one of {sorted(SWEEPABLE)}")
    name = SWEEPABLE[parameter]
    cast = int if name == "num_periphery" else float
    configs = [replace(config, **{name: cast(v)}) for v in values]
    results = solve_many(configs, options, workers)
    records = tuple(equilibrium_summary(r, c) for r, c in zip(results, configs))
    return SweepResult(name, tuple(float(v) for v in values), records)


def sweep_core_budget(config: CommunityConfig, values: Sequence[float],
                      options: SolverOptions | None = None, workers: int = 1) -> SweepResult:
    if any(b < a for a, b in zip(values, values[1:])):
        raise InvalidInputError("core budgets must be nondecreasing")
    return sweep_parameter(config, "Mc", values, options, workers)


def check_core_influence(config: CommunityConfig, values: Sequence[float],
                         options: SolverOptions | None = None, workers: int = 1) -> PropertyReport:
    """A larger core budget never lowers the core's value to anyone nor raises outside spending."""
    sweep = sweep_core_budget(config, values, options, workers)
    unconverged = [v for v, r in zip(sweep.values, sweep.records) if not r["converged"]]
    if unconverged:
        raise NotConvergedError(f"no equilibrium reached for core budgets {unconverged}")
    return _report("core_influence", sweep.monotone_witnesses(), config,
                   values=list(sweep.values))


@dataclass(frozen=True)
class ThresholdSearchResult:
    m_c_hat: float
    m_p_hat: float
    grid: tuple[tuple[float, float, bool], ...]

    def frontier_witnesses(self) -> list[tuple[float, float]]:
        """Cells that are connected while a cell with a larger budget is not."""
        cells = {(mc, mp): ok for mc, mp, ok in self.grid}
        mcs = sorted({mc for mc, _, _ in self.grid})
        mps = sorted({mp for _, mp, _ in self.grid})
        out = []
        for i, mc in enumerate(mcs):
            for j, mp in enumerate(mps):
                if not cells[(mc, mp)]:
                    continue
                bigger = [(m, mp) for m in mcs[i + 1:]] + [(mc, m) for m in mps[j + 1:]]
                out.extend(cell for cell in bigger if not cells[cell])
        return out

    @property
    def monotone(self) -> bool:
        return not self.frontier_witnesses()

    def to_dict(self) -> dict[str, Any]:
        return {"m_c_hat": self.m_c_hat, "m_p_hat": self.m_p_hat, "monotone": self.monotone,
                "grid": [list(g) for g in self.grid]}


def _ascending(grid, name):
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidInputError(f"{name} must be nonempty and strictly ascending")


def find_budget_thresholds(config: CommunityConfig, mc_grid: Sequence[float],
                           mp_grid: Sequence[float], options: SolverOptions | None = None,
                           workers: int = 1) -> ThresholdSearchResult:
    """Full connectivity over a grid of budgets.

    ``m_c_hat`` is the smallest core budget that connects everyone when the
    periphery budget is at its grid maximum, and symmetrically for
    ``m_p_hat``; NaN when no grid value works.
    """
    _ascending(mc_grid, "mc_grid")
    _ascending(mp_grid, "mp_grid")
    cells = [(float(mc), float(mp)) for mc in mc_grid for mp in mp_grid]
    configs = [replace(config, budget_core=mc, budget_periphery=mp) for mc, mp in cells]
    results = solve_many(configs, options, workers)
    grid = []
    for (mc, mp), res, cfg in zip(cells, results, configs):
        if not res.converged:
            raise NotConvergedError(f"no equilibrium reached at Mc={mc}, Mp={mp}")
        grid.append((mc, mp, check_full_connectivity(res, cfg).passed))
    top_mp, top_mc = float(mp_grid[-1]), float(mc_grid[-1])
    m_c = next((mc for mc, mp, ok in grid if mp == top_mp and ok), math.nan)
    m_p = next((mp for mc, mp, ok in grid if mc == top_mc and ok), math.nan)
    return ThresholdSearchResult(m_c, m_p, tuple(grid))


@dataclass(frozen=True)
class ParticipationResult:
    m_p_hat: float
    grid: tuple[tuple[float, bool, int], ...]    # (M_p, everyone participates, participants)

    @property
    def monotone(self) -> bool:
        flags = [ok for _, ok, _ in self.grid]
        return all(b or not a for a, b in zip(flags, flags[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {"m_p_hat": self.m_p_hat, "monotone": self.monotone,
                "grid": [list(g) for g in self.grid]}


def check_participation_sufficiency(config: CommunityConfig, mp_grid: Sequence[float],
                                    options: SolverOptions | None = None,
                                    workers: int = 1) -> ParticipationResult:
    """Smallest periphery budget at which every agent spends something inside the community."""
    _ascending(mp_grid, "mp_grid")
    configs = [replace(config, budget_periphery=float(mp)) for mp in mp_grid]
    grid = []
    for mp, res in zip(mp_grid, solve_many(configs, options, workers)):
        if not res.converged:
            raise NotConvergedError(f"no equilibrium reached at Mp={mp}")
        a = res.allocation
        inside = a.periphery_to_core + a.periphery_to_periphery.sum(axis=1)
        n = int(np.sum(inside > 0))
        grid.append((float(mp), n == config.num_periphery, n))
    m_p = next((mp for mp, ok, _ in grid if ok), math.nan)
    return ParticipationResult(m_p, tuple(grid))


# --------------------------------------------------------------------------
# Derivatives of the potential's building blocks


def relayed_term(mc, mp, alpha, p=1.0, rate=1.0, cost=0.0):
    """``rate * (p * exp(-alpha/mc - alpha/mp) - cost)``: one relayed item."""
    return rate * (p * np.exp(-alpha / mc - alpha / mp) - cost)


def relayed_gradient(mc, mp, alpha, p=1.0, rate=1.0):
    e = rate * p * np.exp(-alpha / mc - alpha / mp)
    return np.array([alpha / mc**2 * e, alpha / mp**2 * e])


def relayed_hessian(mc, mp, alpha, p=1.0, rate=1.0):
    e = rate * p * np.exp(-alpha / mc - alpha / mp)
    h11 = alpha / mc**3 * (alpha / mc - 2.0) * e
    h22 = alpha / mp**3 * (alpha / mp - 2.0) * e
    h12 = alpha**2 / (mc**2 * mp**2) * e
    return np.array([[h11, h12], [h12, h22]])


def delay_derivative(m, alpha, weight=1.0):
    return weight * alpha / m**2 * np.exp(-alpha / m)


def delay_second_derivative(m, alpha, weight=1.0):
    """Second derivative of ``weight * exp(-alpha/m)``; changes sign at ``m = alpha/2``."""
    return weight * alpha / m**3 * (alpha / m - 2.0) * np.exp(-alpha / m)


def _rel_err(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.abs(analytic), np.finfo(float).tiny)
    return float(np.max(np.abs(analytic - numeric) / scale))


@dataclass(frozen=True)
class DerivativeReport:
    samples: int
    seed: int
    step: float
    gradient_error: float
    hessian_error: float
    second_derivative_error: float
    max_eigenvalue: float
    tolerance: float = 1e-5
    eigenvalue_bound: float = -1e-12

    @property
    def passed(self) -> bool:
        return (max(self.gradient_error, self.hessian_error, self.second_derivative_error)
                <= self.tolerance and self.max_eigenvalue <= self.eigenvalue_bound)

    def to_dict(self) -> dict[str, Any]:
        return {"samples": self.samples, "seed": self.seed, "step": self.step,
                "gradient_error": self.gradient_error, "hessian_error": self.hessian_error,
                "second_derivative_error": self.second_derivative_error,
                "max_eigenvalue": self.max_eigenvalue, "tolerance": self.tolerance,
                "eigenvalue_bound": self.eigenvalue_bound, "passed": self.passed}


def check_derivatives(config: CommunityConfig, samples: int = 200, seed: int = 0,
                      step: float = 1e-5) -> DerivativeReport:
    """Analytic derivatives against central differences on the feasible rate box.

    Points are drawn uniformly from ``[floor, M_c] x [floor, M_p]``.  The
    gradient of the relayed term is compared with differences of its value;
    the Hessian and the one-dimensional second derivatives with differences
    of the analytic first derivatives.  The finite-difference step is
    ``step`` times the coordinate.
    """
    rng = np.random.default_rng(seed)
    a, floor = config.alpha, config.mu_floor
    p, rp = float(config.kernel.intercept), config.rate_produce
    w_out = config.rate_outside * config.interest_outside
    grad_err = hess_err = second_err = 0.0
    max_eig = -math.inf
    for _ in range(samples):
        mc = rng.uniform(floor, config.budget_core)
        mp = rng.uniform(floor, config.budget_periphery)
        hc, hp = step * mc, step * mp

        def f(x, y):
            return relayed_term(x, y, a, p, rp, config.cost)

        fd_grad = [(f(mc + hc, mp) - f(mc - hc, mp)) / (2 * hc),
                   (f(mc, mp + hp) - f(mc, mp - hp)) / (2 * hp)]
        grad_err = max(grad_err, _rel_err(relayed_gradient(mc, mp, a, p, rp), fd_grad))

        col_c = (relayed_gradient(mc + hc, mp, a, p, rp) - relayed_gradient(mc - hc, mp, a, p, rp)) / (2 * hc)
        col_p = (relayed_gradient(mc, mp + hp, a, p, rp) - relayed_gradient(mc, mp - hp, a, p, rp)) / (2 * hp)
        H = relayed_hessian(mc, mp, a, p, rp)
        hess_err = max(hess_err, _rel_err(H, np.column_stack([col_c, col_p])))
        max_eig = max(max_eig, float(np.linalg.eigvalsh(H).max()))

        for m, weight in ((mp, rp * p), (mp, w_out)):
            if weight == 0:
                continue
            h = step * m
            fd = (delay_derivative(m + h, a, weight) - delay_derivative(m - h, a, weight)) / (2 * h)
            second_err = max(second_err, _rel_err(delay_second_derivative(m, a, weight), fd))
    return DerivativeReport(samples, seed, step, grad_err, hess_err, second_err, max_eig)


# --------------------------------------------------------------------------
# Brute-force oracle for tiny communities

ORACLE_MAX_AGENTS = 3
ORACLE_MAX_STEPS = 500


@dataclass(frozen=True, eq=False)
class OracleResult:
    allocation: Allocation
    potential: float
    grid_steps: int
    core_step: float
    periphery_step: float
    lipschitz: dict[str, float]
    bound: float

    def to_dict(self) -> dict[str, Any]:
        return {"allocation": self.allocation.to_dict(), "potential": self.potential,
                "grid_steps": self.grid_steps, "core_step": self.core_step,
                "periphery_step": self.periphery_step, "lipschitz": dict(self.lipschitz),
                "bound": self.bound}


def oracle_bound(config: CommunityConfig, grid_steps: int) -> tuple[float, dict[str, float]]:
    """Upper bound on ``max G - max G over the grid``.

    On active rates the delay factor has slope at most ``alpha c / floor^2``,
    which bounds every partial derivative of the potential.  Rounding an
    agent's ``n`` rates onto the grid and repairing its budget moves them by
    at most ``2 n h`` in total, so the gap is at most the sum over agents of
    ``2 n h`` times the agent's largest partial derivative.
    """
    K = config.num_periphery
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)
    slope = config.alpha * config.cost / config.mu_floor**2
    p_max = float(P.max())
    rp = config.rate_produce
    lips = {
        "core_rate": rp * (K - 1) * p_max * slope,
        "rate_to_core": rp * (K - 1) * p_max * slope,
        "direct": rp * p_max * slope,
        "outside": config.rate_outside * config.interest_outside * slope,
    }
    h_c = config.budget_core / grid_steps
    h_p = config.budget_periphery / grid_steps
    per_agent = max(lips["rate_to_core"], lips["direct"], lips["outside"])
    bound = 2 * K * h_c * lips["core_rate"] + K * 2 * (K + 1) * h_p * per_agent
    return bound, lips


def _unit_values(weight, cost, units, step, floor_units, alpha):
    """Value of one source at each unit count ``0..units``; -inf below the floor."""
    j = np.arange(units + 1)
    v = np.where(j >= floor_units, weight * delay_factor(j * step, alpha) - cost, -np.inf)
    v[0] = 0.0
    return v


def _maxplus(a, b):
    """``c[u] = max_j a[j] + b[u-j]`` with the maximizing ``j``."""
    n = a.size
    u = np.arange(n)
    j = np.arange(n)
    idx = u[:, None] - j[None, :]
    table = np.where(idx >= 0, a[None, :] + b[np.clip(idx, 0, None)], -np.inf)
    arg = np.argmax(table, axis=1)
    return table[u, arg], arg


def brute_force_oracle(config: CommunityConfig, grid_steps: int = 200,
                       chunk: int = 20_000) -> OracleResult:
    """Maximize the potential over every allocation whose rates lie on a uniform grid.

    Rates are multiples of ``budget / grid_steps`` that are zero or at least
    the floor.  For each core allocation, every periphery agent's best grid
    strategy is found exactly: direct and outside spending is a knapsack
    solved by max-plus convolution once per agent, and the rate to the core
    is enumerated against it.
    """
    K = config.num_periphery
    if K > ORACLE_MAX_AGENTS:
        raise InvalidInputError(f"the oracle enumerates at most {ORACLE_MAX_AGENTS} agents, got {K}")
    if not 1 <= grid_steps <= ORACLE_MAX_STEPS:
        raise InvalidInputError(f"grid_steps must lie in [1, {ORACLE_MAX_STEPS}], got {grid_steps}")
    a, c, rp = config.alpha, config.cost, config.rate_produce
    floor = config.mu_floor
    n = grid_steps
    h_c, h_p = config.budget_core / n, config.budget_periphery / n
    fc = math.ceil(floor / h_c * (1 - 1e-12))
    fp = math.ceil(floor / h_p * (1 - 1e-12))
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)

    # knapsack over direct and outside sources, once per agent
    knap = []
    for y in range(K):
        sources = [(rp * P[y, z], rp * c, ("direct", z)) for z in range(K) if z != y]
        sources.append((config.rate_outside * config.interest_outside, 0.0, ("outside", None)))
        table = _unit_values(*sources[0][:2], n, h_p, fp, a)
        choices = []
        for w, cost, _ in sources[1:]:
            table, arg = _maxplus(_unit_values(w, cost, n, h_p, fp, a), table)
            choices.append(arg)
        best_upto = np.maximum.accumulate(table)
        knap.append((table, best_upto, choices, sources))

    # core allocations
    levels = np.concatenate(([0], np.arange(fc, n + 1)))
    tuples = np.array([t for t in itertools.product(levels, repeat=K) if sum(t) <= n], dtype=np.int64)
    core = tuples * h_c
    core_delay = delay_factor(core, a)
    on = core > 0
    to_core_units = np.arange(fp, n + 1)
    d_to_core = delay_factor(to_core_units * h_p, a)

    total = np.zeros(len(tuples))
    pick = np.zeros((len(tuples), K), dtype=np.int64)
    for y in range(K):
        relay = core_delay @ P[y]
        n_follow = on.sum(axis=1) - on[:, y]
        best_upto = knap[y][1]
        rest = best_upto[n - to_core_units]
        for s in range(0, len(tuples), chunk):
            sl = slice(s, s + chunk)
            vals = rp * (d_to_core[None, :] * relay[sl, None] - c * n_follow[sl, None]) + rest[None, :]
            arg = np.argmax(vals, axis=1)
            best = vals[np.arange(vals.shape[0]), arg]
            without = best_upto[n]
            use = best > without
            total[sl] += np.where(use, best, without)
            pick[sl, y] = np.where(use, to_core_units[arg], 0)
    i = int(np.argmax(total))

    alloc = Allocation.zeros(K).with_core(core[i])
    for y in range(K):
        table, best_upto, choices, sources = knap[y]
        units = n - pick[i, y]
        u = int(np.nonzero(table[: units + 1] == best_upto[units])[0][0])
        rates = {}
        for (w, cost, key), arg in zip(sources[:0:-1], choices[::-1]):
            j = int(arg[u])
            rates[key] = j * h_p
            u -= j
        rates[sources[0][2]] = u * h_p
        direct = np.zeros(K)
        for (kind, z), r in rates.items():
            if kind == "direct":
                direct[z] = r
        alloc = alloc.with_periphery(y, pick[i, y] * h_p, direct, rates[("outside", None)])
    bound, lips = oracle_bound(config, n)
    return OracleResult(alloc, potential(alloc, config), n, h_c, h_p, lips, bound)

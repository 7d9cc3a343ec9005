"""Best responses and best-response dynamics.

Every agent in the game faces the same kind of problem: choose rates ``m_i``
for a set of sources to maximize ``sum_i (w_i * exp(-alpha/m_i) - cost_i)``
over the sources with ``m_i > 0``, subject to ``sum_i m_i <= budget`` and
``m_i in {0} U [floor, budget]``.  For a fixed support the problem is strictly
concave (``floor > alpha/2``) and is solved by water-filling on the shared
multiplier.  Supports are chosen by enumeration: within a group of sources
that share the same fixed cost, an optimal support is always a prefix of the
group sorted by weight, so only prefix counts need to be enumerated.  A
single-swap local search runs afterwards as a safeguard.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Literal

import numpy as np

from .errors import AssumptionViolation, InvalidInputError
from .model import (
    Allocation,
    CommunityConfig,
    UtilityBreakdown,
    core_objective,
    delay_factor,
    periphery_utilities,
    potential,
    validate_assumptions,
)

log = logging.getLogger(__name__)

InitMode = Literal["uniform-floor", "uniform-budget", "random-seeded"]
INIT_MODES = ("uniform-floor", "uniform-budget", "random-seeded")

_PEAK = 4.0 * np.exp(-2.0)   # max of u^2 e^{-u}, attained at u = 2
_LOG2 = np.log(2.0)
_BISECTION_STEPS = 200


@dataclass(frozen=True)
class SolverOptions:
    multiplier_tol: float = 1e-10
    rate_tol: float = 1e-10
    convergence_tol: float = 1e-8
    potential_tol: float = 1e-12
    max_iterations: int = 10_000
    init_mode: InitMode = "uniform-floor"
    seed: int = 0
    local_search: bool = True
    escape: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SolverOptions:
        return cls(**data)

    def __post_init__(self):
        for name in ("multiplier_tol", "rate_tol", "convergence_tol", "potential_tol"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")
        if self.init_mode not in INIT_MODES:
            raise InvalidInputError(f"unknown init_mode {self.init_mode!r}; expected one of {INIT_MODES}")


@dataclass(frozen=True)
class PeripheryResponse:
    to_core: float
    direct: np.ndarray
    outside: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.to_core], self.direct, [self.outside]))


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    allocation: Allocation
    potential_trace: tuple[float, ...]
    iterations: int
    converged: bool
    per_agent_utilities: tuple[UtilityBreakdown, ...]
    core_objective: float
    final_step: float
    init_mode: str = "uniform-floor"
    spacing: float = field(default=float("nan"))
    escapes: int = 0

    @property
    def potential(self) -> float:
        return self.potential_trace[-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "allocation": self.allocation.to_dict(),
            "potential_trace": list(self.potential_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "per_agent_utilities": [u.to_dict() for u in self.per_agent_utilities],
            "core_objective": self.core_objective,
            "final_step": self.final_step,
            "init_mode": self.init_mode,
            "spacing": self.spacing,
            "escapes": self.escapes,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EquilibriumResult:
        return cls(
            allocation=Allocation.from_dict(data["allocation"]),
            potential_trace=tuple(float(g) for g in data["potential_trace"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            per_agent_utilities=tuple(UtilityBreakdown(u["via_core"], u["direct"], u["outside"])
                                      for u in data["per_agent_utilities"]),
            core_objective=float(data["core_objective"]),
            final_step=float(data["final_step"]),
            init_mode=data["init_mode"],
            spacing=float(data["spacing"]),
            escapes=int(data["escapes"]),
        )

    def __eq__(self, other):
        if not isinstance(other, EquilibriumResult):
            return NotImplemented
        return (self.allocation == other.allocation
                and self.potential_trace == other.potential_trace
                and self.iterations == other.iterations
                and self.converged == other.converged
                and self.per_agent_utilities == other.per_agent_utilities
                and self.core_objective == other.core_objective
                and self.final_step == other.final_step
                and self.init_mode == other.init_mode
                and self.escapes == other.escapes
                and (self.spacing == other.spacing
                     or (np.isnan(self.spacing) and np.isnan(other.spacing))))


# --------------------------------------------------------------------------
# Marginals and water-filling


def marginal(weights, rates, alpha: float) -> np.ndarray:
    """Derivative of ``w * exp(-alpha/m)`` with respect to ``m``."""
    rates = np.asarray(rates, dtype=float)
    return np.asarray(weights) * alpha / rates**2 * np.exp(-alpha / rates)


def inverse_marginal(weights, level, alpha: float) -> np.ndarray:
    """Rate on the decreasing branch (``m >= alpha/2``) where the marginal equals ``level``.

    With ``u = alpha/m`` the condition reads ``u^2 e^{-u} = k`` with
    ``k = level*alpha/w``, and the branch is ``0 < u <= 2``.  Levels above the
    peak map to ``alpha/2``; a zero level maps to ``inf``.
    """
    weights = np.asarray(weights, dtype=float)
    k = np.clip(np.asarray(level, dtype=float) * alpha / weights, 0.0, _PEAK)
    u = _small_root(k)
    with np.errstate(divide="ignore"):
        return alpha / u


def _small_root(k):
    """Root ``u in [0, 2]`` of ``u^2 e^{-u} = k`` for ``0 <= k <= 4/e^2``.

    Newton on ``v = log u``: ``2v - e^v - log k`` is increasing and concave
    for ``u < 2``, so after the first step the iterates climb monotonically
    to the root.
    """
    k = np.asarray(k, dtype=float)
    u = np.full(k.shape, 2.0)
    inner = (k > 0) & (k < _PEAK * (1 - 1e-12))
    u[k <= 0] = 0.0
    if inner.any():
        logk = np.log(k[inner])
        # u^2 ~ k for small u; near the peak log k ~ log PEAK - (u-2)^2/4
        near = 2.0 - 2.0 * np.sqrt(np.maximum(np.log(_PEAK) - logk, 0.0))
        v = np.where(logk > np.log(0.5 * _PEAK), np.log(np.maximum(near, 1e-3)), 0.5 * logk)
        for _ in range(100):
            ev = np.exp(v)
            step = (2.0 * v - ev - logk) / (2.0 - ev)
            v = np.minimum(v - step, _LOG2)
            # next to the peak the root is double and round-off stalls the
            # steps; those rates fall below any valid floor anyway
            if np.all((np.abs(step) < 1e-14) | (2.0 - ev < 1e-3)):
                break
        u[inner] = np.exp(v)
    return u


def _fill_masks(weights, masks, alpha, budget, floor, cap, rate_tol=1e-10, level_tol=1e-10):
    """Water-fill every support in ``masks`` (shape ``(n_masks, n)``) at once.

    Returns rates of the same shape.  Each mask must satisfy
    ``count * floor <= budget``.  The common marginal level is found by
    safeguarded Newton iteration on its logarithm, stopped once the spend is
    within ``rate_tol`` of the budget or the bracket on the log-level is
    narrower than ``level_tol``.
    """
    masks = np.asarray(masks, dtype=bool)
    n_masks, n = masks.shape
    w = np.where(masks, weights, 1.0)
    counts = masks.sum(axis=1)
    rates = np.zeros((n_masks, n))

    single = counts == 1
    rates[single] = np.where(masks[single], min(budget, cap), 0.0)
    multi = counts > 1
    if not multi.any():
        return rates

    m, wm, cm = masks[multi], w[multi], counts[multi]
    out = np.zeros(m.shape)
    tight = cm * floor >= budget * (1 - 1e-15)
    out[tight] = np.where(m[tight], floor, 0.0)
    loose = ~tight
    if loose.any():
        ml, wl = m[loose], wm[loose]
        # marginals can underflow for subnormal weights; keep the bracket finite
        tiny = np.finfo(float).tiny
        hi = np.log(np.maximum(np.max(np.where(ml, marginal(wl, floor, alpha), 0.0), axis=1), tiny))
        lo = np.log(np.maximum(np.min(np.where(ml, marginal(wl, cap, alpha), np.inf), axis=1), tiny))
        t = 0.5 * (lo + hi)
        for _ in range(_BISECTION_STEPS):
            level = np.exp(t)
            raw = inverse_marginal(wl, level[:, None], alpha)
            r = np.clip(raw, floor, cap)
            gap = np.where(ml, r, 0.0).sum(axis=1) - budget
            above = gap > 0
            lo = np.where(above, t, lo)
            hi = np.where(above, hi, t)
            # d(rate)/d(log level) on interior sources: level / g'(rate)
            interior = ml & (raw > floor) & (raw < cap)
            rr = np.where(interior, r, 1.0)
            gprime = wl * alpha * np.exp(-alpha / rr) * (alpha - 2.0 * rr) / rr**4
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                slope = np.where(interior, level[:, None] / gprime, 0.0).sum(axis=1)
                newton = t - gap / slope
            done = np.abs(gap) <= rate_tol
            ok = (slope < 0) & (newton >= lo) & (newton <= hi)
            t = np.where(done, t, np.where(ok, newton, 0.5 * (lo + hi)))
            if np.all(done | (hi - lo < level_tol)):
                break
        r = np.where(ml, np.clip(inverse_marginal(wl, np.exp(t)[:, None], alpha), floor, cap), 0.0)
        # put the residual on the interior rates so the budget is met exactly
        resid = budget - r.sum(axis=1)
        free = ml & (r > floor) & (r < cap)
        nfree = free.sum(axis=1)
        adj = np.where(nfree > 0, resid / np.maximum(nfree, 1), 0.0)
        r = np.where(free, r + adj[:, None], r)
        out[loose] = r
    rates[multi] = out
    return rates


def water_fill(weights, budget: float, alpha: float, floor: float, cap: float | None = None,
               options: SolverOptions | None = None) -> np.ndarray:
    """Split ``budget`` over sources with marginals ``w_i * alpha/m^2 * exp(-alpha/m)``.

    Every source gets a rate in ``[floor, cap]`` and the marginals of the
    sources strictly inside that box are equal.  Requires
    ``len(weights) * floor <= budget``.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        return np.zeros(0)
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise InvalidInputError("water_fill needs finite positive weights")
    cap = budget if cap is None else cap
    if weights.size * floor > budget * (1 + 1e-12):
        raise InvalidInputError(f"{weights.size} sources at floor {floor} exceed budget {budget}")
    if weights.size * cap <= budget:
        return np.full(weights.size, cap)
    options = options or SolverOptions()
    return _fill_masks(weights, np.ones((1, weights.size), dtype=bool), alpha, budget, floor, cap,
                       options.rate_tol, options.multiplier_tol)[0]


# --------------------------------------------------------------------------
# Generic best response


def _values(weights, costs, rates, alpha):
    on = rates > 0
    return np.where(on, weights * delay_factor(rates, alpha) - costs, 0.0).sum(axis=-1)


def _candidate_masks(weights, costs, max_active):
    """Prefix supports per equal-cost group, all combinations of prefix lengths."""
    n = weights.size
    keys = np.round(costs, 12)
    groups = []
    for key in np.unique(keys):
        idx = np.nonzero(keys == key)[0]
        order = idx[np.argsort(-weights[idx], kind="stable")]
        groups.append(order)
    masks = []
    for counts in itertools.product(*(range(len(g) + 1) for g in groups)):
        if 0 < sum(counts) <= max_active:
            mask = np.zeros(n, dtype=bool)
            for g, k in zip(groups, counts):
                mask[g[:k]] = True
            masks.append(mask)
    return np.array(masks, dtype=bool).reshape(-1, n)


def _cost_groups(costs):
    _, labels = np.unique(np.round(costs, 12), return_inverse=True)
    return labels


def _neighbour_masks(mask, usable, max_active, labels):
    """Single add, drop, and cross-group swap moves from ``mask``.

    Swaps inside one cost group are skipped: the prefix enumeration already
    dominates them.
    """
    on = np.nonzero(mask)[0]
    off = np.nonzero(usable & ~mask)[0]
    out = []
    for i in on:
        m = mask.copy()
        m[i] = False
        out.append(m)
    if mask.sum() < max_active:
        for j in off:
            m = mask.copy()
            m[j] = True
            out.append(m)
    for i in on:
        for j in off:
            if labels[i] != labels[j]:
                m = mask.copy()
                m[i] = False
                m[j] = True
                out.append(m)
    return np.array(out, dtype=bool).reshape(-1, mask.size)


def best_response(weights, costs, budget: float, alpha: float, floor: float,
                  options: SolverOptions | None = None) -> np.ndarray:
    """Maximize ``sum_i (w_i exp(-alpha/m_i) - cost_i) [m_i > 0]`` under the budget.

    Sources with nonpositive weight never enter the support.  Ties between
    supports are broken toward the earlier candidate, so the result is
    deterministic.
    """
    weights = np.asarray(weights, dtype=float)
    costs = np.asarray(costs, dtype=float)
    return best_responses(weights[None], costs[None], budget, alpha, floor, options)[0]


def best_responses(weights, costs, budget: float, alpha: float, floor: float,
                   options: SolverOptions | None = None) -> np.ndarray:
    """Row-wise :func:`best_response` for a batch of independent agents.

    ``weights`` and ``costs`` have shape ``(agents, sources)``; every agent
    shares the same budget and floor.
    """
    options = options or SolverOptions()
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    costs = np.atleast_2d(np.asarray(costs, dtype=float))
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(costs))
            and np.isfinite(budget) and np.isfinite(floor)):
        raise InvalidInputError("best_response received non-finite input")
    n_agents, n = weights.shape
    rates = np.zeros((n_agents, n))
    max_active = int(np.floor(budget / floor * (1 + 1e-12))) if floor > 0 else n
    usable = weights > 0
    if n == 0 or max_active == 0 or not usable.any():
        return rates
    fill_w = np.where(usable, weights, 1.0)

    best_value = np.zeros(n_agents)
    best_mask = np.zeros((n_agents, n), dtype=bool)

    def consider(masks, owners):
        if masks.shape[0] == 0:
            return np.zeros(n_agents, dtype=bool)
        r = _fill_masks(fill_w[owners], masks, alpha, budget, floor, budget,
                        options.rate_tol, options.multiplier_tol)
        v = _values(weights[owners], costs[owners], r, alpha)
        improved = np.zeros(n_agents, dtype=bool)
        for a in np.unique(owners):
            rows = np.nonzero(owners == a)[0]
            i = rows[int(np.argmax(v[rows]))]
            if v[i] > best_value[a] + options.potential_tol:
                best_value[a], best_mask[a], rates[a] = v[i], masks[i], r[i]
                improved[a] = True
        return improved

    masks, owners = [], []
    for a in range(n_agents):
        u = usable[a]
        m = _candidate_masks(weights[a, u], costs[a, u], max_active)
        full = np.zeros((m.shape[0], n), dtype=bool)
        full[:, u] = m
        masks.append(full)
        owners.append(np.full(m.shape[0], a))
    consider(np.concatenate(masks), np.concatenate(owners))

    if options.local_search:
        active = best_mask.any(axis=1)
        for _ in range(4 * n):
            masks, owners = [], []
            for a in np.nonzero(active)[0]:
                m = _neighbour_masks(best_mask[a], usable[a], max_active, _cost_groups(costs[a]))
                masks.append(m)
                owners.append(np.full(m.shape[0], a))
            if not masks:
                break
            active = consider(np.concatenate(masks), np.concatenate(owners))
            if not active.any():
                break
    return _snap(rates, floor)


def _snap(rates, floor):
    # rates a hair below the floor from round-off are lifted onto it
    rates = rates.copy()
    near = (rates > 0) & (rates < floor)
    rates[near] = floor
    return rates


# --------------------------------------------------------------------------
# The two agent types


def core_sources(allocation: Allocation, config: CommunityConfig):
    """Weights and fixed costs of the core's follow decisions."""
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)
    to_core = allocation.periphery_to_core
    followers = to_core > 0
    d = delay_factor(to_core, config.alpha)
    weights = config.rate_produce * (P.T @ d)            # sum_y p(z|y) D(mu(yc|y))
    n_followers = followers.sum() - followers            # y != z
    costs = config.rate_produce * config.cost * n_followers
    return weights, costs


def prospective_core_sources(config: CommunityConfig):
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)
    K = config.num_periphery
    weights = config.rate_produce * P.sum(axis=0)
    costs = np.full(K, config.rate_produce * config.cost * (K - 1))
    return weights, costs


def periphery_sources(y: int, allocation: Allocation, config: CommunityConfig):
    """Weights and costs of agent ``y``'s sources ordered (core, z=0..K-1, outside).

    The entry for ``z = y`` carries zero weight so it is never selected.
    """
    P = config.interest_matrix
    np.fill_diagonal(P, 0.0)
    core_on = allocation.core_rates > 0
    relay = P[y] @ delay_factor(allocation.core_rates, config.alpha)
    n_followed = core_on.sum() - core_on[y]
    rp, c = config.rate_produce, config.cost
    weights = np.concatenate(([rp * relay], rp * P[y], [config.rate_outside * config.interest_outside]))
    costs = np.concatenate(([rp * c * n_followed], np.full(config.num_periphery, rp * c), [0.0]))
    return weights, costs


def best_response_core(allocation: Allocation, config: CommunityConfig,
                       options: SolverOptions | None = None) -> np.ndarray:
    """Core rates maximizing the periphery's relayed utility given their rates.

    With no periphery agent following the core, every allocation is a best
    response (the objective is identically zero).  The tie is broken toward
    the prospective optimum: the best response against a periphery that
    follows the core with no delay.
    """
    weights, costs = core_sources(allocation, config)
    if not np.any(allocation.periphery_to_core > 0):
        weights, costs = prospective_core_sources(config)
    return best_response(weights, costs, config.budget_core, config.alpha, config.mu_floor, options)


def best_response_periphery(y: int, allocation: Allocation, config: CommunityConfig,
                            options: SolverOptions | None = None) -> PeripheryResponse:
    weights, costs = periphery_sources(y, allocation, config)
    rates = best_response(weights, costs, config.budget_periphery, config.alpha,
                          config.mu_floor, options)
    direct = rates[1:-1].copy()
    direct[y] = 0.0
    return PeripheryResponse(float(rates[0]), direct, float(rates[-1]))


def core_marginals(allocation: Allocation, config: CommunityConfig) -> np.ndarray:
    weights, _ = core_sources(allocation, config)
    rates = allocation.core_rates
    return np.where(rates > 0, marginal(weights, np.where(rates > 0, rates, 1.0), config.alpha), np.nan)


def periphery_marginals(y: int, allocation: Allocation, config: CommunityConfig) -> np.ndarray:
    """Marginals in (core, z=0..K-1, outside) order; NaN where the rate is zero."""
    weights, _ = periphery_sources(y, allocation, config)
    rates = np.concatenate(([allocation.periphery_to_core[y]],
                            allocation.periphery_to_periphery[y],
                            [allocation.outside[y]]))
    return np.where(rates > 0, marginal(weights, np.where(rates > 0, rates, 1.0), config.alpha), np.nan)


# --------------------------------------------------------------------------
# Dynamics


def initial_core_rates(config: CommunityConfig, mode: str, seed: int = 0) -> np.ndarray:
    K = config.num_periphery
    floor = config.mu_floor
    budget = config.budget_core
    affordable = min(K, int(np.floor(budget / floor * (1 + 1e-12))))
    rates = np.zeros(K)
    if affordable == 0:
        return rates
    order = np.argsort(config.center_distance, kind="stable")
    if mode == "uniform-floor":
        rates[order[:affordable]] = floor
    elif mode == "uniform-budget":
        rates[order[:affordable]] = budget / affordable
    elif mode == "random-seeded":
        rng = np.random.default_rng(seed)
        support = np.sort(rng.choice(K, size=affordable, replace=False))
        share = rng.dirichlet(np.ones(affordable))
        rates[support] = floor + share * (budget - affordable * floor)
    else:
        raise InvalidInputError(f"unknown init mode {mode!r}")
    return rates


def periphery_sweep(allocation: Allocation, config: CommunityConfig,
                    options: SolverOptions | None = None) -> Allocation:
    """Every periphery agent best-responds to the current core rates.

    The responses only depend on the core rates, so they are computed as
    one batch; the result equals responding in ascending index order.
    """
    K = config.num_periphery
    sources = [periphery_sources(y, allocation, config) for y in range(K)]
    weights = np.array([w for w, _ in sources])
    costs = np.array([c for _, c in sources])
    rates = best_responses(weights, costs, config.budget_periphery, config.alpha,
                           config.mu_floor, options)
    pp = rates[:, 1:-1].copy()
    np.fill_diagonal(pp, 0.0)
    return Allocation(allocation.core_rates, rates[:, 0], pp, rates[:, -1])


def _run_dynamics(alloc, config, options, trace=None):
    """Alternate core and periphery best responses until a sweep moves less than the tolerance."""
    step = np.inf
    for iteration in range(1, options.max_iterations + 1):
        before = alloc
        alloc = alloc.with_core(best_response_core(alloc, config, options))
        if trace is not None:
            trace.append(potential(alloc, config))
        alloc = periphery_sweep(alloc, config, options)
        if trace is not None:
            trace.append(potential(alloc, config))
        step = alloc.distance(before)
        if step < options.convergence_tol:
            return alloc, iteration, True, step
    return alloc, options.max_iterations, False, step


def _toggled_core(alloc, z, config, options):
    """Core rates with agent ``z`` forced into (or out of) the current support."""
    rates = alloc.core_rates
    support = rates > 0
    support[z] = not support[z]
    if support.sum() * config.mu_floor > config.budget_core * (1 + 1e-12):
        return None
    new = np.zeros_like(rates)
    if support.any():
        weights, _ = core_sources(alloc, config)
        if np.any(weights[support] <= 0):
            weights, _ = prospective_core_sources(config)
        new[support] = water_fill(weights[support], config.budget_core, config.alpha,
                                  config.mu_floor, options=options)
    return new


def solve_equilibrium(config: CommunityConfig, options: SolverOptions | None = None) -> EquilibriumResult:
    """Run core/periphery best-response dynamics to the equilibrium.

    The initial core allocation is set by ``options.init_mode``; the periphery
    responds to it, and then core and periphery alternate until the sup-norm
    change over a full sweep drops below ``convergence_tol``.

    Because the strategy sets ``{0} U [floor, budget]`` are not convex, the
    dynamics can stop at an equilibrium that is not the potential maximizer
    (for instance one where the core ignores an edge agent).  With
    ``options.escape`` set, each converged point is challenged by toggling
    one core link, re-running the dynamics from there, and moving to the
    best resulting equilibrium if it raises the potential by more than
    ``convergence_tol``.  The trace records only accepted states, so it
    stays nondecreasing.
    """
    options = options or SolverOptions()
    report = validate_assumptions(config)
    if not report.passed:
        raise AssumptionViolation("; ".join(report.messages))

    K = config.num_periphery
    alloc = Allocation.zeros(K).with_core(initial_core_rates(config, options.init_mode, options.seed))
    trace = [potential(alloc, config)]
    alloc = periphery_sweep(alloc, config, options)
    trace.append(potential(alloc, config))
    alloc, iterations, converged, step = _run_dynamics(alloc, config, options, trace)

    escapes = 0
    while options.escape and converged:
        current = potential(alloc, config)
        best = None
        for z in range(K):
            core = _toggled_core(alloc, z, config, options)
            if core is None:
                continue
            trial = periphery_sweep(alloc.with_core(core), config, options)
            trial, _, ok, _ = _run_dynamics(trial, config, options)
            g = potential(trial, config)
            if ok and g > current + options.convergence_tol and (best is None or g > best[0]):
                best = (g, trial)
        if best is None:
            break
        escapes += 1
        log.debug("escape %d raised the potential from %.12g to %.12g", escapes, current, best[0])
        alloc = best[1]
        trace.append(best[0])

    if not converged:
        log.warning("best-response dynamics did not converge in %d iterations (last step %.3g)",
                    options.max_iterations, step)
    return EquilibriumResult(
        allocation=alloc,
        potential_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        per_agent_utilities=tuple(periphery_utilities(alloc, config)),
        core_objective=core_objective(alloc, config),
        final_step=float(step),
        init_mode=options.init_mode,
        spacing=config.spacing,
        escapes=escapes,
    )


def with_options(options: SolverOptions | None, **changes) -> SolverOptions:
    return replace(options or SolverOptions(), **changes)


def evaluate_allocation(allocation: Allocation, config: CommunityConfig,
                        converged: bool = True) -> EquilibriumResult:
    """Wrap a given allocation as a result, e.g. to run checks on hand-built profiles."""
    g = potential(allocation, config)
    return EquilibriumResult(
        allocation=allocation,
        potential_trace=(g,),
        iterations=0,
        converged=converged,
        per_agent_utilities=tuple(periphery_utilities(allocation, config)),
        core_objective=core_objective(allocation, config),
        final_step=0.0,
        init_mode="given",
        spacing=config.spacing,
    )

import itertools

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from coreperiphery.analysis import agent_utility, random_allocation
from coreperiphery.model import (
    Allocation,
    CommunityConfig,
    InterestKernel,
    delay_factor,
    floor_rate,
    periphery_utility,
    potential,
)
from coreperiphery.solver import EquilibriumResult, best_response, marginal, water_fill, solve_equilibrium

common = settings(deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def configs(draw, max_k=7):
    half = draw(st.floats(0.2, 2.0))
    intercept = draw(st.floats(0.3, 1.0))
    slope = draw(st.floats(0.0, 0.9)) * intercept / (2 * half)
    return CommunityConfig(
        num_periphery=draw(st.integers(2, max_k)),
        center=draw(st.floats(-3.0, 3.0)),
        half_width=half,
        alpha=draw(st.floats(0.3, 3.0)),
        cost=draw(st.floats(0.37, 0.95)),
        rate_produce=draw(st.floats(0.2, 2.0)),
        rate_outside=draw(st.floats(0.2, 2.0)),
        interest_outside=draw(st.floats(0.0, 1.0)),
        budget_core=draw(st.floats(0.5, 60.0)),
        budget_periphery=draw(st.floats(0.5, 30.0)),
        kernel=InterestKernel(intercept, slope),
    )


@common
@given(configs())
def test_interest_symmetric_and_mirrored(cfg):
    P = cfg.interest_matrix
    assert np.array_equal(P, P.T)
    assert np.allclose(P, P[::-1, ::-1], atol=1e-12)
    assert np.all(P > 0)
    d = cfg.center_distance
    assert np.array_equal(d, d[::-1])


@common
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.1, 5.0))
def test_delay_bounded_and_increasing(m1, m2, alpha):
    lo, hi = sorted((m1, m2))
    d_lo, d_hi = delay_factor(lo, alpha), delay_factor(hi, alpha)
    assert 0.0 <= d_lo <= d_hi < 1.0


@common
@given(st.lists(st.floats(0.05, 5.0), min_size=1, max_size=8), st.floats(0.3, 3.0),
       st.floats(0.38, 0.95), st.floats(1.0, 40.0))
def test_water_fill_optimality(weights, alpha, cost, scale):
    w = np.array(weights)
    floor = floor_rate(alpha, cost)
    budget = len(w) * floor * scale
    r = water_fill(w, budget, alpha, floor)
    assert abs(r.sum() - budget) <= 1e-9 * budget
    assert np.all(r >= floor * (1 - 1e-12))
    inner = r > floor * (1 + 1e-9)
    g = marginal(w, r, alpha)
    if inner.sum() > 1:
        assert np.ptp(g[inner]) <= 1e-7 * np.max(g[inner])
    if inner.any() and (~inner).any():
        # sources pinned at the floor must not have a higher marginal
        assert np.max(g[~inner]) <= np.min(g[inner]) * (1 + 1e-7)


def exhaustive(w, c, budget, alpha, floor):
    best = 0.0
    for size in range(1, len(w) + 1):
        if size * floor > budget:
            break
        for idx in map(list, itertools.combinations(range(len(w)), size)):
            if np.any(w[idx] <= 0):
                continue
            r = water_fill(w[idx], budget, alpha, floor)
            best = max(best, float(np.sum(w[idx] * np.exp(-alpha / r) - c[idx])))
    return best


@common
@given(st.lists(st.tuples(st.floats(-0.5, 2.0), st.sampled_from([0.0, 0.4, 0.7])), min_size=1, max_size=6),
       st.floats(0.5, 12.0))
def test_best_response_is_exhaustive_optimum(items, budget):
    w = np.array([a for a, _ in items])
    c = np.array([b for _, b in items])
    floor = floor_rate(1.0, 0.4)
    r = best_response(w, c, budget, 1.0, floor)
    on = r > 0
    value = float(np.sum(np.where(on, w * delay_factor(r, 1.0) - c, 0.0)))
    assert r.sum() <= budget * (1 + 1e-12)
    assert np.all(~on | (r >= floor * (1 - 1e-12)))
    assert value >= exhaustive(w, c, budget, 1.0, floor) - 1e-10


@common
@given(configs(max_k=5), st.integers(0, 2**32 - 1))
def test_potential_tracks_unilateral_deviations(cfg, seed):
    rng = np.random.default_rng(seed)
    base, other = random_allocation(cfg, rng), random_allocation(cfg, rng)
    y = int(rng.integers(cfg.num_periphery))
    moved = base.with_periphery(y, other.periphery_to_core[y], other.periphery_to_periphery[y],
                                other.outside[y])
    du = periphery_utility(y, moved, cfg).total - periphery_utility(y, base, cfg).total
    dg = potential(moved, cfg) - potential(base, cfg)
    assert abs(du - dg) <= 1e-9 * max(1.0, abs(dg))
    # the scalar route agrees with the vectorized one
    assert abs(agent_utility(y, moved, cfg) - periphery_utility(y, moved, cfg).total) <= 1e-9


@common
@given(configs(max_k=5), st.integers(0, 2**32 - 1))
def test_random_allocations_feasible_and_round_trip(cfg, seed):
    alloc = random_allocation(cfg, np.random.default_rng(seed))
    assert alloc.violations(cfg) == []
    assert Allocation.from_dict(alloc.to_dict()) == alloc


@common
@given(configs())
def test_config_round_trip(cfg):
    assert CommunityConfig.from_dict(cfg.to_dict()) == cfg


@settings(deadline=None, max_examples=15)
@given(st.integers(2, 5), st.floats(5.0, 40.0), st.floats(2.0, 12.0))
def test_equilibrium_feasible_and_round_trips(K, mc, mp):
    cfg = CommunityConfig(num_periphery=K, budget_core=mc, budget_periphery=mp)
    res = solve_equilibrium(cfg)
    assert res.allocation.violations(cfg) == []
    assert EquilibriumResult.from_dict(res.to_dict()) == res
    assert abs(res.potential - potential(res.allocation, cfg)) <= 1e-12 * max(1.0, abs(res.potential))

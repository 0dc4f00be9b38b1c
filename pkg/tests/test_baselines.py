import math

import numpy as np
import pytest

from ganmpc import baselines, ga, models, nmpc
from ganmpc.errors import ConfigError


def toy_spec(**over):
    base = dict(du_min=np.array([-24.0]), du_max=np.array([24.0]),
                x_min=np.array([-math.pi, -2.0, -math.pi, -2.0, -10.0]),
                x_max=np.array([math.pi, 2.0, math.pi, 2.0, 10.0]))
    base.update(over)
    return models.sfjr_spec(**base)


def zero_refs(spec, n_cycles=30, v=0.0):
    states = np.zeros((n_cycles + spec.h, spec.m))
    inputs = np.full((n_cycles + spec.h, spec.n), v)
    return nmpc.ReferenceTrack(states, inputs)


def quad_setup(target=2.0, h=1):
    spec = toy_spec(q=np.zeros(5), h=h)
    refs = zero_refs(spec, v=target)
    prev = nmpc.HorizonSolution(np.full(spec.gene_count, 12.0))
    return spec, refs, prev


# ---------------------------------------------------------------------------
# OG
# ---------------------------------------------------------------------------

def test_og_uses_full_population_every_cycle():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=60, xi=5, generations=2, epsilon=None, upsilon=None, seed=0)
    for c in range(3):
        out = baselines.og_solve(spec, np.zeros(5), refs, c, prev, cfg,
                                 rng=np.random.default_rng(c))
        assert out.population_size_used == 60
        assert out.evaluations == 60 * out.generations_run
        prev = out.best


def test_og_finds_toy_quadratic_argmin():
    spec, refs, prev = quad_setup(target=2.0)
    cfg = ga.GaConfig(nu=300, xi=5, generations=6, epsilon=None, upsilon=None, seed=1)
    out = baselines.og_solve(spec, np.zeros(5), refs, 0, prev, cfg)
    np.testing.assert_allclose(out.best.genes, 2.0, atol=0.5)


def test_og_deterministic():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=50, xi=5, generations=3, epsilon=None, upsilon=None, seed=5)
    a = baselines.og_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                           rng=np.random.default_rng(5))
    b = baselines.og_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                           rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.best.genes, b.best.genes)
    assert a.evaluations == b.evaluations


# ---------------------------------------------------------------------------
# MG
# ---------------------------------------------------------------------------

def test_mg_population_split_arithmetic():
    spec = toy_spec()
    center = nmpc.HorizonSolution(np.full(spec.gene_count, 12.0))
    prev_pop = np.tile(np.arange(1.0, 11.0), (5, 1))  # 5 ranked members, h=10
    pop = baselines.mg_population(spec, center, prev_pop, 10, np.random.default_rng(0))
    assert pop.shape == (10, spec.gene_count)
    # the last floor(0.2*10)=2 rows are the shifted top-2 previous members
    expected_shift = np.concatenate([np.arange(2.0, 11.0), [10.0]])
    np.testing.assert_array_equal(pop[-1], expected_shift)
    np.testing.assert_array_equal(pop[-2], expected_shift)
    # the other ceil(0.8*10)=8 rows are fresh samples within bounds
    assert np.all(pop[:8] >= 0.0) and np.all(pop[:8] <= 24.0)


def test_mg_time_shift_replicates_tail():
    shifted = baselines.time_shift_population(np.array([[1.0, 2.0, 3.0]]), 1)
    np.testing.assert_array_equal(shifted, [[2.0, 3.0, 3.0]])
    two_inputs = baselines.time_shift_population(np.array([[1.0, 10.0, 2.0, 20.0]]), 2)
    np.testing.assert_array_equal(two_inputs, [[2.0, 20.0, 2.0, 20.0]])


def test_mg_cycle0_degenerates_to_og():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=40, xi=5, generations=2, epsilon=None, upsilon=None, seed=2)
    mg = baselines.mg_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                            rng=np.random.default_rng(2), prev_population=None)
    og = baselines.og_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                            rng=np.random.default_rng(2))
    np.testing.assert_array_equal(mg.best.genes, og.best.genes)


def test_mg_keeps_ranked_population_for_next_cycle():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=30, xi=5, generations=2, epsilon=None, upsilon=None, seed=3)
    out = baselines.mg_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                             rng=np.random.default_rng(3))
    assert out.ranked_population is not None
    assert out.ranked_population.shape[0] == 30
    assert np.all(np.diff(out.ranked_costs[: int((~np.isinf(out.ranked_costs)).sum())]) >= 0)


# ---------------------------------------------------------------------------
# PSO
# ---------------------------------------------------------------------------

def test_pso_frozen_swarm_returns_best_initial_sample():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=40, xi=5, generations=4, epsilon=None, upsilon=None, seed=4)
    frozen = baselines.PsoConfig(w=0.0, c1=0.0, c2=0.0)
    out = baselines.pso_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                              rng=np.random.default_rng(4), pso=frozen)
    # replicate the initial sampling with the same stream
    rng = np.random.default_rng(4)
    lo = np.tile(spec.u_min, spec.h)
    hi = np.tile(spec.u_max, spec.h)
    pos = lo + (hi - lo) * rng.random((40, spec.gene_count))
    traj, ok = nmpc.rollout_population(spec, np.zeros(5), pos)
    costs = nmpc.population_costs(spec, traj, pos, refs, 0, ok=ok)
    feas = nmpc.feasibility_masks(spec, pos, traj, ok, prev.first_input(1))
    best = int(np.where(feas, costs, np.inf).argmin())
    np.testing.assert_array_equal(out.best.genes, pos[best])


def test_pso_toy_quadratic_convergence():
    spec, refs, prev = quad_setup(target=2.0)
    cfg = ga.GaConfig(nu=30, xi=5, generations=50, epsilon=None, upsilon=None, seed=5)
    out = baselines.pso_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                              rng=np.random.default_rng(5), pso=baselines.PsoConfig())
    np.testing.assert_allclose(out.best.genes, 2.0, atol=0.1)


def test_pso_positions_stay_in_box():
    rng = np.random.default_rng(6)
    cfg = baselines.PsoConfig(w=1.2, c1=2.5, c2=2.5)
    lo, hi = np.zeros(4), np.full(4, 24.0)
    pos = rng.uniform(0, 24, (200, 4))
    vel = rng.normal(0, 20, (200, 4))
    for _ in range(500):
        pull_p = rng.normal(0, 30, pos.shape)
        pull_g = rng.normal(0, 30, pos.shape)
        pos, vel = baselines.pso_advance(pos, vel, pull_p, pull_g, cfg,
                                         rng.random(pos.shape), rng.random(pos.shape),
                                         lo, hi)
        assert np.all(pos >= lo) and np.all(pos <= hi)


# ---------------------------------------------------------------------------
# DE
# ---------------------------------------------------------------------------

def test_de_stationary_without_variation():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=20, xi=5, generations=5, epsilon=None, upsilon=None, seed=7)
    still = baselines.DeConfig(f=0.0, cr=0.0)
    out = baselines.de_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                             rng=np.random.default_rng(7), de=still)
    # best equals the best initial sample (population never moves)
    rng = np.random.default_rng(7)
    lo = np.tile(spec.u_min, spec.h)
    hi = np.tile(spec.u_max, spec.h)
    pos = lo + (hi - lo) * rng.random((20, spec.gene_count))
    traj, ok = nmpc.rollout_population(spec, np.zeros(5), pos)
    costs = nmpc.population_costs(spec, traj, pos, refs, 0, ok=ok)
    feas = nmpc.feasibility_masks(spec, pos, traj, ok, prev.first_input(1))
    best = int(np.where(feas, costs, np.inf).argmin())
    assert out.best.cost == pytest.approx(costs[best])


def test_de_greedy_acceptance_rule():
    t = np.array([True, True, False, False, True])
    i = np.array([False, True, True, False, True])
    tc = np.array([5.0, 2.0, 1.0, 3.0, 4.0])
    ic = np.array([1.0, 1.0, 9.0, 4.0, 4.0])
    accept = baselines.de_accept_mask(t, i, tc, ic)
    np.testing.assert_array_equal(accept, [True, False, False, True, True])


def test_de_best_monotone_in_iterations():
    spec, refs, prev = quad_setup()
    costs = []
    for iters in range(1, 6):
        cfg = ga.GaConfig(nu=20, xi=5, generations=iters, epsilon=None,
                          upsilon=None, seed=8)
        out = baselines.de_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                                 rng=np.random.default_rng(8))
        costs.append(out.best.cost)
    assert all(a >= b for a, b in zip(costs, costs[1:]))


def test_de_toy_quadratic_convergence():
    spec, refs, prev = quad_setup(target=2.0)
    cfg = ga.GaConfig(nu=30, xi=5, generations=60, epsilon=None, upsilon=None, seed=9)
    out = baselines.de_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                             rng=np.random.default_rng(9))
    np.testing.assert_allclose(out.best.genes, 2.0, atol=0.1)


def test_de_requires_four_members():
    spec, refs, prev = quad_setup()
    cfg = ga.GaConfig(nu=10, xi=2, generations=2, epsilon=None, upsilon=None)
    with pytest.raises(ConfigError):
        baselines.de_solve(spec, np.zeros(5), refs, 0, prev, cfg,
                           de=baselines.DeConfig(population=3))


# ---------------------------------------------------------------------------
# shared contract
# ---------------------------------------------------------------------------

SOLVER_CALLS = {
    "og": lambda spec, x0, refs, c, prev, cfg, clock, rng, pa:
        baselines.og_solve(spec, x0, refs, c, prev, cfg, clock, rng=rng, prev_applied=pa),
    "mg": lambda spec, x0, refs, c, prev, cfg, clock, rng, pa:
        baselines.mg_solve(spec, x0, refs, c, prev, cfg, clock, rng=rng, prev_applied=pa),
    "pso": lambda spec, x0, refs, c, prev, cfg, clock, rng, pa:
        baselines.pso_solve(spec, x0, refs, c, prev, cfg, clock, rng=rng, prev_applied=pa),
    "de": lambda spec, x0, refs, c, prev, cfg, clock, rng, pa:
        baselines.de_solve(spec, x0, refs, c, prev, cfg, clock, rng=rng, prev_applied=pa),
    "proposed": lambda spec, x0, refs, c, prev, cfg, clock, rng, pa:
        ga.solve_cycle(spec, x0, refs, c, 0.3 * spec.beta, max(cfg.xi, 12), prev,
                       cfg, clock, rng=rng, prev_applied=pa),
}


@pytest.mark.parametrize("solver", sorted(SOLVER_CALLS))
def test_contract_bounds_rates_budget_determinism(solver):
    spec = models.sfjr_spec(du_min=np.array([-3.0]), du_max=np.array([3.0]),
                            x_min=np.array([-math.pi, -1.5, -math.pi, -1.5, -10.0]),
                            x_max=np.array([math.pi, 1.5, math.pi, 1.5, 10.0]))
    refs = zero_refs(spec, n_cycles=10, v=2.0)
    cfg = ga.GaConfig(nu=24, xi=4, generations=3, epsilon=None, upsilon=0.95, seed=11)
    call = SOLVER_CALLS[solver]

    def run_cycles():
        prev = ga.bootstrap_solution(spec, refs, 0)
        applied_prev = prev.first_input(1)
        log = []
        for c in range(5):
            clock = ga.SimulatedClock(eval_cost=1e-6)
            rng = np.random.default_rng(100 + c)
            out = call(spec, np.zeros(5), refs, c, prev, cfg, clock, rng, applied_prev)
            u = out.applied_input
            assert spec.u_min[0] - 1e-12 <= u[0] <= spec.u_max[0] + 1e-12
            d = u[0] - applied_prev[0]
            assert spec.du_min[0] - 1e-9 <= d <= spec.du_max[0] + 1e-9
            assert out.generations_run <= cfg.generations
            log.append((u[0], out.best.cost, out.evaluations, out.used_fallback))
            prev, applied_prev = out.best, u
        return log

    assert run_cycles() == run_cycles()


@pytest.mark.parametrize("solver", sorted(SOLVER_CALLS))
def test_contract_epsilon_early_exit(solver):
    spec = toy_spec()
    refs = zero_refs(spec, v=0.0)
    cfg = ga.GaConfig(nu=20, xi=4, generations=8, epsilon=1e9, upsilon=None, seed=12)
    prev = nmpc.HorizonSolution(np.zeros(spec.gene_count))
    out = SOLVER_CALLS[solver](spec, np.zeros(5), refs, 1, prev, cfg,
                               ga.SimulatedClock(0.0), np.random.default_rng(12),
                               np.zeros(1))
    assert out.converged
    assert out.generations_run == 1
    assert out.evaluations == out.population_size_used


@pytest.mark.parametrize("solver", sorted(SOLVER_CALLS))
def test_contract_budget_limits_iterations(solver):
    spec = toy_spec()
    refs = zero_refs(spec, v=15.0)
    cfg = ga.GaConfig(nu=20, xi=4, generations=50, epsilon=None, upsilon=0.5, seed=13)
    prev = nmpc.HorizonSolution(np.full(spec.gene_count, 15.0))
    budget = 0.5 * spec.ts
    eval_cost = budget / (20 * 3) + 1e-12
    clock = ga.SimulatedClock(eval_cost=eval_cost)
    out = SOLVER_CALLS[solver](spec, np.zeros(5), refs, 1, prev, cfg, clock,
                               np.random.default_rng(13), np.full(1, 15.0))
    # no round may start after the budget elapsed: at most one round's charge overhang
    assert out.wall_time - out.population_size_used * eval_cost <= budget + 1e-12
    assert out.generations_run < cfg.generations


@pytest.mark.parametrize("solver", sorted(SOLVER_CALLS))
def test_contract_fallback_applies_shifted_previous(solver):
    # prev_applied pins the rate window far from anything samplable
    spec = models.sfjr_spec()  # du = +-0.1
    refs = zero_refs(spec, v=0.0)
    cfg = ga.GaConfig(nu=16, xi=4, generations=2, epsilon=None, upsilon=None, seed=14)
    steps = np.concatenate([[0.0], np.full(spec.h - 1, 20.0)])
    prev = nmpc.HorizonSolution(steps)
    out = SOLVER_CALLS[solver](spec, np.zeros(5), refs, 1, prev, cfg,
                               ga.SimulatedClock(0.0), np.random.default_rng(14),
                               np.zeros(1))
    assert out.used_fallback
    np.testing.assert_array_equal(out.applied_input, prev.genes[1:2])

"""Comparison solvers: original GA, modified GA, PSO and DE.

All four honour the same per-cycle NMPC contract as the margin-adaptive
GA: input/rate/state feasibility screening, terminal-set screening, the
epsilon early exit, the upsilon*ts budget, and the shifted-previous-solution
fallback.  OG/MG always search the physical margins with a fixed maximum
population.
"""

from dataclasses import dataclass
import enum

import numpy as np

from . import ga
from .errors import ConfigError
from .nmpc import (
    HorizonSolution,
    TerminalSet,
    evaluate_cost,
    feasibility_masks,
    population_costs,
    rollout_population,
    terminal_mask,
)


class SolverKind(enum.Enum):
    OG = "og"
    MG = "mg"
    PSO = "pso"
    DE = "de"
    PROPOSED = "proposed"


@dataclass
class PsoConfig:
    """Global-best PSO; canonical coefficients, swarm size defaults to nu."""

    w: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    iterations: int | None = None
    swarm: int | None = None


@dataclass
class DeConfig:
    """DE/rand/1/bin; population defaults to nu."""

    f: float = 0.6
    cr: float = 0.8
    iterations: int | None = None
    population: int | None = None


def og_solve(spec, x0, refs, c, prev_best, cfg, clock=None, *, rng=None,
             prev_applied=None, terminal=None):
    """Original GA: physical margins and the full population every cycle."""
    return ga.solve_cycle(spec, x0, refs, c, spec.beta, cfg.nu, prev_best, cfg,
                          clock, rng=rng, prev_applied=prev_applied,
                          terminal=terminal)


def time_shift_population(members, n):
    """Shift each member one step forward, replicating the final step."""
    members = np.atleast_2d(np.asarray(members, dtype=float))
    return np.concatenate([members[:, n:], members[:, -n:]], axis=1)


def mg_population(spec, center, prev_population, p, rng):
    """MG initial population: ceil(0.8p) fresh physical-margin samples plus
    floor(0.2p) time-shifted elites from the previous final ranking."""
    n_shift = int(np.floor(0.2 * p))
    if prev_population is None or len(prev_population) == 0 or n_shift == 0:
        return None
    elites = np.asarray(prev_population, dtype=float)[:n_shift]
    shifted = time_shift_population(elites, spec.n)
    rand = ga.sample_population(center, spec.beta, p - shifted.shape[0], spec, rng)
    return np.concatenate([rand, shifted], axis=0)


def mg_solve(spec, x0, refs, c, prev_best, cfg, clock=None, *, rng=None,
             prev_applied=None, terminal=None, prev_population=None):
    """Modified GA: 80% fresh physical-margin samples, 20% time-shifted elites.

    ``prev_population`` is the previous cycle's final ranked population
    (best first); cycle 0, or a missing history, degenerates to OG.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    p = cfg.nu
    center = prev_best.shifted(spec.n)
    init = mg_population(spec, center, prev_population, p, rng)
    return ga.solve_cycle(spec, x0, refs, c, spec.beta, p, prev_best, cfg,
                          clock, rng=rng, prev_applied=prev_applied,
                          terminal=terminal, initial_population=init,
                          keep_population=True)


def _finish(spec, x0, refs, c, best_genes, best_cost, converged, gens, clock,
            center, evals, p, prev_applied):
    if best_genes is None:
        fb_cost = evaluate_cost(spec, x0, center, refs, c)
        best = HorizonSolution(center.genes.copy(), cost=fb_cost, feasible=False)
        if c == 0:
            traj, ok = rollout_population(spec, x0, center.genes[None, :])
            fb_ok = feasibility_masks(spec, center.genes[None, :], traj, ok, prev_applied)
            if not fb_ok[0]:
                raise ConfigError("cycle 0 found no feasible candidate and the bootstrap "
                                  "fallback is itself infeasible; experiment setup is broken")
        return ga.CycleOutcome(best, best.first_input(spec.n), False, True, gens,
                               clock.elapsed(), p, evals)
    best = HorizonSolution(best_genes, cost=best_cost, feasible=True)
    return ga.CycleOutcome(best, best.first_input(spec.n), converged, False, gens,
                           clock.elapsed(), p, evals)


def _screen(spec, x0, pop, refs, c, prev_applied, terminal):
    traj, ok = rollout_population(spec, x0, pop)
    costs = population_costs(spec, traj, pop, refs, c, ok=ok)
    feas = feasibility_masks(spec, pop, traj, ok, prev_applied) & terminal_mask(traj, terminal)
    return costs, feas


def pso_solve(spec, x0, refs, c, prev_best, cfg, clock=None, *, rng=None,
              prev_applied=None, terminal=None, pso=None):
    """Global-best PSO over the physical input box with the shared contract.

    Velocity update v <- w v + c1 r1 (pbest - x) + c2 r2 (gbest - x);
    positions are clipped to the box.  Particles without a feasible
    personal best yet exert no pbest pull.
    """
    pso = pso if pso is not None else PsoConfig()
    clock = clock if clock is not None else ga.WallClock()
    clock.restart()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    terminal = terminal if terminal is not None else TerminalSet.unbounded(spec.m)
    if prev_applied is None:
        prev_applied = prev_best.first_input(spec.n)
    center = prev_best.shifted(spec.n)

    p = pso.swarm if pso.swarm is not None else cfg.nu
    iters = pso.iterations if pso.iterations is not None else cfg.generations
    lo = np.tile(spec.u_min, spec.h)
    hi = np.tile(spec.u_max, spec.h)
    pos = lo + (hi - lo) * rng.random((p, spec.gene_count))
    vel = np.zeros_like(pos)
    pbest = pos.copy()
    pbest_cost = np.full(p, np.inf)
    have_pbest = np.zeros(p, dtype=bool)
    gbest = None
    gbest_cost = np.inf
    evals = 0
    gens = 0
    converged = False

    while gens < iters and ga._within_budget(clock, cfg, spec):
        costs, feas = _screen(spec, x0, pos, refs, c, prev_applied, terminal)
        evals += p
        clock.charge(p)
        gens += 1
        improved = feas & (costs < pbest_cost)
        pbest[improved] = pos[improved]
        pbest_cost[improved] = costs[improved]
        have_pbest |= improved
        if feas.any():
            masked = np.where(feas, costs, np.inf)
            idx = int(masked.argmin())
            if costs[idx] < gbest_cost:
                gbest_cost = float(costs[idx])
                gbest = pos[idx].copy()
        if gbest is not None and cfg.epsilon is not None and gbest_cost <= cfg.epsilon:
            converged = True
            break
        if gens >= iters:
            break
        pull_p = np.where(have_pbest[:, None], pbest - pos, 0.0)
        pull_g = (gbest - pos) if gbest is not None else np.zeros_like(pos)
        pos, vel = pso_advance(pos, vel, pull_p, pull_g, pso,
                               rng.random(pos.shape), rng.random(pos.shape), lo, hi)

    return _finish(spec, x0, refs, c, gbest, gbest_cost, converged, gens, clock,
                   center, evals, p, prev_applied)


def pso_advance(pos, vel, pull_pbest, pull_gbest, cfg, r1, r2, lo, hi):
    """One velocity/position update; positions are clipped to the box."""
    vel = cfg.w * vel + cfg.c1 * r1 * pull_pbest + cfg.c2 * r2 * pull_gbest
    return np.clip(pos + vel, lo, hi), vel


def de_accept_mask(trial_feasible, feasible, trial_costs, costs):
    """Greedy selection: feasibility first, then cost; never worsens a member."""
    return (trial_feasible & ~feasible) | ((trial_feasible == feasible)
                                           & (trial_costs <= costs))


def de_solve(spec, x0, refs, c, prev_best, cfg, clock=None, *, rng=None,
             prev_applied=None, terminal=None, de=None):
    """DE/rand/1/bin with greedy, feasibility-aware selection.

    Mutant x_r1 + F (x_r2 - x_r3) over distinct random members, plain
    binomial crossover (each gene taken from the mutant with probability
    CR, so F=0/CR=0 leaves the population stationary), clipped to the box.
    A trial replaces its parent when it is feasible-and-better or when
    both are infeasible and the trial costs no more.
    """
    de = de if de is not None else DeConfig()
    clock = clock if clock is not None else ga.WallClock()
    clock.restart()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    terminal = terminal if terminal is not None else TerminalSet.unbounded(spec.m)
    if prev_applied is None:
        prev_applied = prev_best.first_input(spec.n)
    center = prev_best.shifted(spec.n)

    p = de.population if de.population is not None else cfg.nu
    if p < 4:
        raise ConfigError("DE/rand/1 needs a population of at least 4")
    iters = de.iterations if de.iterations is not None else cfg.generations
    lo = np.tile(spec.u_min, spec.h)
    hi = np.tile(spec.u_max, spec.h)
    pos = lo + (hi - lo) * rng.random((p, spec.gene_count))

    costs, feas = _screen(spec, x0, pos, refs, c, prev_applied, terminal)
    evals = p
    clock.charge(p)
    gens = 1  # the initial evaluation is round one, matching the GA's accounting
    converged = False
    best_genes, best_cost = None, np.inf

    def track_best():
        nonlocal best_genes, best_cost
        if feas.any():
            masked = np.where(feas, costs, np.inf)
            idx = int(masked.argmin())
            if costs[idx] < best_cost:
                best_cost = float(costs[idx])
                best_genes = pos[idx].copy()

    track_best()
    if best_genes is not None and cfg.epsilon is not None and best_cost <= cfg.epsilon:
        converged = True

    while not converged and gens < iters and ga._within_budget(clock, cfg, spec):
        ridx = np.empty((p, 3), dtype=int)
        for i in range(p):
            choices = rng.permutation(p - 1)[:3]
            ridx[i] = np.where(choices >= i, choices + 1, choices)
        mutant = pos[ridx[:, 0]] + de.f * (pos[ridx[:, 1]] - pos[ridx[:, 2]])
        mutant = np.clip(mutant, lo, hi)
        cross = rng.random(pos.shape) < de.cr
        trial = np.where(cross, mutant, pos)

        t_costs, t_feas = _screen(spec, x0, trial, refs, c, prev_applied, terminal)
        evals += p
        clock.charge(p)
        gens += 1
        accept = de_accept_mask(t_feas, feas, t_costs, costs)
        pos[accept] = trial[accept]
        costs[accept] = t_costs[accept]
        feas[accept] = t_feas[accept]
        track_best()
        if best_genes is not None and cfg.epsilon is not None and best_cost <= cfg.epsilon:
            converged = True

    return _finish(spec, x0, refs, c, best_genes, best_cost, converged, gens, clock,
                   center, evals, p, prev_applied)

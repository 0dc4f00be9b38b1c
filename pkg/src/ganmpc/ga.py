"""Genetic-algorithm NMPC solver with margin-restricted sampling.

One `solve_cycle` call runs the per-cycle GA of the receding-horizon loop:
sample a population inside a margin box around the time-shifted previous
solution, screen infeasible and terminal-violating candidates, evolve under
a generation cap and a time budget, and fall back to the shifted previous
solution when nothing feasible turns up.

The time budget uses an injectable clock so tests and benchmarks are
deterministic; `WallClock` is the real thing, `SimulatedClock` charges a
fixed cost per cost-function evaluation.
"""

from dataclasses import dataclass
import time
import zlib

import numpy as np

from .errors import ConfigError
from .nmpc import (
    HorizonSolution,
    TerminalSet,
    evaluate_cost,
    feasibility_masks,
    fitness,
    population_costs,
    rollout_population,
    terminal_mask,
)


def rng_stream(seed, tag, index=0):
    """Named, reproducible RNG stream keyed by (seed, component tag, index)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(tag.encode()), int(index)]))


# ---------------------------------------------------------------------------
# Clocks
# ---------------------------------------------------------------------------

class WallClock:
    """Real wall-clock budget."""

    def __init__(self):
        self._t0 = time.perf_counter()

    def restart(self):
        self._t0 = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self._t0

    def charge(self, n_evals):
        pass


class ManualClock:
    """Test clock advanced explicitly."""

    def __init__(self):
        self._t = 0.0

    def restart(self):
        self._t = 0.0

    def elapsed(self):
        return self._t

    def advance(self, dt):
        self._t += dt

    def charge(self, n_evals):
        pass


class SimulatedClock:
    """Deterministic clock that charges a fixed cost per cost evaluation."""

    def __init__(self, eval_cost):
        self.eval_cost = float(eval_cost)
        self._t = 0.0

    def restart(self):
        self._t = 0.0

    def elapsed(self):
        return self._t

    def charge(self, n_evals):
        self._t += self.eval_cost * n_evals


# ---------------------------------------------------------------------------
# Configuration and outcome
# ---------------------------------------------------------------------------

@dataclass
class GaConfig:
    """GA hyper-parameters; epsilon/upsilon may be None (no early exit / no budget)."""

    nu: int = 100
    xi: int = 10
    generations: int = 3
    crossover_rate: float = 0.4
    mutation_rate: float = 0.05
    epsilon: float | None = 0.4
    upsilon: float | None = 0.95
    tournament_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.xi <= self.nu):
            raise ConfigError("population bounds must satisfy 0 < xi <= nu")
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        for rate in (self.crossover_rate, self.mutation_rate):
            if not (0.0 <= rate <= 1.0):
                raise ConfigError("rates must lie in [0, 1]")
        if self.upsilon is not None and not (0.0 < self.upsilon <= 1.0):
            raise ConfigError("upsilon must lie in (0, 1]")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be >= 1")


@dataclass
class CycleOutcome:
    """Result of one control cycle's optimisation."""

    best: HorizonSolution
    applied_input: np.ndarray
    converged: bool
    used_fallback: bool
    generations_run: int
    wall_time: float
    population_size_used: int
    evaluations: int = 0
    ranked_population: np.ndarray | None = None
    ranked_costs: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _psi_per_gene(psi, spec):
    psi = np.clip(np.asarray(psi, dtype=float), 0.0, None)
    if psi.shape != (spec.n,):
        raise ConfigError(f"margin vector must have shape ({spec.n},)")
    return np.tile(psi, spec.h)


def sample_population(center, psi, p, spec, rng):
    """Draw p candidates, each gene uniform in [c - psi_i/2, c + psi_i/2] ∩ bounds.

    ``center`` is the time-shifted previous solution; genes belonging to
    input i use that input's margin width.  Degenerate intervals collapse
    to the clipped center value.
    """
    genes = center.genes if isinstance(center, HorizonSolution) else np.asarray(center, dtype=float)
    half = 0.5 * _psi_per_gene(psi, spec)
    bounds_lo = np.tile(spec.u_min, spec.h)
    bounds_hi = np.tile(spec.u_max, spec.h)
    c = np.clip(genes, bounds_lo, bounds_hi)
    lo = np.maximum(c - half, bounds_lo)
    hi = np.minimum(c + half, bounds_hi)
    return lo + (hi - lo) * rng.random((int(p), spec.gene_count))


def tournament_select(fitnesses, k, rng, pool=None):
    """Index of the winner among k uniform draws (with replacement).

    ``pool`` restricts the draw to a subset of indices.  Ties go to the
    lowest population index.
    """
    fitnesses = np.asarray(fitnesses, dtype=float)
    candidates = np.arange(fitnesses.size) if pool is None else np.asarray(pool)
    if candidates.size == 0:
        raise ConfigError("tournament requires a non-empty population")
    draws = candidates[rng.integers(0, candidates.size, size=int(k))]
    best = draws[fitnesses[draws] == fitnesses[draws].max()]
    return int(best.min())


def crossover(a, b, rate, rng):
    """Single-point crossover on the flat gene vector, applied with probability rate."""
    ga = a.genes if isinstance(a, HorizonSolution) else np.asarray(a, dtype=float)
    gb = b.genes if isinstance(b, HorizonSolution) else np.asarray(b, dtype=float)
    if ga.shape != gb.shape:
        raise ConfigError("parents must have equal gene counts")
    c1, c2 = ga.copy(), gb.copy()
    if ga.size > 1 and rng.random() < rate:
        cut = int(rng.integers(1, ga.size))
        c1[cut:], c2[cut:] = gb[cut:], ga[cut:]
    return HorizonSolution(c1), HorizonSolution(c2)


def mutate(z, rate, psi, spec, rng):
    """Per-gene Gaussian mutation with sigma = psi_i/6, clipped to input bounds."""
    genes = (z.genes if isinstance(z, HorizonSolution) else np.asarray(z, dtype=float)).copy()
    sigma = _psi_per_gene(psi, spec) / 6.0
    mask = rng.random(genes.size) < rate
    noise = rng.normal(0.0, 1.0, size=genes.size) * sigma
    genes = np.where(mask, genes + noise, genes)
    genes = np.clip(genes, np.tile(spec.u_min, spec.h), np.tile(spec.u_max, spec.h))
    return HorizonSolution(genes)


def _evolve(pop, costs, feas, elite, cfg, psi, spec, rng):
    """Next generation: elite + tournament/crossover/mutation offspring."""
    p, L = pop.shape
    fit = fitness(costs)
    pool = np.flatnonzero(feas)
    n_children = p - (1 if elite is not None else 0)
    n_pairs = (n_children + 1) // 2
    draws = pool[rng.integers(0, pool.size, size=(n_pairs, 2, cfg.tournament_size))]
    drawn_fit = fit[draws]
    winners = np.where(drawn_fit == drawn_fit.max(axis=-1, keepdims=True), draws, np.iinfo(np.int64).max)
    parents = winners.min(axis=-1)  # (n_pairs, 2)
    pa, pb = pop[parents[:, 0]], pop[parents[:, 1]]
    if L > 1:
        do_cx = rng.random(n_pairs) < cfg.crossover_rate
        cuts = rng.integers(1, L, size=n_pairs)
        swap = (np.arange(L)[None, :] >= cuts[:, None]) & do_cx[:, None]
        c1 = np.where(swap, pb, pa)
        c2 = np.where(swap, pa, pb)
    else:
        c1, c2 = pa.copy(), pb.copy()
    children = np.concatenate([c1, c2], axis=0)[:n_children]
    sigma = _psi_per_gene(psi, spec) / 6.0
    mask = rng.random(children.shape) < cfg.mutation_rate
    children = np.where(mask, children + rng.normal(size=children.shape) * sigma, children)
    children = np.clip(children, np.tile(spec.u_min, spec.h), np.tile(spec.u_max, spec.h))
    if elite is not None:
        return np.concatenate([elite[None, :], children], axis=0)
    return children


# ---------------------------------------------------------------------------
# Cycle solve
# ---------------------------------------------------------------------------

def bootstrap_solution(spec, refs=None, c=0):
    """Cycle-0 warm start: reference inputs when available, mid-range otherwise."""
    if refs is not None and refs.inputs is not None:
        return HorizonSolution(refs.input_window(c, spec.h, spec.n).ravel())
    mid = 0.5 * (spec.u_min + spec.u_max)
    return HorizonSolution(np.tile(mid, spec.h))


def _within_budget(clock, cfg, spec):
    if cfg.upsilon is None:
        return True
    return clock.elapsed() <= cfg.upsilon * spec.ts


def solve_cycle(spec, x0, refs, c, psi, p_c, prev_best, cfg, clock=None, *,
                rng=None, prev_applied=None, terminal=None,
                initial_population=None, keep_population=False):
    """Run the per-cycle GA and return a CycleOutcome.

    ``prev_best`` is the previous cycle's solution (use ``bootstrap_solution``
    at cycle 0); the sampling center is its one-step shift.  ``prev_applied``
    (default: prev_best's first step) anchors the first rate-constraint
    delta.  Falls back to the shifted previous solution when no feasible
    candidate appears before the budget or generation cap runs out; at cycle
    0 an infeasible fallback is an experiment-setup error.
    """
    clock = clock if clock is not None else WallClock()
    clock.restart()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    terminal = terminal if terminal is not None else TerminalSet.unbounded(spec.m)
    if prev_applied is None:
        prev_applied = prev_best.first_input(spec.n)

    center = prev_best.shifted(spec.n)
    p_c = int(p_c)
    if initial_population is not None:
        pop = np.asarray(initial_population, dtype=float)
        p_c = pop.shape[0]
    else:
        pop = sample_population(center, psi, p_c, spec, rng)

    best_genes = None
    best_cost = np.inf
    evals = 0
    gens = 0
    converged = False
    last_pop = pop
    last_costs = None
    last_feas = None

    while gens < cfg.generations and _within_budget(clock, cfg, spec):
        traj, ok = rollout_population(spec, x0, pop)
        costs = population_costs(spec, traj, pop, refs, c, ok=ok)
        evals += pop.shape[0]
        clock.charge(pop.shape[0])
        feas = feasibility_masks(spec, pop, traj, ok, prev_applied) & terminal_mask(traj, terminal)
        gens += 1
        last_pop, last_costs, last_feas = pop, costs, feas
        if feas.any():
            masked = np.where(feas, costs, np.inf)
            idx = int(masked.argmin())
            if costs[idx] < best_cost:
                best_cost = float(costs[idx])
                best_genes = pop[idx].copy()
        if best_genes is not None and cfg.epsilon is not None and best_cost <= cfg.epsilon:
            converged = True
            break
        if gens >= cfg.generations:
            break
        if feas.any():
            pop = _evolve(pop, costs, feas, best_genes, cfg, psi, spec, rng)
        else:
            pop = sample_population(center, psi, p_c, spec, rng)
            if best_genes is not None:
                pop[0] = best_genes

    ranked = ranked_costs = None
    if keep_population and last_costs is not None:
        order = np.lexsort((last_costs, ~last_feas))
        ranked = last_pop[order]
        ranked_costs = last_costs[order]

    if best_genes is None:
        fb_cost = evaluate_cost(spec, x0, center, refs, c)
        best = HorizonSolution(center.genes.copy(), cost=fb_cost, feasible=False)
        if c == 0:
            traj, ok = rollout_population(spec, x0, center.genes[None, :])
            fb_ok = feasibility_masks(spec, center.genes[None, :], traj, ok, prev_applied)
            if not fb_ok[0]:
                raise ConfigError("cycle 0 found no feasible candidate and the bootstrap "
                                  "fallback is itself infeasible; experiment setup is broken")
        return CycleOutcome(best, best.first_input(spec.n), False, True, gens,
                            clock.elapsed(), p_c, evals, ranked, ranked_costs)

    best = HorizonSolution(best_genes, cost=best_cost, feasible=True)
    return CycleOutcome(best, best.first_input(spec.n), converged, False, gens,
                        clock.elapsed(), p_c, evals, ranked, ranked_costs)

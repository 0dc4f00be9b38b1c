"""Closed-loop experiment orchestration, metrics and reports.

The plant and the controller are separate objects exchanging only
(measured state) -> (applied input), mirroring a processor-in-the-loop
split; reading the true plant state while the controller is deciding
raises.  Runs are driven by a simulated clock charging a fixed cost per
cost-function evaluation, so budgets, timings and sweeps are
hardware-independent and bit-reproducible under fixed seeds.

Benchmark model specs adjust a handful of supplement-table values that are
incompatible with uniform physical-margin sampling (see the run manifest);
library defaults are untouched.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field, replace
import math
import os
import time

import numpy as np

from . import dataset as ds
from . import ga, models
from .baselines import DeConfig, PsoConfig, SolverKind, de_solve, mg_solve, og_solve, pso_solve
from .errors import ConfigError, DivergenceError, IsolationError, ModelDomainError
from .ga import GaConfig, SimulatedClock, rng_stream
from .margins import BsmConfig, MarginPredictor, population_size, train_margin_predictor
from .models import NoiseConfig
from .nmpc import TerminalSet, error_vector

_PI = math.pi


# ---------------------------------------------------------------------------
# Paper-default hyper-parameters and benchmark specs
# ---------------------------------------------------------------------------

def paper_ga_config(model, seed=0):
    """Proposed-approach hyper-parameter table, one column per model."""
    table = {
        "uav": dict(nu=100, xi=10, generations=3, crossover_rate=0.4,
                    mutation_rate=0.05, epsilon=0.4, upsilon=0.95),
        "vehicle": dict(nu=200, xi=20, generations=5, crossover_rate=0.5,
                        mutation_rate=0.1, epsilon=2.0, upsilon=0.95),
        "sfjr": dict(nu=200, xi=20, generations=4, crossover_rate=0.4,
                     mutation_rate=0.1, epsilon=0.5, upsilon=0.95),
    }
    return GaConfig(seed=seed, tournament_size=3, **table[model])


def paper_noise(model, seed=0):
    table = {"uav": (0.1, 0.05), "vehicle": (0.1, 0.15), "sfjr": (0.2, 0.15)}
    rho, theta = table[model]
    return NoiseConfig(rho=rho, theta=theta, seed=seed)


def paper_svr_params(model):
    table = {
        "uav": dict(C=[10, 5, 5, 10], lam=[0.2, 0.2, 0.2, 0.2], gamma=[0.1, 0.2, 0.2, 0.05]),
        "vehicle": dict(C=[1, 2], lam=[0.1, 0.35], gamma=[0.05, 0.01]),
        "sfjr": dict(C=5.0, lam=0.5, gamma=0.2),
    }
    return table[model]


def paper_eta(model):
    return {"uav": 0.7, "vehicle": 0.65, "sfjr": 0.8}[model]


def bench_spec(model):
    """Benchmark model spec: library defaults plus the erratum overrides.

    Rate limits are widened so physical-margin sampling has a non-vanishing
    feasible fraction, and the erratum-suspect velocity bounds are widened
    so table-level actuator noise does not make every cycle infeasible.
    All overrides land in the run manifest.
    """
    if model == "sfjr":
        return models.sfjr_spec(
            du_min=np.array([-8.0]), du_max=np.array([8.0]),
            x_min=np.array([-_PI, -1.0, -_PI, -1.0, 0.0]),
            x_max=np.array([_PI, 1.0, _PI, 1.0, 5.0]))
    if model == "uav":
        return models.uav_spec(
            du_min=np.full(4, -5.0), du_max=np.full(4, 5.0),
            x_min=np.array([-np.inf] * 6 + [-_PI / 3] * 3 + [-_PI / 2.4] * 3),
            x_max=np.array([np.inf] * 6 + [_PI / 3] * 3 + [_PI / 2.4] * 3))
    if model == "vehicle":
        return models.vehicle_spec()
    raise ConfigError(f"unknown model '{model}'")


@dataclass
class ExperimentConfig:
    """One closed-loop run set: model, solver, horizon count and knobs."""

    model: str = "sfjr"
    solver: str = "og"
    cycles: int = 200
    seed: int = 0
    noise: NoiseConfig | None = None
    ga_cfg: GaConfig | None = None
    pso_cfg: PsoConfig | None = None
    de_cfg: DeConfig | None = None
    refs: ds.ReferenceGenConfig | None = None
    predictor: MarginPredictor | None = None
    predictor_path: str | None = None
    terminal_half_widths: np.ndarray | None = None
    eval_cost: float | None = None
    out_dir: str | None = None

    def __post_init__(self):
        SolverKind(self.solver)
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.noise is None:
            self.noise = paper_noise(self.model, self.seed)
        if self.ga_cfg is None:
            self.ga_cfg = paper_ga_config(self.model, self.seed)
        if self.refs is None:
            self.refs = ds.ReferenceGenConfig(n_cycles=self.cycles + 1, seed=self.seed)

    def resolve_predictor(self):
        if self.predictor is not None:
            return self.predictor
        if self.predictor_path is not None:
            if not os.path.exists(self.predictor_path):
                raise ConfigError(f"predictor file not found: {self.predictor_path}")
            return MarginPredictor.load(self.predictor_path)
        if self.solver == "proposed":
            raise ConfigError("the proposed solver needs a trained margin predictor")
        return None

    def default_eval_cost(self, spec):
        if self.eval_cost is not None:
            return self.eval_cost
        ups = self.ga_cfg.upsilon if self.ga_cfg.upsilon is not None else 1.0
        return ups * spec.ts / (self.ga_cfg.nu * (self.ga_cfg.generations + 1))


# ---------------------------------------------------------------------------
# Plant simulator (one side of the PIL boundary)
# ---------------------------------------------------------------------------

class PlantSim:
    """Noisy plant truth.  The controller may only see ``measurement``."""

    def __init__(self, spec, noise, seed, x0):
        self._spec = spec
        self._noise = noise
        self._rng_in = rng_stream(seed, "plant-input")
        self._rng_meas = rng_stream(seed, "plant-meas")
        self._x = np.asarray(x0, dtype=float).copy()
        self._meas = self._x.copy()
        self._guard_depth = 0

    @contextmanager
    def controller_phase(self):
        self._guard_depth += 1
        try:
            yield
        finally:
            self._guard_depth -= 1

    @property
    def true_state(self):
        if self._guard_depth:
            raise IsolationError("true plant state read during the controller phase")
        return self._x.copy()

    @property
    def measurement(self):
        return self._meas.copy()

    def apply(self, u_cmd):
        """Actuate with input noise, advance one period, take a measurement."""
        if self._guard_depth:
            raise IsolationError("plant advanced during the controller phase")
        u_act = models.perturb_input(u_cmd, self._spec, self._noise, self._rng_in)
        self._x = models.step(self._spec, self._x, u_act)
        self._meas = models.perturb_measurement(self._x, self._spec, self._noise,
                                                self._rng_meas)
        return self._meas.copy()


# ---------------------------------------------------------------------------
# Controllers (the other side)
# ---------------------------------------------------------------------------

class Controller:
    """Per-run solver state: warm starts, cost history, margin predictions."""

    def __init__(self, spec, refs, cfg, seed, clock):
        self.spec = spec
        self.refs = refs
        self.cfg = cfg
        self.kind = SolverKind(cfg.solver)
        self.seed = seed
        self.clock = clock
        self.terminal = (TerminalSet.unbounded(spec.m)
                         if cfg.terminal_half_widths is None else None)
        self.prev_best = ga.bootstrap_solution(spec, refs, 0)
        self.prev_applied = self.prev_best.first_input(spec.n)
        self.prev_population = None
        self.cost_history = []
        self.x_meas_prev = None
        self.u_cmd_prev = None
        self.predictor = cfg.resolve_predictor()

    def _terminal_for(self, c):
        if self.cfg.terminal_half_widths is None:
            return TerminalSet.unbounded(self.spec.m)
        return TerminalSet(self.refs.states[c + self.spec.h],
                           np.asarray(self.cfg.terminal_half_widths, dtype=float))

    def _proposed_margins(self, c, x_meas):
        beta = self.spec.beta
        if c < 2 or self.x_meas_prev is None:
            return beta, {"trusted": False, "overall_confidence": float("nan")}
        try:
            x_exp = models.step(self.spec, self.x_meas_prev, self.u_cmd_prev)
        except (DivergenceError, ModelDomainError):
            return beta, {"trusted": False, "overall_confidence": float("nan")}
        e_c = error_vector(x_meas, x_exp, self.spec)
        j1 = self.cost_history[-1] if len(self.cost_history) >= 1 else None
        j2 = self.cost_history[-2] if len(self.cost_history) >= 2 else None
        psi, info = self.predictor.margins_for_cycle(e_c, j1, j2)
        return psi.widths, info

    def decide(self, c, x_meas):
        """Solve one cycle from the measured state; returns (outcome, info)."""
        rng = rng_stream(self.seed, f"solver-{self.kind.value}", c)
        terminal = self._terminal_for(c)
        common = dict(rng=rng, prev_applied=self.prev_applied, terminal=terminal)
        info = {"trusted": False, "overall_confidence": float("nan")}
        cfgga = self.cfg.ga_cfg

        if self.kind is SolverKind.OG:
            outcome = og_solve(self.spec, x_meas, self.refs, c, self.prev_best,
                               cfgga, self.clock, **common)
            p_used = cfgga.nu
        elif self.kind is SolverKind.MG:
            outcome = mg_solve(self.spec, x_meas, self.refs, c, self.prev_best,
                               cfgga, self.clock, prev_population=self.prev_population,
                               **common)
            self.prev_population = outcome.ranked_population
            p_used = cfgga.nu
        elif self.kind is SolverKind.PSO:
            outcome = pso_solve(self.spec, x_meas, self.refs, c, self.prev_best,
                                cfgga, self.clock, pso=self.cfg.pso_cfg, **common)
            p_used = outcome.population_size_used
        elif self.kind is SolverKind.DE:
            outcome = de_solve(self.spec, x_meas, self.refs, c, self.prev_best,
                               cfgga, self.clock, de=self.cfg.de_cfg, **common)
            p_used = outcome.population_size_used
        else:
            psi, info = self._proposed_margins(c, x_meas)
            p_used = population_size(psi, self.predictor.cfg)
            outcome = ga.solve_cycle(self.spec, x_meas, self.refs, c, psi, p_used,
                                     self.prev_best, cfgga, self.clock, **common)

        self.prev_best = outcome.best
        self.prev_applied = outcome.applied_input
        self.cost_history.append(outcome.best.cost)
        self.x_meas_prev = x_meas
        self.u_cmd_prev = outcome.applied_input
        return outcome, info


# ---------------------------------------------------------------------------
# Closed loop, metrics, sweeps, reports
# ---------------------------------------------------------------------------

@dataclass
class RunMetrics:
    """Aggregates of one closed-loop run (Eq.-14 cost, convergence, effort)."""

    model: str
    solver: str
    seed: int
    cycles: int
    avg_cost: float
    convergence_rate: float
    avg_comp_time: float
    total_evaluations: int
    fallback_rate: float
    trusted_rate: float
    crashed: bool
    wall_seconds: float
    rows: list = field(default_factory=list, repr=False)


def prepared_spec(cfg, refs_states=None):
    spec = bench_spec(cfg.model)
    if refs_states is not None:
        spec = models.with_state_ranges(
            spec, models.state_ranges_from_refs(spec, refs_states))
    return spec


def run_closed_loop(cfg):
    """One run of Alg.-1-style closed loop; returns RunMetrics with a per-cycle log."""
    t_start = time.perf_counter()
    spec = bench_spec(cfg.model)
    refs_cfg = replace(cfg.refs, n_cycles=max(cfg.refs.n_cycles, cfg.cycles + 1))
    refs = ds.generate_references(spec, refs_cfg, rng_stream(cfg.seed, "refs"))
    spec = models.with_state_ranges(spec, models.state_ranges_from_refs(spec, refs.states))

    clock = SimulatedClock(cfg.default_eval_cost(spec))
    plant = PlantSim(spec, cfg.noise, cfg.seed, refs.states[0])
    controller = Controller(spec, refs, cfg, cfg.seed, clock)

    rows = []
    crashed = False
    for c in range(cfg.cycles):
        x_meas = plant.measurement
        with plant.controller_phase():
            outcome, info = controller.decide(c, x_meas)
        rows.append({
            "cycle": c,
            "cost": float(outcome.best.cost),
            "p_c": int(outcome.population_size_used),
            "evaluations": int(outcome.evaluations),
            "generations": int(outcome.generations_run),
            "converged": bool(outcome.converged),
            "used_fallback": bool(outcome.used_fallback),
            "t_c": float(outcome.wall_time),
            "trusted": bool(info.get("trusted", False)),
            "overall_confidence": float(info.get("overall_confidence", float("nan"))),
        })
        try:
            plant.apply(outcome.applied_input)
        except (DivergenceError, ModelDomainError):
            crashed = True
            break
    metrics = compute_metrics(rows, cfg)
    metrics.crashed = crashed
    metrics.wall_seconds = time.perf_counter() - t_start
    return metrics


def compute_metrics(rows, cfg):
    """Arithmetic aggregation of a per-cycle log (the Eq.-14 average cost etc.)."""
    if not rows:
        raise ConfigError("cannot compute metrics from an empty log")
    costs = np.array([r["cost"] for r in rows])
    return RunMetrics(
        model=cfg.model, solver=cfg.solver, seed=cfg.seed, cycles=len(rows),
        avg_cost=float(costs.mean()),
        convergence_rate=float(np.mean([r["converged"] for r in rows])),
        avg_comp_time=float(np.mean([r["t_c"] for r in rows])),
        total_evaluations=int(np.sum([r["evaluations"] for r in rows])),
        fallback_rate=float(np.mean([r["used_fallback"] for r in rows])),
        trusted_rate=float(np.mean([r["trusted"] for r in rows])),
        crashed=False, wall_seconds=0.0, rows=rows)


def pc_histogram(rows, xi, nu, n_bins=12):
    """Histogram of the per-cycle population sizes over [xi, nu]."""
    values = np.array([r["p_c"] for r in rows])
    edges = np.linspace(xi, nu + 1, n_bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def train_predictor_for(model, *, noise=None, train_cycles=None, seed=0,
                        svr_tol=1e-4, max_records=2500, amplitude_scale=1.0,
                        dataset_records=None):
    """Offline phase: dataset generation plus the per-input SVR bank.

    Uses the paper's SVR hyper-parameters and eta for ``model``, calibrated
    confidence mode.  ``dataset_records`` short-circuits generation (used by
    the CLI `train` verb on a stored dataset).
    """
    spec = bench_spec(model)
    gacfg = paper_ga_config(model, seed)
    noise = noise if noise is not None else paper_noise(model, seed)
    if dataset_records is None:
        train_cycles = train_cycles if train_cycles is not None else 1200
        refs = ds.generate_references(
            spec, ds.ReferenceGenConfig(n_cycles=train_cycles, seed=seed,
                                        amplitude_scale=amplitude_scale),
            rng_stream(seed, "dataset-refs"))
        exh = ds.exhaustive_ga_config(spec, gacfg.nu, seed=seed)
        records, info = ds.build_dataset(spec, refs, noise, exh,
                                         rng_stream(seed, "dataset"))
    else:
        records, info = list(dataset_records), {"records": len(dataset_records)}
    if not records:
        raise ConfigError("dataset generation produced no records")
    x, t = ds.records_to_arrays(records)
    params = paper_svr_params(model)
    cfg = BsmConfig(beta=spec.beta, eta=paper_eta(model), epsilon=gacfg.epsilon,
                    nu=gacfg.nu, xi=gacfg.xi, confidence_mode="calibrated")
    predictor = train_margin_predictor(
        x, t, cfg, params["C"], params["lam"], params["gamma"], tol=svr_tol,
        max_records=max_records, rng=rng_stream(seed, "svr-subsample"))
    return predictor, {"dataset": info, "trained_on": min(len(records), max_records)}


def sweep(param, grid, base_cfg, seeds):
    """One run set per grid point with paired seeds; returns a result table.

    ``param`` is one of epsilon (cost threshold, shared by the GA exit and
    the margin gate), eta (confidence threshold), rho, theta (plant noise).
    """
    if param not in ("epsilon", "eta", "rho", "theta"):
        raise ConfigError(f"unknown sweep parameter '{param}'")
    if len(list(grid)) == 0:
        raise ConfigError("sweep grid must be non-empty")
    table = []
    for value in grid:
        runs = []
        for seed in seeds:
            cfg = _override(base_cfg, param, value, seed)
            try:
                runs.append(run_closed_loop(cfg))
            except (ConfigError, DivergenceError) as exc:
                runs.append(("error", str(exc), seed))
        table.append({"param": param, "value": float(value), "runs": runs})
    return table


def _override(base_cfg, param, value, seed):
    cfg = replace(base_cfg, seed=seed)
    cfg.refs = replace(cfg.refs, seed=seed)
    if param == "epsilon":
        cfg.ga_cfg = replace(cfg.ga_cfg, epsilon=float(value), seed=seed)
        if cfg.predictor is not None:
            pred = MarginPredictor(cfg.predictor.models,
                                   replace(cfg.predictor.cfg, epsilon=float(value)),
                                   cfg.predictor.calibration)
            cfg = replace(cfg, predictor=pred)
    elif param == "eta":
        if cfg.predictor is None:
            raise ConfigError("eta sweep needs a predictor")
        pred = MarginPredictor(cfg.predictor.models,
                               replace(cfg.predictor.cfg, eta=float(value)),
                               cfg.predictor.calibration)
        cfg = replace(cfg, predictor=pred)
    elif param == "rho":
        cfg.noise = NoiseConfig(rho=float(value), theta=cfg.noise.theta, seed=seed)
    elif param == "theta":
        cfg.noise = NoiseConfig(rho=cfg.noise.rho, theta=float(value), seed=seed)
    return cfg


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def emit_reports(results, out_dir, extra_manifest=None, xi=None, nu=None):
    """summary.csv / cycles.csv / pc_histogram.csv / manifest.json for a run set."""
    os.makedirs(out_dir, exist_ok=True)
    summary_cols = ["model", "solver", "seed", "cycles", "avg_cost",
                    "convergence_rate", "avg_comp_time", "total_evaluations",
                    "fallback_rate", "trusted_rate", "crashed"]
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(",".join(summary_cols) + "\n")
        for r in results:
            fh.write(",".join(_fmt(getattr(r, col)) for col in summary_cols) + "\n")

    cycle_cols = ["cycle", "cost", "p_c", "evaluations", "generations",
                  "converged", "used_fallback", "t_c", "trusted",
                  "overall_confidence"]
    with open(os.path.join(out_dir, "cycles.csv"), "w") as fh:
        fh.write(",".join(["model", "solver", "seed"] + cycle_cols) + "\n")
        for r in results:
            prefix = f"{r.model},{r.solver},{r.seed},"
            for row in r.rows:
                fh.write(prefix + ",".join(_fmt(row[c]) for c in cycle_cols) + "\n")

    with open(os.path.join(out_dir, "pc_histogram.csv"), "w") as fh:
        fh.write("model,solver,seed,bin_left,bin_right,count\n")
        for r in results:
            lo = xi if xi is not None else min(row["p_c"] for row in r.rows)
            hi = nu if nu is not None else max(row["p_c"] for row in r.rows)
            edges, counts = pc_histogram(r.rows, lo, hi)
            for b in range(len(counts)):
                fh.write(f"{r.model},{r.solver},{r.seed},"
                         f"{_fmt(float(edges[b]))},{_fmt(float(edges[b + 1]))},{counts[b]}\n")

    manifest = {
        "runs": [{k: getattr(r, k) for k in summary_cols} for r in results],
        "wall_seconds": [r.wall_seconds for r in results],
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    ds.write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return out_dir


def spec_snapshot(spec):
    """Spec fields for manifests, so erratum overrides are on the record."""
    return {
        "name": spec.name, "m": spec.m, "n": spec.n, "ts": spec.ts, "h": spec.h,
        "x_min": spec.x_min, "x_max": spec.x_max,
        "u_min": spec.u_min, "u_max": spec.u_max,
        "du_min": spec.du_min, "du_max": spec.du_max,
        "q": spec.q, "r": spec.r, "qbar": spec.qbar,
        "params": spec.params, "state_ranges": spec.state_ranges,
    }

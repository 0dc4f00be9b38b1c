"""Synthetic training data: reference trajectories, noisy closed-loop runs
with an exhaustive GA, and (error-vector, margin-targets) record emission.

Each record pairs the weighted prediction-error vector of a cycle with the
per-input best-smallest-margin between that cycle's exhaustively-optimised
solution and the previous one.  Records stream to CSV with a generation
manifest holding every seed and setting.
"""

from dataclasses import dataclass, asdict
import json

import numpy as np

from . import ga, models
from .errors import ConfigError, DatasetFormatError, DivergenceError, ModelDomainError
from .margins import bsm_from_solutions
from .nmpc import ReferenceTrack, error_vector


@dataclass
class CycleRecord:
    """One dataset row: error vector E_c and its n margin targets."""

    error: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        self.error = np.asarray(self.error, dtype=float).ravel()
        self.deltas = np.asarray(self.deltas, dtype=float).ravel()


@dataclass
class ReferenceGenConfig:
    """Shape of generated references: mixed slow/fast sinusoids plus held steps.

    Amplitudes are model-specific fractions of the usable range scaled by
    ``amplitude_scale``; ``slew_fraction`` limits per-step reference motion
    to that fraction of the relevant velocity bound.
    """

    n_cycles: int = 500
    seed: int = 0
    amplitude_scale: float = 1.0
    n_components: tuple = (2, 3)
    period_range: tuple = (6.0, 40.0)
    hold_fraction: float = 0.25
    slew_fraction: float = 0.5

    def __post_init__(self):
        if self.n_cycles < 3:
            raise ConfigError("need at least 3 cycles of reference")
        if self.amplitude_scale < 0:
            raise ConfigError("amplitude_scale must be >= 0")


def _smooth_profile(length, ts, lo, hi, slew, cfg, rng):
    """Slew-limited mix of sinusoids and occasional held steps in [lo, hi]."""
    t = np.arange(length) * ts
    mid = 0.5 * (lo + hi)
    amp_total = 0.5 * (hi - lo) * cfg.amplitude_scale
    n_comp = int(rng.integers(cfg.n_components[0], cfg.n_components[1] + 1))
    target = np.full(length, mid)
    if amp_total > 0:
        weights = rng.random(n_comp) + 0.2
        weights = weights / weights.sum() * amp_total
        for w in weights:
            period = rng.uniform(*cfg.period_range)
            phase = rng.uniform(0, 2 * np.pi)
            target = target + w * np.sin(2 * np.pi * t / period + phase)
        if rng.random() < cfg.hold_fraction and length > 20:
            # freeze a random stretch at its starting value: a step-like segment
            a = int(rng.integers(0, length - 10))
            b = int(rng.integers(a + 5, min(a + length // 3 + 5, length)))
            target[a:b] = target[a]
    target = np.clip(target, lo, hi)
    out = np.empty(length)
    out[0] = target[0]
    max_step = slew * ts
    for k in range(1, length):
        out[k] = out[k - 1] + np.clip(target[k] - out[k - 1], -max_step, max_step)
    return out


def _uav_references(spec, cfg, rng, n_total):
    pos_amp = 4.0 * cfg.amplitude_scale
    states = np.zeros((n_total, spec.m))
    # position references only; attitude references stay at level flight
    slew = 2.0  # m/s reference motion
    for j in range(3):
        states[:, j] = _smooth_profile(n_total, spec.ts, -pos_amp, pos_amp, slew, cfg, rng)
    states[:, 3:6] = np.gradient(states[:, 0:3], spec.ts, axis=0)
    hover = models.uav_hover_speed(spec.params) / spec.params["rotor_scale"]
    inputs = np.full((n_total, spec.n), hover)
    return ReferenceTrack(states, inputs)


def _vehicle_references(spec, cfg, rng, n_total):
    speed = _smooth_profile(n_total, spec.ts, 8.0, 15.0, 1.5, cfg, rng)
    psi_bound = 0.5 * cfg.amplitude_scale
    psi = _smooth_profile(n_total, spec.ts, -psi_bound, psi_bound, 0.2, cfg, rng)
    states = np.zeros((n_total, spec.m))
    states[:, 2] = speed
    states[:, 5] = psi
    states[:, 4] = np.gradient(psi, spec.ts)
    states[1:, 0] = np.cumsum(speed[:-1] * np.cos(psi[:-1])) * spec.ts
    states[1:, 1] = np.cumsum(speed[:-1] * np.sin(psi[:-1])) * spec.ts
    return ReferenceTrack(states, None)


def _sfjr_references(spec, cfg, rng, n_total):
    p = spec.params
    lo, hi = 0.15, 0.15 + 1.0 * cfg.amplitude_scale
    slew = cfg.slew_fraction * min(float(spec.x_max[1]), 1.0)
    e1 = _smooth_profile(n_total, spec.ts, lo, hi, slew, cfg, rng)
    e1d = np.gradient(e1, spec.ts)
    grav = p["m"] * p["g"] * p["l"] * np.sin(e1)
    e2 = e1 + grav / p["K"]
    e2d = np.gradient(e2, spec.ts)
    cur = grav / (p["N"] * p["Ktau"])
    states = np.column_stack([e1, e1d, e2, e2d, cur])
    u_eq = p["Rm"] * cur + p["N"] * p["Ke"] * e2d
    inputs = np.clip(u_eq[:, None], spec.u_min, spec.u_max)
    return ReferenceTrack(states, inputs)


_REF_BUILDERS = {"uav": _uav_references, "vehicle": _vehicle_references,
                 "sfjr": _sfjr_references}


def generate_references(spec, cfg, rng=None):
    """N + h cycles of slew-limited reference states (and inputs where the
    model has a natural equilibrium input)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    try:
        builder = _REF_BUILDERS[spec.name]
    except KeyError:
        raise ConfigError(f"no reference builder for model '{spec.name}'")
    return builder(spec, cfg, rng, cfg.n_cycles + spec.h)


def exhaustive_ga_config(spec, nu, seed=0, generations=20, pop_factor=4):
    """Dataset-generation GA: large population, full generations, no exits."""
    return ga.GaConfig(nu=int(nu * pop_factor), xi=1, generations=generations,
                       crossover_rate=0.5, mutation_rate=0.1, epsilon=None,
                       upsilon=None, tournament_size=3, seed=seed)


def build_dataset(spec, refs, noise, exhaustive_ga, rng=None, *, collect_max=None):
    """Closed-loop record generation per the offline phase of the pipeline.

    Per cycle: push the previous commanded input through the noisy plant,
    measure, compute E_c against the model's expectation, re-optimise
    exhaustively inside the physical margins around the time-shifted
    previous solution, and emit (E_c, delta) with delta the per-input BSM
    against the previous cycle's solution.  Cycles whose GA finds no
    feasible solution are skipped (counted in the info dict); a plant crash
    ends the run early.
    """
    if exhaustive_ga.epsilon is not None or exhaustive_ga.upsilon is not None:
        raise ConfigError("dataset GA must run exhaustively: epsilon=None, upsilon=None")
    rng = rng if rng is not None else np.random.default_rng(noise.seed)
    # separate noise/GA streams keep runs paired across rho/theta sweeps
    rng_in, rng_meas, rng_ga = rng.spawn(3)
    spec = _ensure_ranges(spec, refs)
    beta = spec.beta
    n_cycles = len(refs) - spec.h - 1
    if collect_max is not None:
        n_cycles = min(n_cycles, collect_max + 1)

    records = []
    skips = 0
    crashed = False
    x_true = refs.states[0].copy()
    x_meas = x_true.copy()
    p_pop = exhaustive_ga.nu

    boot = ga.bootstrap_solution(spec, refs, 0)
    outcome = ga.solve_cycle(spec, x_meas, refs, 0, beta, p_pop, boot,
                             exhaustive_ga, rng=rng_ga,
                             prev_applied=boot.first_input(spec.n))
    prev_solution = outcome.best
    prev_applied = outcome.applied_input
    prev_skipped = outcome.used_fallback

    for c in range(1, n_cycles):
        u_cmd = prev_applied
        try:
            u_act = models.perturb_input(u_cmd, spec, noise, rng_in)
            x_true = models.step(spec, x_true, u_act)
            x_exp = models.step(spec, x_meas, u_cmd)
        except (DivergenceError, ModelDomainError):
            crashed = True
            break
        x_meas = models.perturb_measurement(x_true, spec, noise, rng_meas)
        e_c = error_vector(x_meas, x_exp, spec)

        outcome = ga.solve_cycle(spec, x_meas, refs, c, beta, p_pop, prev_solution,
                                 exhaustive_ga, rng=rng_ga, prev_applied=prev_applied)
        if outcome.used_fallback:
            skips += 1
            prev_skipped = True
        else:
            delta = bsm_from_solutions(outcome.best, prev_solution, spec)
            records.append(CycleRecord(e_c, delta.widths))
            prev_skipped = False
        prev_solution = outcome.best
        prev_applied = outcome.applied_input
        if collect_max is not None and len(records) >= collect_max:
            break

    info = {"cycles": n_cycles, "records": len(records), "skips": skips,
            "crashed": crashed}
    return records, info


def _ensure_ranges(spec, refs):
    if spec.state_ranges is not None or np.all(np.isfinite(spec.x_max - spec.x_min)):
        return spec
    return models.with_state_ranges(spec, models.state_ranges_from_refs(spec, refs.states))


# ---------------------------------------------------------------------------
# CSV round-trip and manifest
# ---------------------------------------------------------------------------

def write_dataset(records, path):
    """Header e1..em,d1..dn; %.17g floats so the round-trip is lossless."""
    records = list(records)
    if records:
        m, n = records[0].error.size, records[0].deltas.size
    else:
        raise ConfigError("cannot infer column counts from an empty record list; "
                          "use write_dataset_sized")
    _write(records, path, m, n)


def write_dataset_sized(records, path, m, n):
    _write(list(records), path, m, n)


def _write(records, path, m, n):
    header = ",".join([f"e{i + 1}" for i in range(m)] + [f"d{i + 1}" for i in range(n)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for rec in records:
            row = np.concatenate([rec.error, rec.deltas])
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_dataset(path, m=None, n=None):
    """Parse a dataset CSV back into records; malformed lines raise with
    their line number."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise DatasetFormatError(f"{path}:1: missing header row")
        cols = header.split(",")
        n_e = sum(1 for c in cols if c.startswith("e"))
        n_d = sum(1 for c in cols if c.startswith("d"))
        if n_e + n_d != len(cols) or n_e == 0 or n_d == 0:
            raise DatasetFormatError(f"{path}:1: header must name e1..em,d1..dn columns")
        if m is not None and n is not None and (n_e, n_d) != (m, n):
            raise DatasetFormatError(
                f"{path}:1: expected {m}+{n} columns (e1..e{m},d1..d{n}), "
                f"got {n_e}+{n_d}")
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_e + n_d:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {n_e + n_d} columns, got {len(parts)}")
            try:
                vals = np.array([float(v) for v in parts])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}")
            records.append(CycleRecord(vals[:n_e], vals[n_e:]))
    return records


def records_to_arrays(records):
    if not records:
        raise ConfigError("no records")
    return (np.array([r.error for r in records]),
            np.array([r.deltas for r in records]))


def write_manifest(path, payload):
    """Provenance file: seeds, noise, model and GA settings, deterministic bytes."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialise {type(obj)}")

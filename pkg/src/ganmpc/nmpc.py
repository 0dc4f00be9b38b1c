"""Horizon rollout, cost, fitness and feasibility screening shared by all solvers.

Everything here is controller-side and noise-free: rollouts use the model
prediction, never the plant.  All functions are pure; population variants
(`rollout_population`, `population_costs`, ...) vectorise over a (p, h*n)
gene matrix and report divergence through masks instead of exceptions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import models
from .errors import DimensionError

UNCHECKED = None  # tri-state feasibility: None / True / False


@dataclass
class HorizonSolution:
    """A candidate control sequence over the horizon.

    ``genes`` holds h*n values, input-major per step:
    [u_c^1..u_c^n, u_{c+1}^1..u_{c+1}^n, ...].  ``cost`` is None until
    evaluated; ``feasible`` is None (unchecked), True or False.
    """

    genes: np.ndarray
    cost: float | None = None
    feasible: bool | None = UNCHECKED

    def __post_init__(self):
        self.genes = np.asarray(self.genes, dtype=float)
        if self.genes.ndim != 1:
            raise DimensionError("genes must be a flat vector")

    def decode(self, n):
        """Genes as an (h, n) array of per-step inputs."""
        if self.genes.size % n:
            raise DimensionError(f"gene count {self.genes.size} not divisible by n={n}")
        return self.genes.reshape(-1, n)

    def first_input(self, n):
        return self.genes[:n].copy()

    def shifted(self, n):
        """Warm start for the next cycle: drop the first step, replicate the last."""
        steps = self.decode(n)
        return HorizonSolution(np.concatenate([steps[1:].ravel(), steps[-1]]))


@dataclass
class ReferenceTrack:
    """Reference states r_k and reference inputs v_k, indexable per cycle."""

    states: np.ndarray
    inputs: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise DimensionError("reference states must be (N, m)")
        if self.inputs is not None:
            self.inputs = np.asarray(self.inputs, dtype=float)
            if self.inputs.shape[0] != self.states.shape[0]:
                raise DimensionError("reference inputs must align with reference states")

    def __len__(self):
        return self.states.shape[0]

    def state_window(self, c, h):
        """r_{c+1} .. r_{c+h}."""
        if c + h + 1 > len(self):
            raise DimensionError(f"reference too short for cycle {c} with horizon {h}")
        return self.states[c + 1:c + h + 1]

    def input_window(self, c, h, n):
        """v_c .. v_{c+h-1}; zeros when no reference inputs exist."""
        if self.inputs is None:
            return np.zeros((h, n))
        if c + h > len(self):
            raise DimensionError(f"reference too short for cycle {c} with horizon {h}")
        return self.inputs[c:c + h]


@dataclass
class TerminalSet:
    """Box around a center state; the horizon's final state must fall inside."""

    center: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_widths = np.asarray(self.half_widths, dtype=float)
        if self.center.shape != self.half_widths.shape:
            raise DimensionError("terminal center and half_widths must match")
        if np.any(self.half_widths < 0):
            raise DimensionError("terminal half_widths must be >= 0")

    @classmethod
    def unbounded(cls, m):
        return cls(np.zeros(m), np.full(m, np.inf))

    def contains(self, x):
        """Closed-set membership: boundary states pass."""
        dev = np.abs(np.asarray(x, dtype=float) - self.center)
        ok = (dev <= self.half_widths) | np.isinf(self.half_widths)
        return bool(np.all(ok, axis=-1)) if np.ndim(x) == 1 else np.all(ok, axis=-1)


# ---------------------------------------------------------------------------
# Rollout and cost
# ---------------------------------------------------------------------------

def rollout_population(spec, x0, genes):
    """Roll out p candidates: (p, h*n) genes -> (p, h, m) states + ok mask.

    Rows that go non-finite or beyond the blow-up bound are flagged False
    and left as-is (their later states may be NaN).
    """
    genes = np.asarray(genes, dtype=float)
    p = genes.shape[0]
    steps = genes.reshape(p, spec.h, spec.n)
    traj = np.empty((p, spec.h, spec.m))
    x = np.broadcast_to(np.asarray(x0, dtype=float), (p, spec.m)).copy()
    for k in range(spec.h):
        x = models.step_arrays(spec, x, steps[:, k, :])
        traj[:, k, :] = x
    with np.errstate(invalid="ignore"):
        finite = np.isfinite(traj).all(axis=(1, 2))
        bounded = np.ones(p, dtype=bool)
        bounded[finite] = (np.abs(traj[finite]) <= spec.blowup).all(axis=(1, 2))
    return traj, finite & bounded


def rollout(spec, x0, z):
    """Predicted states x_{c+1}..x_{c+h} for one solution (no noise).

    Returns (traj, ok); ok=False marks integrator divergence, in which case
    the trajectory is not usable and the solution is infeasible.
    """
    x0 = spec.check_state(x0)
    genes = z.genes if isinstance(z, HorizonSolution) else np.asarray(z, dtype=float)
    if genes.shape != (spec.gene_count,):
        raise DimensionError(f"expected {spec.gene_count} genes, got {genes.shape}")
    traj, ok = rollout_population(spec, x0, genes[None, :])
    return traj[0], bool(ok[0])


def population_costs(spec, traj, genes, refs, c, ok=None):
    """Stage costs per candidate; +inf where the rollout diverged.

    J = sum_k (r_{k+1}-x_{k+1})' Q (r_{k+1}-x_{k+1}) + (v_k-u_k)' R (v_k-u_k)
        + x_{c+h}' Qbar x_{c+h}
    """
    genes = np.asarray(genes, dtype=float)
    p = genes.shape[0]
    steps = genes.reshape(p, spec.h, spec.n)
    r_win = refs.state_window(c, spec.h)
    v_win = refs.input_window(c, spec.h, spec.n)
    costs = np.full(p, np.inf)
    mask = np.ones(p, dtype=bool) if ok is None else ok
    if mask.any():
        err = r_win[None] - traj[mask]
        j = np.einsum("phm,m->p", err ** 2, spec.q)
        uerr = v_win[None] - steps[mask]
        j += np.einsum("phn,n->p", uerr ** 2, spec.r)
        j += np.einsum("pm,m->p", traj[mask][:, -1, :] ** 2, spec.qbar)
        costs[mask] = j
    return costs


def evaluate_cost(spec, x0, z, refs, c):
    """Cost of one solution from the measured state; +inf for divergent rollouts."""
    traj, ok = rollout(spec, x0, z)
    genes = z.genes if isinstance(z, HorizonSolution) else np.asarray(z, dtype=float)
    return float(population_costs(spec, traj[None], genes[None], refs, c,
                                  ok=np.array([ok]))[0])


def fitness(j):
    """F = 1/(1+J): strictly decreasing, (0, 1] on finite costs, 0 at +inf."""
    j = np.asarray(j, dtype=float)
    with np.errstate(divide="ignore"):
        f = np.where(np.isinf(j), 0.0, 1.0 / (1.0 + j))
    return float(f) if f.ndim == 0 else f


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------

@dataclass
class ViolationReport:
    """Human/log-readable account of why a solution is infeasible."""

    entries: list = field(default_factory=list)

    def add(self, kind, index, step, value, bound):
        self.entries.append(
            {"kind": kind, "index": int(index), "step": int(step),
             "value": float(value), "bound": float(bound)})

    def __bool__(self):
        return bool(self.entries)

    def __str__(self):
        if not self.entries:
            return "feasible"
        return "; ".join(
            f"{e['kind']} idx={e['index']} step={e['step']} value={e['value']:.6g} "
            f"bound={e['bound']:.6g}" for e in self.entries)


def feasibility_masks(spec, genes, traj, ok, prev_input=None):
    """Vectorised feasibility for a population; returns a boolean mask.

    Checks input bounds, per-step input deltas (including the first step
    against the previously applied input when given), and rolled-out state
    bounds.  Divergent rows are infeasible.
    """
    genes = np.asarray(genes, dtype=float)
    p = genes.shape[0]
    steps = genes.reshape(p, spec.h, spec.n)
    good = ok.copy()
    good &= ((steps >= spec.u_min) & (steps <= spec.u_max)).all(axis=(1, 2))
    deltas = np.diff(steps, axis=1)
    if spec.h > 1:
        good &= ((deltas >= spec.du_min) & (deltas <= spec.du_max)).all(axis=(1, 2))
    if prev_input is not None:
        first = steps[:, 0, :] - np.asarray(prev_input, dtype=float)
        good &= ((first >= spec.du_min) & (first <= spec.du_max)).all(axis=1)
    with np.errstate(invalid="ignore"):
        in_bounds = (traj >= spec.x_min) & (traj <= spec.x_max)
        in_bounds = np.where(np.isnan(traj), False, in_bounds)
    good &= in_bounds.all(axis=(1, 2))
    return good


def check_feasibility(spec, x0, z, traj, prev_input=None):
    """Tri-state feasibility of one solution plus a violation report.

    Returns (feasible: bool, report).  Infeasibility is a value, never an
    error.  ``traj`` must be the rollout of ``z`` from ``x0``; pass the
    previously applied input to check the first rate delta.
    """
    genes = z.genes if isinstance(z, HorizonSolution) else np.asarray(z, dtype=float)
    steps = genes.reshape(spec.h, spec.n)
    report = ViolationReport()
    if not np.all(np.isfinite(traj)):
        report.add("divergence", -1, -1, float("nan"), spec.blowup)
        return False, report
    for k in range(spec.h):
        for i in range(spec.n):
            if not (spec.u_min[i] <= steps[k, i] <= spec.u_max[i]):
                report.add("input_bound", i, k, steps[k, i],
                           spec.u_max[i] if steps[k, i] > spec.u_max[i] else spec.u_min[i])
    prev = np.asarray(prev_input, dtype=float) if prev_input is not None else None
    for k in range(spec.h):
        ref = prev if k == 0 else steps[k - 1]
        if ref is None:
            continue
        d = steps[k] - ref
        for i in range(spec.n):
            if not (spec.du_min[i] <= d[i] <= spec.du_max[i]):
                report.add("input_rate", i, k, d[i],
                           spec.du_max[i] if d[i] > spec.du_max[i] else spec.du_min[i])
    for k in range(spec.h):
        for j in range(spec.m):
            if not (spec.x_min[j] <= traj[k, j] <= spec.x_max[j]):
                report.add("state_bound", j, k, traj[k, j],
                           spec.x_max[j] if traj[k, j] > spec.x_max[j] else spec.x_min[j])
    return (not report), report


def check_terminal(traj, terminal):
    """True iff the horizon's final state lies in the terminal box (closed)."""
    return bool(terminal.contains(np.asarray(traj)[..., -1, :]))


def terminal_mask(traj, terminal):
    return terminal.contains(np.where(np.isnan(traj), np.inf, traj)[:, -1, :])


def error_vector(x_measured, x_expected, spec):
    """E_c = [q^j (xbar^j - x^j)^2]: weighted squared prediction error per state."""
    xm = np.asarray(x_measured, dtype=float)
    xe = np.asarray(x_expected, dtype=float)
    if xm.shape != (spec.m,) or xe.shape != (spec.m,):
        raise DimensionError(f"states must have shape ({spec.m},)")
    return spec.q * (xm - xe) ** 2

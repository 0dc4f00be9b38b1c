"""Best-smallest-margin machinery: confidence scoring, margin selection,
adaptive population sizing and the per-input regressor bank.

One independent SVR per control input maps the cycle's weighted
prediction-error vector to that input's margin.  A confidence score (the
reciprocal summed distance to the model's support vectors) gates whether
the prediction is trusted or the search falls back to the physical
margins.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetFormatError
from .nmpc import HorizonSolution
from .svr import SERIAL_VERSION, SvrModel, train_svr

CONFIDENCE_CAP = 1e12


@dataclass
class MarginVector:
    """Per-input search-space widths (delta_c or psi_c)."""

    widths: np.ndarray

    def __post_init__(self):
        self.widths = np.asarray(self.widths, dtype=float).ravel()
        if np.any(self.widths < 0):
            raise ConfigError("margin widths must be >= 0")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.widths, dtype=dtype)

    def __len__(self):
        return self.widths.size


def _widths(margin):
    return margin.widths if isinstance(margin, MarginVector) else np.asarray(margin, dtype=float)


@dataclass
class BsmConfig:
    """Thresholds and bounds for margin selection and population sizing."""

    beta: np.ndarray
    eta: float = 0.7
    epsilon: float = 0.4
    nu: int = 100
    xi: int = 10
    confidence_mode: str = "raw"
    confidence_cap: float = CONFIDENCE_CAP

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if np.any(self.beta <= 0):
            raise ConfigError("physical margins beta must be positive")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        if not (0 < self.xi <= self.nu):
            raise ConfigError("population bounds must satisfy 0 < xi <= nu")
        if self.confidence_mode not in ("raw", "calibrated"):
            raise ConfigError("confidence_mode must be 'raw' or 'calibrated'")


def confidence(model, e_c, cap=CONFIDENCE_CAP):
    """1 / sum of distances from e_c to the model's support vectors.

    Grows as e_c approaches the training support; capped when e_c
    coincides with every support vector.
    """
    if model.n_s < 1:
        raise ConfigError("confidence needs at least one support vector")
    e = np.asarray(e_c, dtype=float)
    dist = np.linalg.norm(model.support_vectors - e[None, :], axis=1).sum()
    if dist == 0.0:
        return cap
    return min(1.0 / dist, cap)


def overall_confidence(per_input):
    """Arithmetic mean of the per-input confidence scores."""
    vals = np.asarray(per_input, dtype=float)
    if vals.size < 1:
        raise ConfigError("need at least one confidence score")
    return float(vals.mean())


def select_margin(predicted, overall_conf, j_prev1, j_prev2, cfg):
    """The margin handed to the GA for sampling.

    Returns the (clamped) predicted margins when the previous cycle's cost
    did not regress (or already beat epsilon) AND the prediction confidence
    clears eta; the physical margins otherwise.  Cycles without two prior
    costs (None arguments) always get the physical margins.
    """
    if j_prev1 is None:
        return MarginVector(cfg.beta.copy())
    improving = (j_prev2 is not None and j_prev1 <= j_prev2) or (j_prev1 < cfg.epsilon)
    if improving and overall_conf > cfg.eta:
        return MarginVector(np.clip(_widths(predicted), 0.0, cfg.beta))
    return MarginVector(cfg.beta.copy())


def population_size(psi, cfg):
    """p_c = max(floor(nu * max_i(psi_i/beta_i)), xi), clamped to [xi, nu]."""
    ratios = np.clip(_widths(psi), 0.0, cfg.beta) / cfg.beta
    alpha_c = float(ratios.max())
    return int(min(max(int(np.floor(cfg.nu * alpha_c)), cfg.xi), cfg.nu))


def bsm_from_solutions(z_c, z_prev, spec, alignment="time"):
    """Best smallest margin between consecutive cycles' solutions.

    ``time`` alignment (default) compares the h-1 steps the two horizons
    share at the same absolute time index; ``position`` compares same-index
    genes across all h steps.  With h == 1 there is no overlap and the
    margin is zero.
    """
    cur = (z_c.decode(spec.n) if isinstance(z_c, HorizonSolution)
           else np.asarray(z_c, dtype=float).reshape(spec.h, spec.n))
    prev = (z_prev.decode(spec.n) if isinstance(z_prev, HorizonSolution)
            else np.asarray(z_prev, dtype=float).reshape(spec.h, spec.n))
    if alignment == "time":
        if spec.h == 1:
            return MarginVector(np.zeros(spec.n))
        diff = cur[:-1] - prev[1:]
    elif alignment == "position":
        diff = cur - prev
    else:
        raise ConfigError("alignment must be 'time' or 'position'")
    return MarginVector(np.abs(diff).max(axis=0))


# ---------------------------------------------------------------------------
# Regressor bank
# ---------------------------------------------------------------------------

def _per_input(value, n, name):
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ConfigError(f"{name} must be scalar or length {n}")
    return arr


@dataclass
class MarginPredictor:
    """Bank of n per-input SVR models plus the confidence gate state."""

    models: list
    cfg: BsmConfig
    calibration: np.ndarray | None = None

    @property
    def n_inputs(self):
        return len(self.models)

    def predict_deltas(self, e_c, counter=None):
        """Per-input margin predictions, clamped to [0, beta_i]."""
        raw = np.array([m.predict(e_c, counter=counter) for m in self.models])
        return np.clip(raw, 0.0, self.cfg.beta)

    def confidences(self, e_c):
        return np.array([confidence(m, e_c, self.cfg.confidence_cap) for m in self.models])

    def effective_eta(self):
        """Gate threshold: raw eta, or the (1-eta) quantile of the calibration
        confidences so that larger eta trusts predictions more often."""
        if self.cfg.confidence_mode == "raw":
            return self.cfg.eta
        if self.calibration is None or self.calibration.size == 0:
            raise ConfigError("calibrated mode requires a calibration pass")
        q = min(max(1.0 - self.cfg.eta, 0.0), 1.0)
        return float(np.quantile(self.calibration, q))

    def calibrate(self, validation_errors):
        """Record the confidence distribution of a validation split."""
        vals = np.asarray(validation_errors, dtype=float)
        self.calibration = np.sort([
            overall_confidence(self.confidences(e)) for e in np.atleast_2d(vals)])
        return self

    def margins_for_cycle(self, e_c, j_prev1, j_prev2):
        """Margin decision for one cycle.

        Returns (psi, info) where info carries the predictions, the overall
        confidence and whether the gate trusted them.
        """
        deltas = self.predict_deltas(e_c)
        conf = overall_confidence(self.confidences(e_c))
        threshold = self.effective_eta()
        improving = (j_prev1 is not None
                     and ((j_prev2 is not None and j_prev1 <= j_prev2)
                          or j_prev1 < self.cfg.epsilon))
        trusted = improving and conf > threshold
        psi = MarginVector(deltas if trusted else self.cfg.beta.copy())
        return psi, {"deltas": deltas, "overall_confidence": conf,
                     "trusted": trusted, "psi": psi.widths}

    def save(self, path):
        payload = {
            "version": np.array([SERIAL_VERSION]),
            "n_inputs": np.array([self.n_inputs]),
            "beta": self.cfg.beta,
            "eta": np.array([self.cfg.eta]),
            "epsilon": np.array([self.cfg.epsilon]),
            "nu": np.array([self.cfg.nu]),
            "xi": np.array([self.cfg.xi]),
            "confidence_mode": np.array([self.cfg.confidence_mode]),
            "confidence_cap": np.array([self.cfg.confidence_cap]),
        }
        if self.calibration is not None:
            payload["calibration"] = self.calibration
        for i, m in enumerate(self.models):
            payload[f"sv_{i}"] = m.support_vectors
            payload[f"coef_{i}"] = m.dual_coefs
            payload[f"scalars_{i}"] = np.array([m.bias, m.gamma, m.C, m.lam])
        np.savez(path, **payload)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            if int(data["version"][0]) != SERIAL_VERSION:
                raise DatasetFormatError(f"unsupported predictor file version {int(data['version'][0])}")
            n = int(data["n_inputs"][0])
            models = []
            for i in range(n):
                bias, gamma, c, lam = data[f"scalars_{i}"]
                models.append(SvrModel(data[f"sv_{i}"], data[f"coef_{i}"],
                                       float(bias), float(gamma), float(c), float(lam)))
            cfg = BsmConfig(beta=data["beta"], eta=float(data["eta"][0]),
                            epsilon=float(data["epsilon"][0]), nu=int(data["nu"][0]),
                            xi=int(data["xi"][0]),
                            confidence_mode=str(data["confidence_mode"][0]),
                            confidence_cap=float(data["confidence_cap"][0]))
            calib = data["calibration"] if "calibration" in data else None
            return cls(models, cfg, calib)


def train_margin_predictor(errors, deltas, cfg, C, lam, gamma, *,
                           tol=1e-5, max_records=4000, validation_fraction=0.2,
                           rng=None):
    """Fit the n per-input SVRs on (E_c, delta_c) records.

    ``C``/``lam``/``gamma`` may be scalars or per-input sequences.  Training
    subsamples to ``max_records`` rows (SMO cost grows quadratically); the
    held-out tail of the subsample feeds the confidence calibration.
    """
    x = np.atleast_2d(np.asarray(errors, dtype=float))
    t = np.atleast_2d(np.asarray(deltas, dtype=float))
    if x.shape[0] != t.shape[0]:
        raise DatasetFormatError("errors and deltas must have equal record counts")
    n = t.shape[1]
    cs = _per_input(C, n, "C")
    lams = _per_input(lam, n, "lam")
    gammas = _per_input(gamma, n, "gamma")

    rng = rng if rng is not None else np.random.default_rng(0)
    idx = np.arange(x.shape[0])
    if x.shape[0] > max_records:
        idx = rng.choice(x.shape[0], size=max_records, replace=False)
        idx.sort()
    n_val = max(1, int(len(idx) * validation_fraction)) if len(idx) > 5 else 0
    train_idx = idx[:len(idx) - n_val] if n_val else idx
    val_idx = idx[len(idx) - n_val:] if n_val else idx

    models = [train_svr((x[train_idx], t[train_idx, i]), cs[i], lams[i], gammas[i], tol=tol)
              for i in range(n)]
    predictor = MarginPredictor(models, cfg)
    predictor.calibrate(x[val_idx])
    return predictor

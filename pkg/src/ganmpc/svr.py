"""Epsilon-insensitive support vector regression trained by SMO.

Solves the dual of

    min 1/2 ||w||^2 + C sum(zeta+ + zeta-)
    s.t. |t_j - (w' phi(x_j) + b)| <= lam + zeta

with a Gaussian kernel K(x, y) = exp(-||x - y||^2 / gamma).  The dual is
attacked in the doubled-variable form (alpha+ stacked over alpha-, labels
+1/-1) with second-order working-set selection, a maintained gradient and
an exact two-variable subproblem solve, LibSVM-style.  Only points with a
non-zero dual coefficient are retained for prediction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetFormatError, SvrTrainingError

SERIAL_VERSION = 1


def kernel(x, y, gamma, counter=None):
    """Gaussian kernel exp(-||x-y||^2/gamma); broadcasts over leading axes.

    ``counter`` (a ``KernelEvalCounter``) tallies pairwise evaluations so
    prediction-cost scaling can be asserted by count rather than by timing.
    """
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = ((x - y) ** 2).sum(axis=-1)
    if counter is not None:
        counter.add(int(np.prod(d2.shape)) if d2.ndim else 1)
    return np.exp(-d2 / gamma)


class KernelEvalCounter:
    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)


def _gram(x, gamma):
    sq = (x ** 2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / gamma)


@dataclass
class SvrModel:
    """Trained regressor: support vectors, dual coefficients and bias."""

    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float
    C: float
    lam: float

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=float))
        self.dual_coefs = np.asarray(self.dual_coefs, dtype=float).ravel()
        if self.support_vectors.shape[0] != self.dual_coefs.shape[0]:
            raise ConfigError("support vectors and dual coefficients must align")

    @property
    def n_s(self):
        return self.dual_coefs.shape[0]

    def predict(self, e, counter=None):
        """Dual-form prediction sum_j (a+_j - a-_j) K(x_j, e) + b."""
        e = np.asarray(e, dtype=float)
        single = e.ndim == 1
        pts = e[None, :] if single else e
        if self.n_s == 0:
            out = np.full(pts.shape[0], self.bias)
        else:
            k = kernel(pts[:, None, :], self.support_vectors[None, :, :], self.gamma,
                       counter=counter)
            out = k @ self.dual_coefs + self.bias
        return float(out[0]) if single else out


def predict_margin(model, e_c, counter=None):
    """Predicted margin for one error vector (caller clamps to [0, beta])."""
    return model.predict(e_c, counter=counter)


def _coerce_records(records):
    if isinstance(records, tuple) and len(records) == 2:
        x, t = records
    else:
        pairs = list(records)
        x = np.array([np.asarray(p[0], dtype=float) for p in pairs])
        t = np.array([float(p[1]) for p in pairs])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    if x.shape[0] != t.shape[0]:
        raise DatasetFormatError("inputs and targets must have equal length")
    if x.shape[0] < 2:
        raise ConfigError("training needs at least 2 records")
    return x, t


def train_svr(records, C, lam, gamma, tol=1e-5, max_iter=10 ** 6):
    """Solve the epsilon-insensitive dual by SMO to the given KKT tolerance.

    ``records`` is either an (X, t) pair of arrays or a sequence of
    (error-vector, target) tuples.  Raises SvrTrainingError (carrying the
    final KKT violation) if the pair-update cap is exhausted first.
    """
    x, t = _coerce_records(records)
    if C <= 0 or lam < 0 or gamma <= 0:
        raise ConfigError("hyper-parameters must be positive (lam >= 0)")
    d = x.shape[0]
    kmat = _gram(x, gamma)

    # doubled variables: index i < d is alpha+_i (label +1), i >= d is alpha-_{i-d}
    y = np.concatenate([np.ones(d), -np.ones(d)])
    p = np.concatenate([lam - t, lam + t])
    alpha = np.zeros(2 * d)
    grad = p.copy()
    qdiag = np.tile(np.diag(kmat).copy(), 2)

    def q_col(i):
        base = kmat[i % d]
        return y[i] * y * np.tile(base, 2)

    tau = 1e-12
    it = 0
    while True:
        minus_yg = -y * grad
        up = (y > 0) & (alpha < C) | (y < 0) & (alpha > 0)
        low = (y > 0) & (alpha > 0) | (y < 0) & (alpha < C)
        if not up.any() or not low.any():
            m_val = big_m = 0.0
            break
        m_val = minus_yg[up].max()
        big_m = minus_yg[low].min()
        gap = m_val - big_m
        if gap <= tol:
            break
        if it >= max_iter:
            raise SvrTrainingError(f"SMO hit the {max_iter} pair-update cap "
                                   f"with KKT violation {gap:.3e} > tol {tol:.1e}")

        i = int(np.flatnonzero(up)[minus_yg[up].argmax()])
        qi = q_col(i)
        # second-order selection of j among violating members of I_low
        cand = low & (minus_yg < m_val)
        if not cand.any():
            cand = low
        b_ij = m_val - minus_yg[cand]
        a_ij = qdiag[i] + qdiag[cand] - 2.0 * y[i] * y[cand] * qi[cand]
        a_ij = np.where(a_ij <= 0, tau, a_ij)
        gains = -(b_ij ** 2) / a_ij
        j = int(np.flatnonzero(cand)[gains.argmin()])
        qj = q_col(j)

        old_ai, old_aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = qdiag[i] + qdiag[j] + 2.0 * qi[j]
            if quad <= 0:
                quad = tau
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = qdiag[i] + qdiag[j] - 2.0 * qi[j]
            if quad <= 0:
                quad = tau
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        grad += qi * dai + qj * daj
        it += 1

    beta = alpha[:d] - alpha[d:]

    # bias: average of -y*grad over free duals; KKT-interval midpoint otherwise
    free = (alpha > 0) & (alpha < C)
    minus_yg = -y * grad
    if free.any():
        bias = float(minus_yg[free].mean())
    else:
        bias = float(0.5 * (m_val + big_m))

    sv = np.abs(beta) > 1e-12 * C
    return SvrModel(x[sv], beta[sv], bias, float(gamma), float(C), float(lam))


def kkt_report(model, x=None, t=None):
    """Dual-feasibility numbers for invariants: max |coef| and sum of coefs."""
    return {
        "max_abs_coef": float(np.abs(model.dual_coefs).max()) if model.n_s else 0.0,
        "coef_sum": float(model.dual_coefs.sum()),
    }


def save_svr(model, path):
    """Persist a model as a versioned npz archive."""
    np.savez(path, version=np.array([SERIAL_VERSION]),
             support_vectors=model.support_vectors, dual_coefs=model.dual_coefs,
             bias=np.array([model.bias]), gamma=np.array([model.gamma]),
             C=np.array([model.C]), lam=np.array([model.lam]))


def load_svr(path):
    with np.load(path) as data:
        version = int(data["version"][0])
        if version != SERIAL_VERSION:
            raise DatasetFormatError(f"unsupported model file version {version}")
        return SvrModel(data["support_vectors"], data["dual_coefs"],
                        float(data["bias"][0]), float(data["gamma"][0]),
                        float(data["C"][0]), float(data["lam"][0]))

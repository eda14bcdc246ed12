"""Estimators of maximal (Hirschfeld-Gebelein-Renyi style) correlation.

Three routes to the same quantity:

* ``hgr_nn`` -- two inter-connected networks transform each variable; their
  standardized outputs' product is maximized by gradient ascent.
* ``hgr_witsenhausen`` -- discretized oracle: equal-frequency binning, a
  normalized joint-probability matrix, and its second singular value.
* ``rdc`` -- randomized dependence coefficient: largest canonical correlation
  between sine features of copula projections.

All estimates are clamped into [0, 1]; 0 indicates independence, 1 a
deterministic co-monotone relationship. For a bivariate Gaussian pair the
target value is |r|, which the calibration tests pin for all three routes.
"""

from dataclasses import dataclass, field

import numpy as np

from .mlp import Mlp, Optimizer, apply_update, Gradients
from .numkit import Rng, rank_transform, standardize_columns, svd_small

__all__ = [
    "HgrConfig",
    "HgrEstimate",
    "HgrAdversaryPair",
    "hgr_nn",
    "hgr_witsenhausen",
    "rdc",
    "hgr_conditional",
    "ConditionalHgr",
]

_STD_TOL = 1e-12


@dataclass
class HgrConfig:
    """Budget and architecture of the neural estimator."""

    epochs: int = 50
    learning_rate: float = 5e-3
    hidden: tuple = (16, 16)
    restarts: int = 3
    # full-batch below this size, minibatches above
    full_batch_max: int = 5000
    batch_size: int = 2048
    seed: int = 0


@dataclass
class HgrEstimate:
    value: float
    estimator: str
    diagnostics: dict = field(default_factory=dict)


class HgrAdversaryPair:
    """The two transform networks (one per variable) and their optimizers.

    Scalar identity heads; outputs are standardized per batch before the
    product, so a collapsed (constant) output degrades to a zero objective
    rather than failing.
    """

    def __init__(self, u_dim, v_dim, hidden=(16, 16), learning_rate=1e-2, rng=None,
                 steps_per_update=1):
        rng = rng if rng is not None else Rng(0)
        self.f_net = Mlp([u_dim, *hidden, 1]).init_xavier(rng.child(0))
        self.g_net = Mlp([v_dim, *hidden, 1]).init_xavier(rng.child(1))
        self.f_opt = Optimizer("adam", learning_rate)
        self.g_opt = Optimizer("adam", learning_rate)
        self.steps_per_update = steps_per_update

    @staticmethod
    def _standardize(raw):
        std = raw.std()
        if std < _STD_TOL:
            return np.zeros_like(raw), 1.0, True
        return (raw - raw.mean()) / std, std, False

    def objective(self, u, v):
        """J = mean of the product of standardized outputs."""
        a, _ = self.f_net.forward(u)
        b, _ = self.g_net.forward(v)
        a_hat, _, _ = self._standardize(a.ravel())
        b_hat, _, _ = self._standardize(b.ravel())
        return float((a_hat * b_hat).mean())

    def _objective_grads(self, u, v):
        n = u.shape[0]
        a, cache_f = self.f_net.forward(u)
        b, cache_g = self.g_net.forward(v)
        a_hat, a_std, a_const = self._standardize(a.ravel())
        b_hat, b_std, b_const = self._standardize(b.ravel())
        j = float((a_hat * b_hat).mean())
        if a_const or b_const:
            zero = np.zeros((n, 1))
            return j, zero, zero, cache_f, cache_g, True
        # dJ/da through the batch standardization (b_hat has mean 0)
        dj_da = (b_hat - j * a_hat) / (n * a_std)
        dj_db = (a_hat - j * b_hat) / (n * b_std)
        return j, dj_da[:, None], dj_db[:, None], cache_f, cache_g, False

    def ascend(self, u, v, steps):
        """Gradient-ascent steps on J over both networks; returns final J."""
        j = 0.0
        for _ in range(steps):
            j, dj_da, dj_db, cache_f, cache_g, degenerate = self._objective_grads(u, v)
            if degenerate:
                # kick out of the collapsed state via the raw (unstandardized)
                # product gradient: J's gradient is zero there
                continue
            apply_update(self.f_net, self.f_net.backward(cache_f, dj_da), self.f_opt, "ascent")
            apply_update(self.g_net, self.g_net.backward(cache_g, dj_db), self.g_opt, "ascent")
        return j

    def objective_and_input_grad(self, u, v):
        """J and dJ/du with both networks frozen (the penalty path)."""
        j, dj_da, _, cache_f, _, degenerate = self._objective_grads(u, v)
        if degenerate:
            return j, np.zeros_like(np.asarray(u, dtype=float).reshape(u.shape[0], -1)), True
        grads: Gradients = self.f_net.backward(cache_f, dj_da)
        return j, grads.input, False


def _as_columns(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def hgr_nn(u, v, cfg: HgrConfig = None) -> HgrEstimate:
    """Neural estimate of the maximal correlation between u and v.

    Handles multi-column u and v. Runs ``cfg.restarts`` independently seeded
    optimizations and keeps the best final objective, evaluated on the full
    sample.
    """
    cfg = cfg or HgrConfig()
    u = _as_columns(u)
    v = _as_columns(v)
    n = u.shape[0]
    if v.shape[0] != n:
        raise ValueError("u and v must have the same number of rows")
    if n < 50:
        raise ValueError(f"hgr_nn needs n >= 50, got {n}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("hgr_nn requires finite inputs")

    u_std, _, _ = standardize_columns(u)
    v_std, _, _ = standardize_columns(v)

    best = None
    for restart in range(cfg.restarts):
        rng = Rng(cfg.seed).child(restart)
        pair = HgrAdversaryPair(
            u.shape[1], v.shape[1], hidden=cfg.hidden,
            learning_rate=cfg.learning_rate, rng=rng,
        )
        batch_rng = rng.child(99)
        j_first = None
        for epoch in range(cfg.epochs):
            if n <= cfg.full_batch_max:
                pair.ascend(u_std, v_std, 1)
            else:
                order = batch_rng.permutation(n)
                for start in range(0, n, cfg.batch_size):
                    idx = order[start : start + cfg.batch_size]
                    if idx.size < 2:
                        continue
                    pair.ascend(u_std[idx], v_std[idx], 1)
            if epoch == 0:
                j_first = abs(pair.objective(u_std, v_std))
        j_final = abs(pair.objective(u_std, v_std))
        if best is None or j_final > best[0]:
            best = (j_final, j_first, restart)

    j_final, j_first, restart = best
    clamped = j_final > 1.0
    return HgrEstimate(
        value=min(1.0, j_final),
        estimator="neural",
        diagnostics={
            "epochs": cfg.epochs,
            "restarts": cfg.restarts,
            "best_restart": restart,
            "objective_epoch1": j_first,
            "objective_final": j_final,
            "clamped": clamped,
        },
    )


def _equal_frequency_bins(x, bins):
    """Bin index per observation; stable tie order, so any strictly monotone
    transform of x yields identical bins."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    order = np.argsort(x, kind="stable")
    idx = np.empty(n, dtype=int)
    idx[order] = (np.arange(n) * bins) // n
    return idx


def hgr_witsenhausen(u, v, bins=12, alpha=0.5) -> HgrEstimate:
    """Discretized maximal-correlation oracle.

    Bins each variable into equal-frequency cells, forms
    Q[i, j] = p(i, j) / sqrt(p_u(i) * p_v(j)) from the additively smoothed
    joint, and returns the second-largest singular value (the largest is 1
    for an exact joint).
    """
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    n = u.size
    if v.size != n:
        raise ValueError("u and v must have the same length")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if n < 10 * bins * bins:
        raise ValueError(f"need n >= 10 * bins^2 = {10 * bins * bins}, got {n}")
    bu = _equal_frequency_bins(u, bins)
    bv = _equal_frequency_bins(v, bins)
    counts = np.zeros((bins, bins))
    np.add.at(counts, (bu, bv), 1.0)
    joint = (counts + alpha) / (n + alpha * bins * bins)
    pu = joint.sum(axis=1)
    pv = joint.sum(axis=0)
    q = joint / np.sqrt(np.outer(pu, pv))
    sigma, _, _ = svd_small(q)
    value = float(sigma[1])
    return HgrEstimate(
        value=min(1.0, max(0.0, value)),
        estimator="witsenhausen",
        diagnostics={"bins": bins, "alpha": alpha, "sigma_top": float(sigma[0])},
    )


def rdc(u, v, k_projections=20, scale=1.0 / 6.0, rng=None, ridge=1e-8) -> HgrEstimate:
    """Randomized dependence coefficient.

    Rank-transforms each variable to its empirical copula, appends a constant
    1, projects through random affine maps with N(0, scale^2) weights, applies
    a sine nonlinearity, and returns the largest canonical correlation of the
    two feature blocks (SVD of the ridge-whitened cross-covariance).
    """
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    n = u.size
    if v.size != n:
        raise ValueError("u and v must have the same length")
    if n < 20:
        raise ValueError(f"rdc needs n >= 20, got {n}")
    if k_projections < 1:
        raise ValueError("k_projections must be >= 1")
    rng = rng if rng is not None else Rng(0)

    def features(x):
        cop = np.column_stack([rank_transform(x), np.ones(n)])
        w = rng.normal(0.0, scale, size=(2, k_projections))
        f = np.sin(cop @ w)
        return f - f.mean(axis=0)

    fu = features(u)
    fv = features(v)
    cuu = fu.T @ fu / n + ridge * np.eye(k_projections)
    cvv = fv.T @ fv / n + ridge * np.eye(k_projections)
    cuv = fu.T @ fv / n

    def inv_sqrt(c):
        evals, evecs = np.linalg.eigh(c)
        evals = np.maximum(evals, ridge)
        return evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T

    m = inv_sqrt(cuu) @ cuv @ inv_sqrt(cvv)
    sigma, _, _ = svd_small(m)
    value = float(sigma[0])
    return HgrEstimate(
        value=min(1.0, max(0.0, value)),
        estimator="rdc",
        diagnostics={"k_projections": k_projections, "scale": scale, "clamped": value > 1.0},
    )


@dataclass
class ConditionalHgr:
    per_class: dict
    mean: float
    skipped: list


def _min_rows(estimator, bins):
    if estimator == "neural":
        return 50
    if estimator == "witsenhausen":
        return 10 * bins * bins
    if estimator == "rdc":
        return 20
    raise ValueError(f"unknown estimator {estimator!r}")


def hgr_conditional(u, v, z_labels, estimator="neural", cfg: HgrConfig = None,
                    bins=8, rng=None) -> ConditionalHgr:
    """Dependence of u and v within each class of z, plus the unweighted mean.

    Classes smaller than the chosen estimator's minimum sample size are
    flagged in ``skipped`` and excluded from the mean.
    """
    u = _as_columns(u)
    v = _as_columns(v)
    z = np.asarray(z_labels)
    if not (u.shape[0] == v.shape[0] == z.shape[0]):
        raise ValueError("u, v, z must share their number of rows")
    per_class = {}
    skipped = []
    minimum = _min_rows(estimator, bins)
    for cls in sorted(np.unique(z).tolist()):
        mask = z == cls
        n_cls = int(mask.sum())
        if n_cls < minimum:
            skipped.append(cls)
            continue
        if estimator == "neural":
            sub_cfg = cfg or HgrConfig()
            per_class[cls] = hgr_nn(u[mask], v[mask], sub_cfg)
        elif estimator == "witsenhausen":
            per_class[cls] = hgr_witsenhausen(u[mask].ravel(), v[mask].ravel(), bins=bins)
        else:
            per_class[cls] = rdc(u[mask].ravel(), v[mask].ravel(), rng=rng)
    if per_class:
        mean = float(np.mean([e.value for e in per_class.values()]))
    else:
        mean = float("nan")
    return ConditionalHgr(per_class=per_class, mean=mean, skipped=skipped)

"""Baseline predictors and performance metrics for pricing tasks.

GLMs are fit by iteratively reweighted least squares. With a canonical link
and an intercept the fitted model satisfies the balance property: the sum of
predictions equals the sum of observations on the training data, i.e. total
premium matches total loss.
"""

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Glm",
    "TaskSpec",
    "glm_fit",
    "deviance",
    "edr",
    "gini",
    "accuracy",
    "task_for",
]

FAMILIES = ("bernoulli_logit", "poisson_log", "gaussian_identity")
TASKS = ("binary", "frequency", "severity")

_SEPARATION_COEF = 30.0


@dataclass
class TaskSpec:
    """Prediction task tag and its implied loss.

    binary -> log-loss, frequency -> Poisson deviance, severity -> squared
    error. ``exposure_used`` marks frequency models with a time-at-risk
    log-offset.
    """

    task: str
    exposure_used: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")

    @property
    def family(self):
        return {
            "binary": "bernoulli_logit",
            "frequency": "poisson_log",
            "severity": "gaussian_identity",
        }[self.task]


def task_for(name, exposure_used=False):
    return TaskSpec(name, exposure_used)


class Glm:
    """Generalized linear model with an explicit intercept."""

    def __init__(self, family):
        if family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        self.family = family
        self.coefficients = None  # intercept first
        self.fitted = False
        self.separation_warning = False
        self.iterations = 0

    def linear_predictor(self, x, offset=None):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        eta = self.coefficients[0] + x @ self.coefficients[1:]
        if offset is not None:
            eta = eta + np.asarray(offset, dtype=float)
        return eta

    def predict(self, x, offset=None):
        if not self.fitted:
            raise ValueError("predict before fit")
        return _inverse_link(self.family, self.linear_predictor(x, offset))


def _inverse_link(family, eta):
    if family == "bernoulli_logit":
        return 1.0 / (1.0 + np.exp(-eta))
    if family == "poisson_log":
        return np.exp(np.clip(eta, -60.0, 60.0))
    return eta


def _check_support(family, y):
    if family == "bernoulli_logit":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("bernoulli targets must be 0/1")
    elif family == "poisson_log":
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("poisson targets must be nonnegative integers")


def glm_fit(x, y, family, offset=None, max_iter=100, tol=1e-9, ridge=1e-8):
    """Fit a GLM by IRLS.

    Converges when the relative deviance change drops below ``tol``. A ridge
    term is added only if the weighted normal equations come out singular.
    Logistic fits with any |coefficient| > 30 are flagged as (quasi-)separated.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ValueError("x and y row counts differ")
    _check_support(family, y)
    offset_arr = None if offset is None else np.asarray(offset, dtype=float).ravel()

    n = y.size
    design = np.column_stack([np.ones(n), x])
    model = Glm(family)

    # standard mean initializations
    if family == "bernoulli_logit":
        mu = (y + 0.5) / 2.0
    elif family == "poisson_log":
        mu = y + 0.5
    else:
        mu = np.full(n, y.mean())

    beta = np.zeros(design.shape[1])
    dev = _family_deviance(family, y, mu)
    trace = [dev]
    for iteration in range(1, max_iter + 1):
        if family == "bernoulli_logit":
            eta = np.log(mu / (1.0 - mu))
            w = mu * (1.0 - mu)
            z = eta + (y - mu) / np.maximum(w, 1e-12)
        elif family == "poisson_log":
            eta = np.log(mu)
            w = mu
            z = eta + (y - mu) / np.maximum(w, 1e-12)
        else:
            eta = mu
            w = np.ones(n)
            z = y.astype(float)
        if offset_arr is not None:
            z = z - offset_arr
        wx = design * w[:, None]
        lhs = design.T @ wx
        rhs = wx.T @ z
        try:
            beta = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            beta = np.linalg.solve(lhs + ridge * np.eye(lhs.shape[0]), rhs)
        eta = design @ beta
        if offset_arr is not None:
            eta = eta + offset_arr
        mu = _inverse_link(family, eta)
        if family == "bernoulli_logit":
            mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        elif family == "poisson_log":
            mu = np.maximum(mu, 1e-12)
        new_dev = _family_deviance(family, y, mu)
        trace.append(new_dev)
        if abs(new_dev - dev) < tol * (abs(new_dev) + 0.1):
            dev = new_dev
            break
        dev = new_dev
    else:
        raise RuntimeError(
            f"IRLS did not converge in {max_iter} iterations; deviance trace: "
            f"{[round(d, 6) for d in trace[-5:]]}"
        )

    model.coefficients = beta
    model.fitted = True
    model.iterations = iteration
    if family == "bernoulli_logit" and np.any(np.abs(beta) > _SEPARATION_COEF):
        model.separation_warning = True
        warnings.warn("possible separation: a logistic coefficient exceeds 30", RuntimeWarning)
    return model


def _family_deviance(family, y, mu):
    if family == "bernoulli_logit":
        mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        return float(-2.0 * np.sum(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))
    if family == "poisson_log":
        mu = np.maximum(mu, 1e-12)
        y_log_y = np.where(y > 0, y * np.log(np.maximum(y, 1e-12)), 0.0)
        return float(2.0 * np.sum(y_log_y - y * np.log(mu) - y + mu))
    return float(np.sum((y - mu) ** 2))


def deviance(task: TaskSpec, y, pred):
    """Total deviance of predictions under the task's loss; nonnegative."""
    y = np.asarray(y, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if y.size != pred.size:
        raise ValueError("y and pred must have the same length")
    if task.task == "binary":
        if np.any(pred <= 0.0) or np.any(pred >= 1.0):
            raise ValueError("binary predictions must be probabilities in (0, 1)")
        return _family_deviance("bernoulli_logit", y, pred)
    if task.task == "frequency":
        if np.any(pred <= 0.0):
            raise ValueError("frequency predictions must be positive rates")
        return _family_deviance("poisson_log", y, pred)
    return _family_deviance("gaussian_identity", y, pred)


def edr(task: TaskSpec, y, pred, exposure=None):
    """Expected deviance ratio: 1 - deviance(model) / deviance(null).

    The null model is the intercept-only predictor on the same data (with an
    exposure offset when present). Negative values mean the model explains
    less than a constant.
    """
    y = np.asarray(y, dtype=float).ravel()
    if task.task == "frequency" and exposure is not None:
        exposure = np.asarray(exposure, dtype=float).ravel()
        null_pred = exposure * (y.sum() / exposure.sum())
    else:
        null_pred = np.full(y.size, y.mean())
    if task.task == "binary":
        null_pred = np.clip(null_pred, 1e-12, 1.0 - 1e-12)
    elif task.task == "frequency":
        null_pred = np.maximum(null_pred, 1e-12)
    d_null = deviance(task, y, null_pred)
    if d_null <= 0.0:
        raise ValueError("null deviance is zero; ratio undefined")
    return 1.0 - deviance(task, y, pred) / d_null


def gini(y, pred, exposure=None):
    """Lorenz-curve concentration index of outcomes ordered by prediction.

    Observations are ranked by descending prediction (ties take their average
    rank, i.e. tied blocks merge into one Lorenz segment); the index is twice
    the area between the concentration curve and the diagonal. Returns
    ``(gini, normalized_gini)`` where the normalized variant divides by the
    index of the oracle ordering (ranking by the outcome itself).
    """
    y = np.asarray(y, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if y.size != pred.size:
        raise ValueError("y and pred must have the same length")
    if y.sum() <= 0:
        raise ValueError("gini needs a positive outcome total")
    w = np.ones(y.size) if exposure is None else np.asarray(exposure, dtype=float).ravel()

    def lorenz_index(keys):
        # merge tied keys into single segments (average-rank tie handling)
        order = np.argsort(-keys, kind="stable")
        yk = y[order]
        wk = w[order]
        kk = keys[order]
        boundaries = np.flatnonzero(np.diff(kk) != 0.0) + 1
        y_seg = np.add.reduceat(yk, np.concatenate(([0], boundaries)))
        w_seg = np.add.reduceat(wk, np.concatenate(([0], boundaries)))
        y_cum = np.concatenate(([0.0], np.cumsum(y_seg))) / y.sum()
        w_cum = np.concatenate(([0.0], np.cumsum(w_seg))) / w.sum()
        # trapezoid area under the concentration curve
        area = float(np.sum((y_cum[1:] + y_cum[:-1]) * np.diff(w_cum)) / 2.0)
        return 2.0 * (area - 0.5)

    raw = lorenz_index(pred)
    oracle = lorenz_index(y)
    normalized = raw / oracle if oracle > 0 else 0.0
    return raw, normalized


def accuracy(y_binary, pred_scores, threshold=0.5):
    """Fraction of correct labels after thresholding scores."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    y = np.asarray(y_binary).ravel()
    scores = np.asarray(pred_scores, dtype=float).ravel()
    labels = (scores >= threshold).astype(int)
    return float((labels == y).mean())

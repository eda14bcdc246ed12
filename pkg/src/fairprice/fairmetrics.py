"""Fairness measurements over model predictions.

Binary-group metrics (p-rule, disparate impact, disparate mistreatment) apply
when the sensitive attribute is binary; the quantile and dependence metrics
(``fair_quant``, ``hgr_eo``) also cover continuous predictions and sensitive
attributes.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .dependence import HgrConfig, hgr_conditional

__all__ = [
    "p_rule",
    "disparate_impact",
    "disparate_mistreatment",
    "fair_quant",
    "fair_quant_by_class",
    "fair_quant_eo",
    "hgr_eo",
    "group_counts",
    "FairnessReport",
    "report_to_json",
    "report_from_json",
    "report_csv_header",
    "report_csv_row",
]

REPORT_FORMAT = "fairprice-report"
REPORT_VERSION = 1


def _binary_groups(s):
    s = np.asarray(s).ravel()
    values = np.unique(s)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError(f"sensitive attribute must be binary 0/1, saw values {values}")
    g1 = s == 1
    g0 = s == 0
    if not g1.any() or not g0.any():
        raise ValueError("both sensitive groups must be nonempty")
    return g0, g1


def _positive_rates(pred_labels, s):
    pred = np.asarray(pred_labels).ravel()
    g0, g1 = _binary_groups(s)
    return float(pred[g0].mean()), float(pred[g1].mean())


def p_rule(pred_labels, s):
    """Minimum ratio of group positive rates; 1 is perfectly fair.

    Both rates zero counts as perfectly equal (1.0); exactly one zero rate is
    maximally unfair (0.0).
    """
    rate0, rate1 = _positive_rates(pred_labels, s)
    if rate0 == 0.0 and rate1 == 0.0:
        return 1.0
    if rate0 == 0.0 or rate1 == 0.0:
        return 0.0
    return min(rate1 / rate0, rate0 / rate1)


def disparate_impact(pred_labels, s):
    """Absolute difference of group positive rates."""
    rate0, rate1 = _positive_rates(pred_labels, s)
    return abs(rate1 - rate0)


def disparate_mistreatment(pred_labels, y, s):
    """Group gaps in false-positive and false-negative rates: (d_fpr, d_fnr)."""
    pred = np.asarray(pred_labels).ravel()
    y = np.asarray(y).ravel()
    g0, g1 = _binary_groups(s)

    def cell_rate(group, y_value, pred_value):
        mask = group & (y == y_value)
        if not mask.any():
            raise ValueError(f"empty (Y={y_value}, S={int(group is g1)}) cell")
        return float((pred[mask] == pred_value).mean())

    fpr0 = cell_rate(g0, 0, 1)
    fpr1 = cell_rate(g1, 0, 1)
    fnr0 = cell_rate(g0, 1, 0)
    fnr1 = cell_rate(g1, 1, 0)
    return abs(fpr1 - fpr0), abs(fnr1 - fnr0)


def _quantile_slices(n, k):
    """Contiguous group sizes: the remainder is spread over the first groups."""
    base, extra = divmod(n, k)
    sizes = [base + 1] * extra + [base] * (k - extra)
    bounds = np.cumsum([0] + sizes)
    return [(bounds[i], bounds[i + 1]) for i in range(k)]


def fair_quant(pred, s, k=50):
    """Mean absolute deviation of per-sensitive-quantile prediction means
    from the global mean.

    Samples are sorted by the sensitive attribute (stable, so ties keep their
    original order) and split into ``k`` contiguous near-equal groups.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if pred.size != s.size:
        raise ValueError("pred and s must have the same length")
    if k < 2:
        raise ValueError("need k >= 2 quantiles")
    if pred.size < k:
        raise ValueError(f"need n >= k, got n={pred.size}, k={k}")
    if pred.max() == pred.min():
        return 0.0  # every quantile mean equals the global mean
    order = np.argsort(s, kind="stable")
    sorted_pred = pred[order]
    m = pred.mean()
    deviations = [
        abs(sorted_pred[lo:hi].mean() - m) for lo, hi in _quantile_slices(pred.size, k)
    ]
    return float(np.mean(deviations))


def fair_quant_by_class(pred, s, y_classes, k=50):
    """Per-class quantile deviation, measured against the full-set mean.

    Within each outcome class, samples are split into ``k`` sensitive
    quantiles; deviations of quantile means are taken from the mean of the
    whole set (not the class). Returns {class: value}.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    y = np.asarray(y_classes)
    if not (pred.size == s.size == y.size):
        raise ValueError("pred, s, y_classes must have the same length")
    classes = sorted(np.unique(y).tolist())
    too_small = [cls for cls in classes if (y == cls).sum() < k]
    if too_small:
        raise ValueError(f"classes smaller than k={k} quantiles: {too_small}")
    if pred.max() == pred.min():
        return {cls: 0.0 for cls in classes}
    m = pred.mean()
    out = {}
    for cls in classes:
        mask = y == cls
        order = np.argsort(s[mask], kind="stable")
        sorted_pred = pred[mask][order]
        deviations = [
            abs(sorted_pred[lo:hi].mean() - m)
            for lo, hi in _quantile_slices(sorted_pred.size, k)
        ]
        out[cls] = float(np.mean(deviations))
    return out


def fair_quant_eo(pred, s, y_classes, k=50):
    """Average of the per-class quantile deviations over the class domain."""
    per_class = fair_quant_by_class(pred, s, y_classes, k)
    return float(np.mean(list(per_class.values())))


def hgr_eo(pred, s, y_classes, estimator="neural", cfg: HgrConfig = None):
    """Mean per-class maximal correlation between predictions and s."""
    cond = hgr_conditional(pred, s, y_classes, estimator=estimator, cfg=cfg)
    return cond.mean


def group_counts(y, cap=2):
    """Collapse event counts to classes {0, 1, ..., cap+} for conditioning.

    Returns ``(classes, labels)`` where classes are the capped integer values
    and labels mark the top class as open-ended (e.g. ``["0", "1", "2+"]``).
    """
    y = np.asarray(y)
    if not np.all(np.isfinite(np.asarray(y, dtype=float))):
        raise ValueError("counts must be finite")
    if np.any(np.asarray(y, dtype=float) < 0):
        raise ValueError("counts must be nonnegative")
    if np.any(np.asarray(y, dtype=float) != np.asarray(y, dtype=float).astype(int)):
        raise ValueError("counts must be integer-valued")
    y = np.asarray(y, dtype=int)
    classes = np.minimum(y, cap)
    present = sorted(np.unique(classes).tolist())
    # the capped class is open-ended by definition
    labels = [f"{c}+" if c == cap else str(c) for c in present]
    return classes, labels


@dataclass
class FairnessReport:
    """All metric values for one fitted model on one dataset split.

    Binary-only fields stay None unless the sensitive attribute is binary
    (and, for mistreatment, the task is binary too).
    """

    p_rule: float = None
    disparate_impact: float = None
    d_fpr: float = None
    d_fnr: float = None
    fair_quant: float = None
    fair_quant_eo: float = None
    hgr_nn: float = None
    hgr_rdc: float = None
    hgr_eo: float = None
    accuracy: float = None
    mse: float = None
    gini: float = None
    edr: float = None
    hgr_component_car_s: float = None
    hgr_pred_car: float = None
    hgr_pred_geo: float = None
    quantile_count: int = 50
    class_domain: list = field(default_factory=list)


_REPORT_FIELDS = [
    "p_rule", "disparate_impact", "d_fpr", "d_fnr",
    "fair_quant", "fair_quant_eo", "hgr_nn", "hgr_rdc", "hgr_eo",
    "accuracy", "mse", "gini", "edr",
    "hgr_component_car_s", "hgr_pred_car", "hgr_pred_geo",
    "quantile_count", "class_domain",
]


def report_to_json(report: FairnessReport):
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
    doc.update(asdict(report))
    return doc


def report_from_json(doc):
    if doc.get("format") != REPORT_FORMAT:
        raise ValueError("not a fairness report document")
    fields = {k: doc.get(k) for k in _REPORT_FIELDS}
    return FairnessReport(**fields)


def report_csv_header():
    return list(_REPORT_FIELDS)


def report_csv_row(report: FairnessReport):
    row = []
    for name in _REPORT_FIELDS:
        value = getattr(report, name)
        if value is None:
            row.append("")
        elif name == "class_domain":
            row.append("|".join(str(v) for v in value))
        else:
            row.append(repr(value) if isinstance(value, float) else str(value))
    return row

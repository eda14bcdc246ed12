"""Assemble a FairnessReport for a fitted model on an evaluation split.

Dependence metrics retrain their estimator networks on the evaluation data
itself (estimates are of this split, not carried over from training).
Binary-group metrics appear only when the sensitive attribute is a single
0/1 column; mistreatment additionally needs a binary task with every
(outcome, group) cell populated.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import Portfolio
from .dependence import HgrConfig, hgr_nn, rdc
from .fairmetrics import (
    FairnessReport,
    disparate_impact,
    disparate_mistreatment,
    fair_quant,
    fair_quant_by_class,
    group_counts,
    hgr_eo,
    p_rule,
)
from .models import TaskSpec, accuracy, edr, gini
from .numkit import Rng
from .pricing import extract_components, predict

__all__ = ["MetricConfig", "evaluate_model"]


@dataclass
class MetricConfig:
    threshold: float = 0.5
    quantiles: int = 50
    count_cap: int = 2
    # leaner budget than the standalone estimator: one restart per estimate
    hgr: HgrConfig = field(default_factory=lambda: HgrConfig(epochs=40, restarts=1, seed=17))
    compute_hgr: bool = True
    compute_components: bool = True


def _is_binary_column(values):
    return set(np.unique(values)).issubset({0.0, 1.0})


def outcome_classes(task: TaskSpec, y, cap=2):
    """Class labels for the equalized-odds metrics, or None for severity."""
    if task.task == "binary":
        return y.astype(int), ["0", "1"]
    if task.task == "frequency":
        return group_counts(y.astype(int), cap=cap)
    return None, []


def evaluate_model(model, pf: Portfolio, cfg: MetricConfig = None) -> FairnessReport:
    cfg = cfg or MetricConfig()
    task = model.task
    pred = predict(model, pf)
    y = pf.y
    s = pf.s
    s0 = s[:, 0]
    binary_s = s.shape[1] == 1 and _is_binary_column(s0)

    report = FairnessReport(quantile_count=cfg.quantiles)
    report.mse = float(np.mean((pred - y) ** 2))
    if task.task == "binary":
        report.accuracy = accuracy(y, pred, cfg.threshold)
    if y.sum() > 0:
        report.gini = gini(y, pred, pf.exposure)[0]
    report.edr = edr(task, y, pred, pf.exposure)

    if binary_s and task.task == "binary":
        labels = (pred >= cfg.threshold).astype(float)
        report.p_rule = p_rule(labels, s0)
        report.disparate_impact = disparate_impact(labels, s0)
        try:
            report.d_fpr, report.d_fnr = disparate_mistreatment(labels, y, s0)
        except ValueError:
            pass  # an empty (Y, S) cell: mistreatment undefined on this split

    if pf.n >= cfg.quantiles:
        report.fair_quant = fair_quant(pred, s0, cfg.quantiles)

    classes, labels = outcome_classes(task, y, cfg.count_cap)
    report.class_domain = labels
    if classes is not None:
        sizes_ok = all(
            (classes == cls).sum() >= cfg.quantiles for cls in np.unique(classes)
        )
        if sizes_ok:
            per_class = fair_quant_by_class(pred, s0, classes, cfg.quantiles)
            report.fair_quant_eo = float(np.mean(list(per_class.values())))

    if cfg.compute_hgr:
        report.hgr_nn = hgr_nn(pred, s, cfg.hgr).value
        report.hgr_rdc = rdc(pred, s0, rng=Rng(cfg.hgr.seed).child(7)).value
        if classes is not None:
            report.hgr_eo = hgr_eo(pred, s, classes, cfg=cfg.hgr)
        if cfg.compute_components:
            car, geo = extract_components(model, pf)
            if car is not None:
                report.hgr_component_car_s = hgr_nn(car, s, cfg.hgr).value
                report.hgr_pred_car = hgr_nn(pred, car, cfg.hgr).value
            if geo is not None:
                report.hgr_pred_geo = hgr_nn(pred, geo, cfg.hgr).value
    return report

"""Adversarial fair training of the pricing architectures.

Demographic parity penalties (``corr``, ``simple``, ``hgr``) push the
prediction toward independence of the sensitive attribute; the equalized-odds
variants enforce that independence within each outcome class, with one
adversary pair and one weight per class. For the two-stage architecture only
the final predictor is retrained (the risk components stay frozen); for the
autoencoder the encoders and predictor move together, which lets training
reshape the components instead of merely ignoring them.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import Portfolio
from .fairmetrics import group_counts
from .mlp import Mlp
from .models import TaskSpec
from .numkit import Rng
from .pricing import (
    AutoencoderModel,
    TwoStageModel,
    train_autoencoder_stage,
    train_final_stage,
)
from .training import (
    CorrPenalty,
    EoHgrPenalty,
    EoSimplePenalty,
    HgrPenalty,
    NoPenalty,
    SimplePenalty,
    TrainingTrace,
)

__all__ = [
    "FairTrainConfig",
    "train_dp",
    "train_eo",
    "gradient_reversal_penalty",
]

PENALTIES = ("none", "corr", "simple", "hgr")


@dataclass
class FairTrainConfig:
    """Penalty kind, objective, and the knobs of the alternating loop."""

    penalty: str = "hgr"
    objective: str = "dp"
    lam: float = 1.0
    lambdas_by_class: dict = None  # equalized odds; default: lam for every class
    adversary_steps: int = 5
    adversary_lr: float = 1e-2
    adversary_hidden: tuple = (16, 16)
    epochs: int = None  # default: the model's pricing config
    batch_size: int = None
    learning_rate: float = None
    count_cap: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}")
        if self.objective not in ("dp", "eo"):
            raise ValueError("objective must be 'dp' or 'eo'")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError("lam must be finite and >= 0")


def _is_binary(s_col):
    return set(np.unique(s_col)).issubset({0.0, 1.0})


def _build_dp_penalty(cfg: FairTrainConfig, s):
    adv_rng = Rng(cfg.seed).child(2)
    if cfg.penalty == "none":
        return NoPenalty()
    if cfg.penalty == "corr":
        return CorrPenalty()
    if cfg.penalty == "hgr":
        return HgrPenalty(
            s.shape[1], cfg.adversary_steps, cfg.adversary_lr,
            cfg.adversary_hidden, adv_rng.child(0),
        )
    if s.shape[1] > 1:
        raise ValueError(
            "the simple reconstruction adversary expects a single sensitive "
            "column; use the 'corr' or 'hgr' penalty for multi-column S"
        )
    return SimplePenalty(
        s.shape[1], _is_binary(s[:, 0]), cfg.adversary_steps,
        cfg.adversary_lr, cfg.adversary_hidden, adv_rng.child(0),
    )


def _run_stage(model, portfolio, cfg, penalty, lam, classes):
    if isinstance(model, TwoStageModel):
        if model.base is None:
            raise ValueError("two-stage components must be fitted before fair training")
        return train_final_stage(
            model, portfolio, cfg.seed, penalty=penalty, lam=lam,
            classes=classes, epochs=cfg.epochs, batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
        )
    if isinstance(model, AutoencoderModel):
        return train_autoencoder_stage(
            model, portfolio, cfg.seed, penalty=penalty, lam=lam,
            classes=classes, epochs=cfg.epochs, batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
        )
    raise TypeError(f"unsupported model type {type(model).__name__}")


def train_dp(model, portfolio: Portfolio, cfg: FairTrainConfig) -> TrainingTrace:
    """Demographic-parity training: task loss + lam * dependence penalty.

    For a TwoStageModel the pre-fitted risk components are frozen and only the
    final predictor is (re)trained; for an AutoencoderModel the whole stack
    trains jointly. With ``lam == 0`` the penalty gradient never touches the
    model, so results match a penalty-free run with the same seed bit for bit.
    """
    if cfg.objective != "dp":
        raise ValueError("train_dp requires a dp objective config")
    penalty = _build_dp_penalty(cfg, portfolio.s)
    return _run_stage(model, portfolio, cfg, penalty, cfg.lam, classes=None)


def train_eo(model, portfolio: Portfolio, cfg: FairTrainConfig) -> TrainingTrace:
    """Equalized-odds training: per-class dependence penalties.

    Outcome classes come from the raw labels (binary task) or from capping
    claim counts at ``cfg.count_cap``. Batches are stratified so every class
    is present; a class that still misses a batch is skipped there and
    counted in the trace. Per-class weights default to ``cfg.lam``.
    """
    if cfg.objective != "eo":
        raise ValueError("train_eo requires an eo objective config")
    task = model.task
    if task.task == "severity":
        raise ValueError("equalized odds needs discrete outcome classes")
    if task.task == "frequency":
        classes, _ = group_counts(portfolio.y.astype(int), cap=cfg.count_cap)
    else:
        classes = portfolio.y.astype(int)
    class_values = sorted(np.unique(classes).tolist())
    lambdas = {cls: cfg.lam for cls in class_values}
    if cfg.lambdas_by_class:
        unknown = set(cfg.lambdas_by_class) - set(class_values)
        if unknown:
            raise ValueError(f"lambdas for absent classes: {sorted(unknown)}")
        lambdas.update(cfg.lambdas_by_class)

    adv_rng = Rng(cfg.seed).child(2)
    if cfg.penalty == "hgr":
        penalty = EoHgrPenalty(
            class_values, lambdas, portfolio.s.shape[1], cfg.adversary_steps,
            cfg.adversary_lr, cfg.adversary_hidden, adv_rng,
        )
        lam = 1.0  # per-class weights live inside the penalty
    elif cfg.penalty == "simple":
        if portfolio.s.shape[1] > 1:
            raise ValueError("the simple adversary expects a single sensitive column")
        penalty = EoSimplePenalty(
            1, _is_binary(portfolio.s[:, 0]), cfg.adversary_steps,
            cfg.adversary_lr, cfg.adversary_hidden, adv_rng.child(0),
        )
        lam = cfg.lam
    elif cfg.penalty == "none":
        penalty = NoPenalty()
        lam = 0.0
    else:
        raise ValueError("equalized odds supports the 'simple' and 'hgr' penalties")
    return _run_stage(model, portfolio, cfg, penalty, lam, classes=classes)


def gradient_reversal_penalty(pred_scores, s, adversary: Mlp):
    """Penalty and its prediction gradient through a frozen adversary.

    The penalty is the negated reconstruction loss of the adversary
    predicting s from the scores; its gradient with respect to the scores is
    what a predictor descends to fool the adversary.
    """
    pred = np.asarray(pred_scores, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    out, cache = adversary.forward(pred[:, None])
    if adversary.output_activation == "sigmoid":
        p = np.clip(out.ravel(), 1e-12, 1.0 - 1e-12)
        loss = float(-np.mean(s * np.log(p) + (1.0 - s) * np.log(1.0 - p)))
        dgrad = ((p - s) / (p * (1.0 - p)) / s.size)[:, None]
    else:
        diff = out.ravel() - s
        loss = float(np.mean(diff * diff))
        dgrad = (2.0 * diff / s.size)[:, None]
    grads = adversary.backward(cache, dgrad)
    return -loss, -grads.input.ravel()

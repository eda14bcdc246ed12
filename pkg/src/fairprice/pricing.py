"""The two pricing architectures.

Two-stage (traditional): a base model on policy features, residual models
turning geographic and car features into risk components (geo smoothed by
k-nearest neighbors, both discretized into equal-frequency levels), and a
final predictor on policy features plus the two components.

Autoencoder: car and geographic encoders trained jointly with the predictor
as one differentiable model, so the components can be reshaped during
training instead of being frozen artifacts of a residual fit.

Neither architecture ever receives the sensitive attribute: models consume
the feature blocks only, and the portfolio container enforces by name that
sensitive columns cannot hide inside them.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .data import Portfolio
from .mlp import Mlp, Optimizer, apply_update, mlp_from_dict, mlp_to_dict
from .models import Glm, glm_fit, TaskSpec
from .numkit import Rng
from .training import (
    AutoencoderStack,
    NoPenalty,
    PredictorStack,
    Scaler,
    TrainingTrace,
    run_training,
    task_loss_and_grad,
)

__all__ = [
    "PricingConfig",
    "TwoStageModel",
    "AutoencoderModel",
    "fit_two_stage",
    "fit_autoencoder",
    "predict",
    "extract_components",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
]

MODEL_FORMAT = "fairprice-pricing-model"
MODEL_VERSION = 1


@dataclass
class PricingConfig:
    """Architecture and training budget shared by both pricing models."""

    knn_k: int = 30
    quantile_bins: int = 10
    residual_kind: str = "additive"  # or "ratio" (relative difference)
    latent_dim_car: int = 1
    latent_dim_geo: int = 1
    encoder_hidden: tuple = (8,)
    predictor_hidden: tuple = (32, 32)
    residual_hidden: tuple = (16,)
    residual_epochs: int = 40
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 1e-3
    geo_coord_names: list = None  # default: every geographic column
    smooth_autoencoder_geo: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.residual_kind not in ("additive", "ratio"):
            raise ValueError("residual_kind must be 'additive' or 'ratio'")


class KnnSmoother:
    """Average of the k nearest training values in coordinate space.

    The query point itself is a training point for fitted data, so with k=1
    smoothing is the identity on training rows with unique coordinates.
    """

    def __init__(self, coords, values, k):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if k > coords.shape[0]:
            raise ValueError(f"k={k} exceeds the {coords.shape[0]} training points")
        self.coords = coords
        self.values = np.asarray(values, dtype=float)
        self.k = k
        self._tree = cKDTree(coords)

    def smooth(self, query):
        query = np.asarray(query, dtype=float)
        if query.ndim == 1:
            query = query[:, None]
        _, idx = self._tree.query(query, k=self.k)
        if self.k == 1:
            idx = idx[:, None]
        return self.values[idx].mean(axis=1)

    def to_dict(self):
        return {
            "coords": self.coords.tolist(),
            "values": self.values.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(np.array(doc["coords"]), np.array(doc["values"]), doc["k"])


class QuantileBinner:
    """Equal-frequency levels; each level carries the mean of its bin."""

    def __init__(self, values, bins):
        values = np.asarray(values, dtype=float)
        n = values.size
        if bins > n:
            raise ValueError("more bins than observations")
        order = np.argsort(values, kind="stable")
        bin_of = np.empty(n, dtype=int)
        bin_of[order] = (np.arange(n) * bins) // n
        self.bins = bins
        self.levels = np.array([values[bin_of == b].mean() for b in range(bins)])
        # upper boundary of each bin except the last
        sorted_values = values[order]
        edges = [(b * n) // bins for b in range(1, bins)]
        self.boundaries = sorted_values[np.array(edges, dtype=int)]
        self._train_bins = bin_of

    def transform(self, values):
        idx = np.searchsorted(self.boundaries, np.asarray(values, dtype=float), side="right")
        return self.levels[idx]

    def to_dict(self):
        return {
            "bins": self.bins,
            "levels": self.levels.tolist(),
            "boundaries": self.boundaries.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        out = cls.__new__(cls)
        out.bins = doc["bins"]
        out.levels = np.array(doc["levels"], dtype=float)
        out.boundaries = np.array(doc["boundaries"], dtype=float)
        out._train_bins = None
        return out


class _MlpRegressor:
    """Small network fit on a squared-error objective (residual models)."""

    def __init__(self, net: Mlp, scaler: Scaler):
        self.net = net
        self.scaler = scaler

    @classmethod
    def fit(cls, x, target, hidden, epochs, batch_size, learning_rate, rng: Rng):
        scaler = Scaler(x)
        xs = scaler.apply(x)
        net = Mlp([xs.shape[1], *hidden, 1]).init_xavier(rng.child(0))
        opt = Optimizer("adam", learning_rate)
        batch_rng = rng.child(1)
        n = target.size
        for epoch in range(epochs):
            order = batch_rng.child(epoch).permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                out, cache = net.forward(xs[idx])
                _, grad = task_loss_and_grad("severity", out.ravel(), target[idx])
                apply_update(net, net.backward(cache, grad[:, None]), opt, "descent")
        return cls(net, scaler)

    def predict(self, x):
        out, _ = self.net.forward(self.scaler.apply(x))
        return out.ravel()

    def to_dict(self):
        return {"net": mlp_to_dict(self.net), "scaler": self.scaler.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(mlp_from_dict(doc["net"]), Scaler.from_dict(doc["scaler"]))


@dataclass
class TwoStageModel:
    """Base model, residual risk components, and the final predictor."""

    task: TaskSpec
    cfg: PricingConfig
    base: Glm = None
    geo_residual: _MlpRegressor = None
    car_residual: _MlpRegressor = None
    geo_smoother: KnnSmoother = None
    car_binner: QuantileBinner = None
    geo_binner: QuantileBinner = None
    geo_coord_idx: list = None
    final_stack: PredictorStack = None
    fitted: bool = False

    kind = "two_stage"

    def components(self, pf: Portfolio):
        """Binned car and geo components for a portfolio slice."""
        geo_raw = self.geo_residual.predict(pf.x_g)
        coords = pf.x_g[:, self.geo_coord_idx]
        geo_smoothed = self.geo_smoother.smooth(coords)
        car_raw = self.car_residual.predict(pf.x_c)
        return self.car_binner.transform(car_raw), self.geo_binner.transform(geo_smoothed)

    def design(self, pf: Portfolio):
        car, geo = self.components(pf)
        return np.column_stack([pf.x_p, car, geo])

    def predict(self, pf: Portfolio):
        if not self.fitted:
            raise ValueError("predict before fit")
        rates = self.final_stack.predict_design(self.design(pf))
        if self.task.task == "frequency" and pf.exposure is not None and self.task.exposure_used:
            return rates * pf.exposure
        return rates


@dataclass
class AutoencoderModel:
    """Car/geo encoders and predictor, one differentiable stack."""

    task: TaskSpec
    cfg: PricingConfig
    stack: AutoencoderStack = None
    geo_smoother: KnnSmoother = None  # optional post-hoc pass on the latent
    fitted: bool = False

    kind = "autoencoder"

    def predict(self, pf: Portfolio):
        if not self.fitted:
            raise ValueError("predict before fit")
        rates = self.stack.predict_blocks(pf.x_p, pf.x_g, pf.x_c)
        if self.task.task == "frequency" and pf.exposure is not None and self.task.exposure_used:
            return rates * pf.exposure
        return rates

    def components(self, pf: Portfolio):
        car, geo = self.stack.components(pf.x_g, pf.x_c)
        if geo is not None and self.geo_smoother is not None:
            geo = self.geo_smoother.smooth(pf.x_g)[:, None]
        return car, geo


def _residual_target(task: TaskSpec, y, base_pred, kind):
    if kind == "additive":
        return y - base_pred
    # relative difference, guarded against vanishing base rates
    return y / np.maximum(base_pred, 1e-6) - 1.0


def fit_two_stage(portfolio: Portfolio, task: TaskSpec, cfg: PricingConfig = None):
    """Fit the full two-stage pipeline on a training portfolio.

    Stages: base GLM on policy features; residual models on geographic and
    car blocks; k-NN smoothing of the geographic predictions over the
    configured coordinate columns; equal-frequency binning of both components;
    final predictor (gradient-trained) on policy features plus components.
    """
    cfg = cfg or PricingConfig()
    _check_blocks(portfolio)
    rng = Rng(cfg.seed)

    offset = None
    if task.task == "frequency" and task.exposure_used and portfolio.exposure is not None:
        offset = np.log(np.maximum(portfolio.exposure, 1e-12))
    base = glm_fit(portfolio.x_p, portfolio.y, task.family, offset=offset)
    base_pred = base.predict(portfolio.x_p, offset=offset)
    residual = _residual_target(task, portfolio.y, base_pred, cfg.residual_kind)

    geo_residual = _MlpRegressor.fit(
        portfolio.x_g, residual, cfg.residual_hidden, cfg.residual_epochs,
        cfg.batch_size, cfg.learning_rate, rng.child(10),
    )
    car_residual = _MlpRegressor.fit(
        portfolio.x_c, residual, cfg.residual_hidden, cfg.residual_epochs,
        cfg.batch_size, cfg.learning_rate, rng.child(11),
    )

    coord_names = cfg.geo_coord_names or list(portfolio.names_g)
    missing = [c for c in coord_names if c not in portfolio.names_g]
    if missing:
        raise ValueError(f"geo coordinate columns not in the geo block: {missing}")
    coord_idx = [portfolio.names_g.index(c) for c in coord_names]

    geo_raw = geo_residual.predict(portfolio.x_g)
    smoother = KnnSmoother(portfolio.x_g[:, coord_idx], geo_raw, min(cfg.knn_k, portfolio.n))
    geo_smoothed = smoother.smooth(portfolio.x_g[:, coord_idx])
    car_raw = car_residual.predict(portfolio.x_c)

    model = TwoStageModel(
        task=task,
        cfg=cfg,
        base=base,
        geo_residual=geo_residual,
        car_residual=car_residual,
        geo_smoother=smoother,
        car_binner=QuantileBinner(car_raw, cfg.quantile_bins),
        geo_binner=QuantileBinner(geo_smoothed, cfg.quantile_bins),
        geo_coord_idx=coord_idx,
    )

    train_final_stage(model, portfolio, cfg.seed)
    return model


def train_final_stage(model: TwoStageModel, portfolio: Portfolio, seed,
                      penalty=None, lam=0.0, s=None, classes=None,
                      epochs=None, batch_size=None, learning_rate=None):
    """(Re)train the final predictor over frozen components.

    This is the stage fair training re-enters with an adversarial penalty;
    everything upstream (base, residuals, smoother, binners) stays untouched.
    """
    cfg = model.cfg
    rng = Rng(seed)
    design = model.design(portfolio)
    model.final_stack = PredictorStack(
        design, model.task.task, cfg.predictor_hidden,
        learning_rate or cfg.learning_rate, rng.child(0),
    )
    exposure = portfolio.exposure if (model.task.exposure_used and model.task.task == "frequency") else None
    trace = run_training(
        model.final_stack,
        portfolio.y,
        s if s is not None else portfolio.s,
        classes,
        exposure,
        model.task.task,
        penalty or NoPenalty(),
        lam,
        epochs or cfg.epochs,
        batch_size or cfg.batch_size,
        rng.child(1),
        learning_rate or cfg.learning_rate,
    )
    model.fitted = True
    return trace


def build_autoencoder(portfolio: Portfolio, task: TaskSpec, cfg: PricingConfig, seed):
    """Construct the (untrained) joint stack with seeded initialization."""
    rng = Rng(seed)
    stack = AutoencoderStack(
        portfolio.x_p, portfolio.x_g, portfolio.x_c, task.task,
        cfg.latent_dim_geo, cfg.latent_dim_car,
        cfg.encoder_hidden, cfg.predictor_hidden, cfg.learning_rate, rng.child(0),
    )
    return AutoencoderModel(task=task, cfg=cfg, stack=stack)


def train_autoencoder_stage(model: AutoencoderModel, portfolio: Portfolio, seed,
                            penalty=None, lam=0.0, s=None, classes=None,
                            epochs=None, batch_size=None, learning_rate=None):
    cfg = model.cfg
    rng = Rng(seed)
    exposure = portfolio.exposure if (model.task.exposure_used and model.task.task == "frequency") else None
    trace = run_training(
        model.stack,
        portfolio.y,
        s if s is not None else portfolio.s,
        classes,
        exposure,
        model.task.task,
        penalty or NoPenalty(),
        lam,
        epochs or cfg.epochs,
        batch_size or cfg.batch_size,
        rng.child(1),
        learning_rate or cfg.learning_rate,
    )
    if cfg.smooth_autoencoder_geo and model.stack.geo_net is not None:
        geo = model.stack.components(portfolio.x_g, portfolio.x_c)[1].ravel()
        model.geo_smoother = KnnSmoother(portfolio.x_g, geo, min(cfg.knn_k, portfolio.n))
    model.fitted = True
    return trace


def fit_autoencoder(portfolio: Portfolio, task: TaskSpec, cfg: PricingConfig = None):
    """Joint training of encoders and predictor on the task loss alone."""
    cfg = cfg or PricingConfig()
    _check_blocks(portfolio)
    model = build_autoencoder(portfolio, task, cfg, cfg.seed)
    trace = train_autoencoder_stage(model, portfolio, cfg.seed)
    model.training_trace = trace
    return model


def _check_blocks(portfolio: Portfolio):
    for name, block in (("policy", portfolio.x_p), ("geo", portfolio.x_g), ("car", portfolio.x_c)):
        if block.shape[1] == 0:
            raise ValueError(f"the {name} feature block is empty")


def predict(model, portfolio: Portfolio):
    """Deterministic scores: probabilities (binary), expected counts
    (frequency, exposure-scaled when used), values (severity)."""
    return model.predict(portfolio)


def extract_components(model, portfolio: Portfolio):
    """The (car, geo) risk components feeding the final predictor."""
    car, geo = model.components(portfolio)
    car = None if car is None else np.asarray(car)
    geo = None if geo is None else np.asarray(geo)
    return car, geo


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _glm_to_dict(glm: Glm):
    return {
        "family": glm.family,
        "coefficients": glm.coefficients.tolist(),
        "separation_warning": glm.separation_warning,
    }


def _glm_from_dict(doc):
    glm = Glm(doc["family"])
    glm.coefficients = np.array(doc["coefficients"], dtype=float)
    glm.fitted = True
    glm.separation_warning = doc.get("separation_warning", False)
    return glm


def _predictor_stack_to_dict(stack: PredictorStack):
    return {"net": mlp_to_dict(stack.net), "scaler": stack.scaler.to_dict()}


def _predictor_stack_from_dict(doc):
    stack = PredictorStack.__new__(PredictorStack)
    stack.net = mlp_from_dict(doc["net"])
    stack.scaler = Scaler.from_dict(doc["scaler"])
    stack.opt = Optimizer("adam", 1e-3)
    stack.design = None
    stack._cache = None
    return stack


def _ae_stack_to_dict(stack: AutoencoderStack):
    return {
        "scaler_p": stack.scaler_p.to_dict(),
        "scaler_g": stack.scaler_g.to_dict(),
        "scaler_c": stack.scaler_c.to_dict(),
        "latent_geo": stack.latent_geo,
        "latent_car": stack.latent_car,
        "geo_net": None if stack.geo_net is None else mlp_to_dict(stack.geo_net),
        "car_net": None if stack.car_net is None else mlp_to_dict(stack.car_net),
        "net": mlp_to_dict(stack.net),
    }


def _ae_stack_from_dict(doc):
    stack = AutoencoderStack.__new__(AutoencoderStack)
    stack.scaler_p = Scaler.from_dict(doc["scaler_p"])
    stack.scaler_g = Scaler.from_dict(doc["scaler_g"])
    stack.scaler_c = Scaler.from_dict(doc["scaler_c"])
    stack.latent_geo = doc["latent_geo"]
    stack.latent_car = doc["latent_car"]
    stack.geo_net = None if doc["geo_net"] is None else mlp_from_dict(doc["geo_net"])
    stack.car_net = None if doc["car_net"] is None else mlp_from_dict(doc["car_net"])
    stack.net = mlp_from_dict(doc["net"])
    stack.opt = Optimizer("adam", 1e-3)
    stack.geo_opt = Optimizer("adam", 1e-3)
    stack.car_opt = Optimizer("adam", 1e-3)
    stack.x_p = stack.x_g = stack.x_c = None
    stack._caches = None
    return stack


def model_to_dict(model):
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "task": model.task.task,
        "exposure_used": model.task.exposure_used,
    }
    if model.kind == "two_stage":
        doc.update(
            {
                "base": _glm_to_dict(model.base),
                "geo_residual": model.geo_residual.to_dict(),
                "car_residual": model.car_residual.to_dict(),
                "geo_smoother": model.geo_smoother.to_dict(),
                "car_binner": model.car_binner.to_dict(),
                "geo_binner": model.geo_binner.to_dict(),
                "geo_coord_idx": list(model.geo_coord_idx),
                "final": _predictor_stack_to_dict(model.final_stack),
            }
        )
    else:
        doc["stack"] = _ae_stack_to_dict(model.stack)
        doc["geo_smoother"] = None if model.geo_smoother is None else model.geo_smoother.to_dict()
    return doc


def model_from_dict(doc):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a pricing model document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    task = TaskSpec(doc["task"], doc.get("exposure_used", False))
    if doc["kind"] == "two_stage":
        model = TwoStageModel(task=task, cfg=PricingConfig())
        model.base = _glm_from_dict(doc["base"])
        model.geo_residual = _MlpRegressor.from_dict(doc["geo_residual"])
        model.car_residual = _MlpRegressor.from_dict(doc["car_residual"])
        model.geo_smoother = KnnSmoother.from_dict(doc["geo_smoother"])
        model.car_binner = QuantileBinner.from_dict(doc["car_binner"])
        model.geo_binner = QuantileBinner.from_dict(doc["geo_binner"])
        model.geo_coord_idx = list(doc["geo_coord_idx"])
        model.final_stack = _predictor_stack_from_dict(doc["final"])
        model.fitted = True
        return model
    model = AutoencoderModel(task=task, cfg=PricingConfig())
    model.stack = _ae_stack_from_dict(doc["stack"])
    model.geo_smoother = (
        None if doc.get("geo_smoother") is None else KnnSmoother.from_dict(doc["geo_smoother"])
    )
    model.fitted = True
    return model


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))

"""Gradient-training machinery shared by the pricing architectures.

A *stack* bundles the networks that produce predictions from feature blocks
(a bare predictor over a fixed design, or encoders plus predictor trained
jointly). The training loop alternates, per batch, adversary ascent steps
with one descent step of the stack on task loss plus a weighted dependence
penalty. Penalty gradients always enter through the prediction vector, so a
single backward pass through the stack handles every penalty kind.

Seed discipline: the run seed spawns independent child streams for stack
initialization (0), batch order (1), and adversaries (2). A run with the
penalty disabled therefore consumes exactly the same model/batch streams as
one with it enabled, which is what makes the zero-weight equivalence checks
bit-exact.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dependence import HgrAdversaryPair
from .mlp import Mlp, Optimizer, apply_update
from .numkit import Rng

ADVERSARY_COLLAPSE_PATIENCE = 20


# ---------------------------------------------------------------------------
# task losses (mean over the batch), expressed on the model output
# ---------------------------------------------------------------------------


def output_activation_for(task):
    return {"binary": "sigmoid", "frequency": "exp", "severity": "identity"}[task]


def task_loss_and_grad(task, out, y, exposure=None):
    """Mean loss and its gradient with respect to the model output.

    Binary outputs are probabilities, frequency outputs are rates per unit
    exposure, severity outputs are plain values.
    """
    n = y.size
    if task == "binary":
        p = np.clip(out, 1e-12, 1.0 - 1e-12)
        value = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
        grad = (p - y) / (p * (1.0 - p)) / n
        return value, grad
    if task == "frequency":
        e = np.ones(n) if exposure is None else exposure
        mu = np.maximum(e * out, 1e-12)
        y_log_y = np.where(y > 0, y * np.log(np.maximum(y, 1e-12)), 0.0)
        value = float(np.mean(2.0 * (y_log_y - y * np.log(mu) - y + mu)))
        grad = 2.0 * (1.0 - y / mu) * e / n
        return value, grad
    if task == "severity":
        diff = out - y
        return float(np.mean(diff * diff)), 2.0 * diff / n
    raise ValueError(f"unknown task {task!r}")


class Scaler:
    """Column standardization fit on training data, reused at predict time."""

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        self.means = x.mean(axis=0) if x.size else np.zeros(x.shape[1])
        stds = x.std(axis=0) if x.size else np.ones(x.shape[1])
        self.stds = np.where(stds < 1e-12, 1.0, stds)

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.means) / self.stds

    def to_dict(self):
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, doc):
        out = cls.__new__(cls)
        out.means = np.array(doc["means"], dtype=float)
        out.stds = np.array(doc["stds"], dtype=float)
        return out


# ---------------------------------------------------------------------------
# trainable stacks
# ---------------------------------------------------------------------------


class PredictorStack:
    """A single network over a fixed, already-assembled design matrix."""

    def __init__(self, design_train, task, hidden, learning_rate, rng: Rng):
        self.scaler = Scaler(design_train)
        self.design = self.scaler.apply(design_train)
        dims = [self.design.shape[1], *hidden, 1]
        self.net = Mlp(dims, output_activation=output_activation_for(task)).init_xavier(rng)
        self.opt = Optimizer("adam", learning_rate)
        self._cache = None

    @property
    def nets(self):
        return [self.net]

    def forward_rows(self, idx):
        out, cache = self.net.forward(self.design[idx])
        self._cache = cache
        return out.ravel()

    def apply_output_grad(self, dout):
        grads = self.net.backward(self._cache, dout[:, None])
        apply_update(self.net, grads, self.opt, "descent")

    def predict_design(self, design):
        out, _ = self.net.forward(self.scaler.apply(design))
        return out.ravel()


class AutoencoderStack:
    """Car and geographic encoders trained jointly with the predictor.

    Either encoder may have latent dimension 0, in which case its block is
    dropped and the predictor sees policy features only (plus the other
    component).
    """

    def __init__(self, x_p, x_g, x_c, task, latent_geo, latent_car,
                 encoder_hidden, predictor_hidden, learning_rate, rng: Rng):
        self.scaler_p = Scaler(x_p)
        self.scaler_g = Scaler(x_g)
        self.scaler_c = Scaler(x_c)
        self.x_p = self.scaler_p.apply(x_p)
        self.x_g = self.scaler_g.apply(x_g)
        self.x_c = self.scaler_c.apply(x_c)
        self.latent_geo = latent_geo
        self.latent_car = latent_car
        self.geo_net = None
        self.car_net = None
        if latent_geo > 0:
            self.geo_net = Mlp([self.x_g.shape[1], *encoder_hidden, latent_geo]).init_xavier(rng.child(0))
        if latent_car > 0:
            self.car_net = Mlp([self.x_c.shape[1], *encoder_hidden, latent_car]).init_xavier(rng.child(1))
        pred_in = self.x_p.shape[1] + latent_geo + latent_car
        self.net = Mlp(
            [pred_in, *predictor_hidden, 1], output_activation=output_activation_for(task)
        ).init_xavier(rng.child(2))
        self.opt = Optimizer("adam", learning_rate)
        self.geo_opt = Optimizer("adam", learning_rate)
        self.car_opt = Optimizer("adam", learning_rate)
        self._caches = None

    @property
    def nets(self):
        return [net for net in (self.geo_net, self.car_net, self.net) if net is not None]

    def _encode(self, xg, xc):
        parts = []
        cache_g = cache_c = None
        if self.geo_net is not None:
            g, cache_g = self.geo_net.forward(xg)
            parts.append(g)
        if self.car_net is not None:
            c, cache_c = self.car_net.forward(xc)
            parts.append(c)
        return parts, cache_g, cache_c

    def forward_rows(self, idx):
        parts, cache_g, cache_c = self._encode(self.x_g[idx], self.x_c[idx])
        design = np.hstack([self.x_p[idx], *parts]) if parts else self.x_p[idx]
        out, cache_h = self.net.forward(design)
        self._caches = (cache_g, cache_c, cache_h)
        return out.ravel()

    def apply_output_grad(self, dout):
        cache_g, cache_c, cache_h = self._caches
        grads_h = self.net.backward(cache_h, dout[:, None])
        d_design = grads_h.input
        pos = self.x_p.shape[1]
        if self.geo_net is not None:
            d_geo = d_design[:, pos : pos + self.latent_geo]
            grads_g = self.geo_net.backward(cache_g, d_geo)
            pos += self.latent_geo
        if self.car_net is not None:
            d_car = d_design[:, pos : pos + self.latent_car]
            grads_c = self.car_net.backward(cache_c, d_car)
        apply_update(self.net, grads_h, self.opt, "descent")
        if self.geo_net is not None:
            apply_update(self.geo_net, grads_g, self.geo_opt, "descent")
        if self.car_net is not None:
            apply_update(self.car_net, grads_c, self.car_opt, "descent")

    def predict_blocks(self, x_p, x_g, x_c):
        parts, _, _ = self._encode(self.scaler_g.apply(x_g), self.scaler_c.apply(x_c))
        design = (
            np.hstack([self.scaler_p.apply(x_p), *parts]) if parts else self.scaler_p.apply(x_p)
        )
        out, _ = self.net.forward(design)
        return out.ravel()

    def components(self, x_g, x_c):
        parts, _, _ = self._encode(self.scaler_g.apply(x_g), self.scaler_c.apply(x_c))
        geo = parts[0] if self.geo_net is not None else None
        car = parts[-1] if self.car_net is not None else None
        return car, geo


# ---------------------------------------------------------------------------
# dependence penalties
# ---------------------------------------------------------------------------


class NoPenalty:
    active = False

    def adversary_update(self, pred, s, classes=None):
        return None

    def value_and_grad(self, pred, s, classes=None):
        return 0.0, np.zeros_like(pred), {}


class _CollapseCounter:
    def __init__(self, name):
        self.name = name
        self.streak = 0
        self.warned = False

    def update(self, collapsed):
        self.streak = self.streak + 1 if collapsed else 0
        if self.streak >= ADVERSARY_COLLAPSE_PATIENCE and not self.warned:
            warnings.warn(
                f"{self.name} adversary output collapsed for "
                f"{ADVERSARY_COLLAPSE_PATIENCE} consecutive batches; training continues",
                RuntimeWarning,
            )
            self.warned = True


class HgrPenalty:
    """Product-of-standardized-transforms penalty with its adversary pair."""

    active = True

    def __init__(self, s_dim, steps, adversary_lr, hidden, rng: Rng):
        self.pair = HgrAdversaryPair(1, s_dim, hidden=hidden, learning_rate=adversary_lr, rng=rng)
        self.steps = steps
        self.collapse = _CollapseCounter("dependence")

    def adversary_update(self, pred, s, classes=None):
        self.pair.ascend(pred[:, None], s, self.steps)

    def value_and_grad(self, pred, s, classes=None):
        j, dj_dpred, degenerate = self.pair.objective_and_input_grad(pred[:, None], s)
        self.collapse.update(degenerate)
        # penalize |J|: at the adversary's inner optimum J >= 0, but while it
        # lags the predictor a raw negative J would reward *more* dependence
        if j < 0:
            return -j, -dj_dpred.ravel(), {"hgr_estimate": -j}
        return j, dj_dpred.ravel(), {"hgr_estimate": j}


class SimplePenalty:
    """Reconstruction adversary: fool a network that predicts s from the
    prediction. Binary s uses a sigmoid head and log-loss; continuous or
    multi-column s falls back to a regression head (which does not by itself
    enforce distribution-level independence)."""

    active = True

    def __init__(self, s_dim, s_binary, steps, adversary_lr, hidden, rng: Rng, input_dim=1):
        head = "sigmoid" if s_binary else "identity"
        self.s_binary = s_binary
        self.net = Mlp([input_dim, *hidden, s_dim], output_activation=head).init_xavier(rng)
        self.opt = Optimizer("adam", adversary_lr)
        self.steps = steps
        self.collapse = _CollapseCounter("reconstruction")

    def _loss_and_grad(self, out, s):
        if self.s_binary:
            p = np.clip(out, 1e-12, 1.0 - 1e-12)
            value = float(-np.mean(s * np.log(p) + (1.0 - s) * np.log(1.0 - p)))
            grad = (p - s) / (p * (1.0 - p)) / s.shape[0]
        else:
            diff = out - s
            value = float(np.mean(diff * diff))
            grad = 2.0 * diff / s.size
        return value, grad

    def _features(self, pred):
        return pred[:, None]

    def adversary_update(self, pred, s, classes=None):
        x = self._features(pred)
        for _ in range(self.steps):
            out, cache = self.net.forward(x)
            _, dgrad = self._loss_and_grad(out, s)
            apply_update(self.net, self.net.backward(cache, dgrad), self.opt, "descent")

    def value_and_grad(self, pred, s, classes=None):
        x = self._features(pred)
        out, cache = self.net.forward(x)
        value, dgrad = self._loss_and_grad(out, s)
        grads = self.net.backward(cache, dgrad)
        self.collapse.update(bool(out.std() < 1e-12))
        # fooling the adversary: penalty is the negated reconstruction loss
        return -value, -grads.input[:, 0], {}


class CorrPenalty:
    """Absolute batch correlation between prediction and s (max over columns)."""

    active = True

    def adversary_update(self, pred, s, classes=None):
        return None

    def value_and_grad(self, pred, s, classes=None):
        n = pred.size
        p_std = pred.std()
        if p_std < 1e-12:
            return 0.0, np.zeros_like(pred), {}
        p_hat = (pred - pred.mean()) / p_std
        best = (0.0, np.zeros_like(pred))
        for d in range(s.shape[1]):
            col = s[:, d]
            c_std = col.std()
            if c_std < 1e-12:
                continue
            c_hat = (col - col.mean()) / c_std
            r = float((p_hat * c_hat).mean())
            if abs(r) >= abs(best[0]):
                grad = np.sign(r) * (c_hat - r * p_hat) / (n * p_std)
                best = (r, grad)
        return abs(best[0]), best[1], {"hgr_estimate": abs(best[0])}


class EoSimplePenalty(SimplePenalty):
    """Reconstruction adversary that sees the outcome next to the prediction,
    so it can model class-conditional dependence."""

    def __init__(self, s_dim, s_binary, steps, adversary_lr, hidden, rng: Rng):
        super().__init__(s_dim, s_binary, steps, adversary_lr, hidden, rng, input_dim=2)
        self._batch_classes = None

    def _features(self, pred):
        return np.column_stack([pred, self._batch_classes])

    def adversary_update(self, pred, s, classes=None):
        self._batch_classes = classes.astype(float)
        super().adversary_update(pred, s)

    def value_and_grad(self, pred, s, classes=None):
        self._batch_classes = classes.astype(float)
        return super().value_and_grad(pred, s)


class EoHgrPenalty:
    """One adversary pair per outcome class; each batch adds the per-class
    objectives weighted by lambda_y / (K + 1)."""

    active = True

    def __init__(self, class_values, lambdas_by_class, s_dim, steps, adversary_lr,
                 hidden, rng: Rng):
        self.class_values = list(class_values)
        self.lambdas = dict(lambdas_by_class)
        self.pairs = {
            cls: HgrAdversaryPair(1, s_dim, hidden=hidden, learning_rate=adversary_lr,
                                  rng=rng.child(i))
            for i, cls in enumerate(self.class_values)
        }
        self.steps = steps
        self.k_plus_one = len(self.class_values)
        self.skipped_batches = {cls: 0 for cls in self.class_values}

    def adversary_update(self, pred, s, classes=None):
        for cls, pair in self.pairs.items():
            mask = classes == cls
            if mask.sum() < 2:
                continue
            pair.ascend(pred[mask][:, None], s[mask], self.steps)

    def value_and_grad(self, pred, s, classes=None):
        total = 0.0
        grad = np.zeros_like(pred)
        estimates = []
        for cls, pair in self.pairs.items():
            mask = classes == cls
            if mask.sum() < 2:
                self.skipped_batches[cls] += 1
                continue
            j, dj, _ = pair.objective_and_input_grad(pred[mask][:, None], s[mask])
            if j < 0:  # same sign correction as the unconditional penalty
                j, dj = -j, -dj
            weight = self.lambdas[cls] / self.k_plus_one
            total += weight * j
            grad[mask] += weight * dj.ravel()
            estimates.append(j)
        diag = {"hgr_estimate": float(np.mean(estimates))} if estimates else {}
        return total, grad, diag


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingTrace:
    """Per-epoch record: task loss, penalty value, dependence estimate, lr."""

    rows: list = field(default_factory=list)
    adversary_skips: dict = field(default_factory=dict)

    def append(self, epoch, task_loss, penalty, hgr_estimate, lr):
        self.rows.append(
            {
                "epoch": epoch,
                "task_loss": task_loss,
                "penalty": penalty,
                "hgr_estimate": hgr_estimate,
                "lr": lr,
            }
        )

    def save_csv(self, path):
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "task_loss", "penalty", "hgr_estimate", "lr"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["epoch"],
                        repr(row["task_loss"]),
                        repr(row["penalty"]),
                        "" if row["hgr_estimate"] is None else repr(row["hgr_estimate"]),
                        repr(row["lr"]),
                    ]
                )


def build_batches(indices_by_class, n_total, batch_size, rng: Rng):
    """Class-stratified batches; with a single class this reduces to a plain
    shuffled split, so unstratified training is the one-class special case."""
    n_batches = max(1, int(np.ceil(n_total / batch_size)))
    per_class_chunks = []
    for indices in indices_by_class:
        perm = rng.permutation(len(indices))
        shuffled = np.asarray(indices)[perm]
        per_class_chunks.append(np.array_split(shuffled, n_batches))
    return [
        np.concatenate([chunks[b] for chunks in per_class_chunks])
        for b in range(n_batches)
    ]


def run_training(stack, y, s, classes, exposure, task, penalty, lam, epochs,
                 batch_size, rng_batches: Rng, learning_rate, trace: TrainingTrace = None):
    """Alternating adversarial training of a stack.

    Per batch: the penalty's adversary takes its ascent steps against the
    current predictions, then the stack takes one descent step on
    task loss + lam * penalty. ``lam == 0`` skips the penalty gradient
    entirely (the adversary still trains but cannot influence the stack).
    """
    n = y.size
    trace = trace if trace is not None else TrainingTrace()
    if classes is None:
        groups = [np.arange(n)]
    else:
        groups = [np.flatnonzero(classes == cls) for cls in np.unique(classes)]
    for epoch in range(epochs):
        epoch_rng = rng_batches.child(epoch)
        batches = build_batches(groups, n, batch_size, epoch_rng)
        losses = []
        penalties = []
        estimates = []
        for idx in batches:
            out = stack.forward_rows(idx)
            if not np.all(np.isfinite(out)):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            batch_classes = None if classes is None else classes[idx]
            if penalty.active:
                penalty.adversary_update(out, s[idx], batch_classes)
            loss, dout = task_loss_and_grad(
                task, out, y[idx], None if exposure is None else exposure[idx]
            )
            pen_value, pen_grad, diag = (0.0, None, {})
            if penalty.active:
                pen_value, pen_grad, diag = penalty.value_and_grad(out, s[idx], batch_classes)
                if lam != 0.0:
                    dout = dout + lam * pen_grad
            stack.apply_output_grad(dout)
            losses.append(loss)
            penalties.append(pen_value)
            if "hgr_estimate" in diag:
                estimates.append(diag["hgr_estimate"])
        trace.append(
            epoch,
            float(np.mean(losses)),
            float(np.mean(penalties)),
            float(np.mean(estimates)) if estimates else None,
            learning_rate,
        )
    if hasattr(penalty, "skipped_batches"):
        trace.adversary_skips = dict(penalty.skipped_batches)
    return trace

"""Small feed-forward networks with explicit reverse-mode gradients.

These networks serve as risk predictors, component encoders, and adversary
transforms inside min-max training loops, so the backward pass exposes both
parameter gradients and the gradient with respect to the input batch (needed
to chain encoder -> predictor -> adversary stacks by hand).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .numkit import Rng

__all__ = [
    "Mlp",
    "Gradients",
    "Optimizer",
    "apply_update",
    "gradient_check",
    "save_mlp",
    "load_mlp",
    "mlp_to_dict",
    "mlp_from_dict",
]

HIDDEN_ACTIVATIONS = ("tanh", "relu")
# exp heads are reserved for nonnegative-rate outputs (claim frequency)
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "exp")

_FORMAT = "fairprice-mlp"
_FORMAT_VERSION = 1


def _activate(kind, z):
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "exp":
        return np.exp(np.clip(z, -60.0, 60.0))
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind, a):
    # derivative expressed through the post-activation value; relu takes
    # subgradient 0 at the kink
    if kind == "identity":
        return np.ones_like(a)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (a > 0.0).astype(float)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "exp":
        return a
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Gradients:
    """Parameter gradients shaped like the owning Mlp, plus the gradient
    with respect to the forwarded input batch."""

    weights: list
    biases: list
    input: np.ndarray


class Mlp:
    """Fully-connected network with float64 parameters.

    ``layer_dims`` chains input dim through hidden widths to the output dim,
    e.g. ``[2, 16, 16, 1]``. Hidden layers share one activation; the output
    layer has its own head.
    """

    def __init__(self, layer_dims, hidden_activation="tanh", output_activation="identity"):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.weights = [
            np.zeros((self.layer_dims[i], self.layer_dims[i + 1]))
            for i in range(len(self.layer_dims) - 1)
        ]
        self.biases = [np.zeros(d) for d in self.layer_dims[1:]]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    def init_xavier(self, rng: Rng):
        """Xavier-uniform weights, zero biases."""
        for i, w in enumerate(self.weights):
            fan_in, fan_out = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights[i] = rng.uniform(-limit, limit, size=w.shape)
            self.biases[i] = np.zeros(fan_out)
        return self

    def copy(self):
        out = Mlp(self.layer_dims, self.hidden_activation, self.output_activation)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def _layer_activation(self, i):
        return self.output_activation if i == self.n_layers - 1 else self.hidden_activation

    def forward(self, x):
        """Row-wise outputs plus the activation cache needed by backward."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"input dim mismatch: got {x.shape[1]}, net expects {self.input_dim}")
        activations = [x]
        a = x
        for i in range(self.n_layers):
            z = a @ self.weights[i] + self.biases[i]
            a = _activate(self._layer_activation(i), z)
            activations.append(a)
        return a, activations

    def backward(self, cache, upstream_grad):
        """Exact reverse-mode gradient of the cached forward pass.

        ``upstream_grad`` is dLoss/dOutput with the output's shape; the
        returned :class:`Gradients` carries dLoss/dParams and dLoss/dInput.
        """
        if len(cache) != self.n_layers + 1:
            raise ValueError("cache does not match this network's depth")
        upstream = np.asarray(upstream_grad, dtype=float)
        if upstream.ndim == 1:
            upstream = upstream[:, None]
        out = cache[-1]
        if upstream.shape != out.shape:
            raise ValueError(f"upstream shape {upstream.shape} != output shape {out.shape}")
        g_w = [None] * self.n_layers
        g_b = [None] * self.n_layers
        delta = upstream * _activation_grad(self._layer_activation(self.n_layers - 1), out)
        for i in range(self.n_layers - 1, -1, -1):
            a_prev = cache[i]
            g_w[i] = a_prev.T @ delta
            g_b[i] = delta.sum(axis=0)
            da_prev = delta @ self.weights[i].T
            if i > 0:
                delta = da_prev * _activation_grad(self.hidden_activation, cache[i])
            else:
                input_grad = da_prev
        return Gradients(weights=g_w, biases=g_b, input=input_grad)


@dataclass
class Optimizer:
    """SGD or Adam update rule with owned moment state."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: dict = field(default_factory=dict, repr=False)
    _v: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def _moments(self, key, shape):
        if key not in self._m:
            self._m[key] = np.zeros(shape)
            self._v[key] = np.zeros(shape)
        return self._m[key], self._v[key]

    def step(self, key, param, grad, sign):
        if self.kind == "sgd":
            return param + sign * self.learning_rate * grad
        m, v = self._moments(key, param.shape)
        m[...] = self.beta1 * m + (1.0 - self.beta1) * grad
        v[...] = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        t = self.step_count  # incremented before the per-layer sweeps
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        return param + sign * self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def apply_update(net: Mlp, grads: Gradients, opt: Optimizer, direction="descent"):
    """Move parameters one optimizer step along +/- the gradient."""
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    sign = -1.0 if direction == "descent" else 1.0
    for i, g in enumerate(grads.weights):
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(grads.biases[i])):
            raise FloatingPointError(f"non-finite gradient in layer {i}")
    opt.step_count += 1
    for i in range(net.n_layers):
        net.weights[i] = opt.step(("w", i), net.weights[i], grads.weights[i], sign)
        net.biases[i] = opt.step(("b", i), net.biases[i], grads.biases[i], sign)


def _flatten_params(net):
    return np.concatenate([w.ravel() for w in net.weights] + [b.ravel() for b in net.biases])


def _write_params(net, flat):
    pos = 0
    for i, w in enumerate(net.weights):
        net.weights[i] = flat[pos : pos + w.size].reshape(w.shape)
        pos += w.size
    for i, b in enumerate(net.biases):
        net.biases[i] = flat[pos : pos + b.size].reshape(b.shape)
        pos += b.size


def gradient_check(net: Mlp, loss_fn, x, y, epsilon=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(outputs, y) -> (scalar_loss, grad_wrt_outputs)``.
    """
    if not (1e-8 < epsilon < 1e-3):
        raise ValueError("epsilon must lie in (1e-8, 1e-3)")
    out, cache = net.forward(x)
    _, upstream = loss_fn(out, y)
    grads = net.backward(cache, upstream)
    analytic = np.concatenate(
        [g.ravel() for g in grads.weights] + [g.ravel() for g in grads.biases]
    )
    base = _flatten_params(net)
    numeric = np.empty_like(base)
    for j in range(base.size):
        bumped = base.copy()
        bumped[j] = base[j] + epsilon
        _write_params(net, bumped)
        lo_plus = loss_fn(net.forward(x)[0], y)[0]
        bumped[j] = base[j] - epsilon
        _write_params(net, bumped)
        lo_minus = loss_fn(net.forward(x)[0], y)[0]
        numeric[j] = (lo_plus - lo_minus) / (2.0 * epsilon)
    _write_params(net, base)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def mlp_to_dict(net: Mlp):
    """Versioned JSON-shaped representation; floats survive bit-exact."""
    return {
        "format": _FORMAT,
        "version": _FORMAT_VERSION,
        "layer_dims": list(net.layer_dims),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "weights": [[row.tolist() for row in w] for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_dict(doc):
    if doc.get("format") != _FORMAT:
        raise ValueError(f"not a serialized network: format={doc.get('format')!r}")
    if doc.get("version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {doc.get('version')!r}")
    net = Mlp(doc["layer_dims"], doc["hidden_activation"], doc["output_activation"])
    net.weights = [np.array(w, dtype=float) for w in doc["weights"]]
    net.biases = [np.array(b, dtype=float) for b in doc["biases"]]
    for i, w in enumerate(net.weights):
        expected = (net.layer_dims[i], net.layer_dims[i + 1])
        if w.shape != expected:
            raise ValueError(f"layer {i} weight shape {w.shape} != {expected}")
    return net


def save_mlp(net, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mlp_to_dict(net), fh)


def load_mlp(path):
    with open(path, encoding="utf-8") as fh:
        return mlp_from_dict(json.load(fh))

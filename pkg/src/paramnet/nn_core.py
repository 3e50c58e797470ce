"""Dense feed-forward networks with exact backpropagation.

Everything is plain float64 numpy. A model's weights may carry an optional
leading "stack" axis so that many independent networks of the same shape can
be trained together; all routines below broadcast over it.

Shapes (unstacked):
    weights[i]: (d_{i+1}, d_i)
    biases[i]:  (d_{i+1},)
    batch:      (rows, d_0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

ACTIVATIONS = ("selu", "identity")

FORMAT_VERSION = 1


class ShapeError(ValueError):
    pass


def selu(x):
    """Scaled exponential linear unit; accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    # branch-free and in place; np.where on random-sign data is several times slower
    out = np.minimum(x, 0.0, out=np.empty_like(x))
    np.expm1(out, out=out)
    out *= SELU_LAMBDA * SELU_ALPHA
    pos = np.maximum(x, 0.0, out=np.empty_like(x))
    pos *= SELU_LAMBDA
    out += pos
    return float(out) if out.ndim == 0 else out


def selu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    g = _selu_grad_from(x, np.asarray(selu(x)))
    return float(g) if g.ndim == 0 else g


def _selu_grad_from(pre, act):
    # z <= 0: lam*alpha*e^z = act + lam*alpha; z > 0: lam. Branch-free on purpose,
    # masked writes on random-sign data are several times slower.
    g = np.minimum(act, 0.0, out=np.empty_like(act))
    g += SELU_LAMBDA * SELU_ALPHA
    step = np.greater(pre, 0.0).astype(np.float64)
    step *= SELU_LAMBDA * SELU_ALPHA - SELU_LAMBDA
    g -= step
    return g


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "selu"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ShapeError("need at least one layer")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ShapeError("weights/biases do not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape[-2:] != want or b.shape[-1] != want[0]:
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {want}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def stack(self) -> int | None:
        """Size of the leading stack axis, or None for a single network."""
        w = self.weights[0]
        return w.shape[0] if w.ndim == 3 else None

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MlpModel:
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
        )

    def member(self, k: int) -> MlpModel:
        """Extract network ``k`` from a stacked model."""
        if self.stack is None:
            raise ValueError("model is not stacked")
        return MlpModel(
            list(self.layer_dims),
            [w[k].copy() for w in self.weights],
            [b[k].copy() for b in self.biases],
            self.hidden_activation,
        )

    def to_dict(self) -> dict:
        if self.stack is not None:
            raise ValueError("stacked models are not serializable")
        return {
            "format_version": FORMAT_VERSION,
            "kind": "mlp",
            "layer_dims": list(self.layer_dims),
            "hidden_activation": self.hidden_activation,
            "output_activation": "identity",
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> MlpModel:
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
        dims = [int(d) for d in doc["layer_dims"]]
        weights = [
            np.asarray(w, dtype=np.float64).reshape(dims[i + 1], dims[i])
            for i, w in enumerate(doc["weights"])
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        return cls(dims, weights, biases, doc["hidden_activation"])


def init_mlp(layer_dims, rng: np.random.Generator, activation="selu", stack=None) -> MlpModel:
    """Normal(0, 1/fan_in) weights, zero biases."""
    lead = () if stack is None else (stack,)
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=lead + (d_out, d_in)))
        biases.append(np.zeros(lead + (d_out,)))
    return MlpModel(list(layer_dims), weights, biases, activation)


def zeros_mlp(layer_dims, activation="selu") -> MlpModel:
    return MlpModel(
        list(layer_dims),
        [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
        [np.zeros(o) for o in layer_dims[1:]],
        activation,
    )


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # activation entering layer i
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of layer i


def _t(a):
    return np.swapaxes(a, -1, -2)


def forward(model: MlpModel, batch) -> tuple[np.ndarray, ForwardCache]:
    a = np.asarray(batch, dtype=np.float64)
    if a.shape[-1] != model.layer_dims[0]:
        raise ShapeError(f"layer 0: input has {a.shape[-1]} columns, expected {model.layer_dims[0]}")
    cache = ForwardCache()
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        cache.inputs.append(a)
        z = a @ _t(w) + b[..., None, :]
        cache.pre.append(z)
        if i < last and model.hidden_activation == "selu":
            a = selu(z)
        else:
            a = z
    return a, cache


def backward(model: MlpModel, cache: ForwardCache, output_grad):
    """Gradients of a scalar loss w.r.t. weights, biases and batch inputs.

    ``output_grad`` is dLoss/dOutput with the shape of the forward output.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {cache.pre[-1].shape}")
    n = model.n_layers
    wg = [None] * n
    bg = [None] * n
    for i in range(n - 1, -1, -1):
        if i < n - 1 and model.hidden_activation == "selu":
            g = g * _selu_grad_from(cache.pre[i], cache.inputs[i + 1])
        wg[i] = _t(g) @ cache.inputs[i]
        bg[i] = g.sum(axis=-2)
        g = g @ model.weights[i]
    return wg, bg, g


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean over all entries of the squared difference, and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def stacked_mse_loss(pred, target):
    """Per-member MSE for stacked (k, rows, cols) arrays; gradient of their sum."""
    diff = pred - target
    per = diff[0].size
    return np.mean(diff * diff, axis=(-2, -1)), 2.0 * diff / per


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, values, **kw) -> AdamState:
        return cls([np.zeros_like(v) for v in values], [np.zeros_like(v) for v in values], **kw)


def adam_step(values, grads, state: AdamState, rate: float):
    """In-place Adam update of every array in ``values``; returns ``values``."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for v, g, m, s in zip(values, grads, state.first_moment, state.second_moment):
        if v.shape != g.shape:
            raise ShapeError(f"value {v.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        s *= b2
        s += (1.0 - b2) * g * g
        v -= rate * (m / c1) / (np.sqrt(s / c2) + state.epsilon)
    return values


@dataclass
class RowAdamState:
    """Adam state for a table whose rows are updated only when they get gradient."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    row_steps: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, table: np.ndarray) -> RowAdamState:
        return cls(np.zeros_like(table), np.zeros_like(table), np.zeros(table.shape[0], dtype=np.int64))


def adam_step_rows(table, grad, rows, state: RowAdamState, rate: float):
    """Adam update restricted to ``rows`` (unique indices); other rows and their moments stay put."""
    if len(rows) == 0 or table.shape[1] == 0:
        return table
    state.row_steps[rows] += 1
    t = state.row_steps[rows][:, None]
    b1, b2 = state.beta1, state.beta2
    g = grad[rows]
    m = state.first_moment[rows] * b1 + (1.0 - b1) * g
    s = state.second_moment[rows] * b2 + (1.0 - b2) * g * g
    state.first_moment[rows] = m
    state.second_moment[rows] = s
    table[rows] -= rate * (m / (1.0 - b1**t)) / (np.sqrt(s / (1.0 - b2**t)) + state.epsilon)
    return table


@dataclass(frozen=True)
class LrSchedule:
    initial_rate: float = 0.01
    decay_factor: float = 0.995
    decay_every: int = 10

    def __post_init__(self):
        if not self.initial_rate > 0:
            raise ValueError("initial_rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")

    def rate(self, epoch: int) -> float:
        return self.initial_rate * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _rel_err(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(model: MlpModel, batch, target, h=1e-6, tol=1e-5, backward_fn=None) -> GradCheckReport:
    """Central differences of the MSE loss versus ``backward`` over every weight, bias and input."""
    if h <= 0:
        raise ValueError("h must be positive")
    backward_fn = backward_fn or backward
    batch = np.array(batch, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    def loss_at(x):
        return mse_loss(forward(model, x)[0], target)[0]

    out, cache = forward(model, batch)
    _, dout = mse_loss(out, target)
    wg, bg, xg = backward_fn(model, cache, dout)

    worst = 0.0
    count = 0
    for arr, grad in zip(model.params() + [batch], wg + bg + [xg]):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = loss_at(batch)
            flat[j] = keep - h
            down = loss_at(batch)
            flat[j] = keep
            worst = max(worst, _rel_err((up - down) / (2 * h), gflat[j]))
            count += 1
    return GradCheckReport(worst, count, tol)


def random_gradcheck_case(seed: int, max_dims=(4, 8, 8, 2), rows: int = 5):
    """A random SELU model no larger than ``max_dims``, with batch and target."""
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(1, d, endpoint=True)) for d in max_dims]
    model = init_mlp(dims, rng)
    for b in model.biases:
        b[:] = rng.normal(0.0, 0.5, size=b.shape)
    batch = rng.normal(size=(rows, dims[0]))
    target = rng.normal(size=(rows, dims[-1]))
    return model, batch, target


def gradcheck_suite(n_models: int = 20, h: float = 1e-6, tol: float = 1e-5, seed: int = 0):
    """Run ``grad_check`` on ``n_models`` seeded random networks; list of (seed, dims, report)."""
    out = []
    for k in range(n_models):
        s = seed * 1000 + k
        model, batch, target = random_gradcheck_case(s)
        out.append((s, model.layer_dims, grad_check(model, batch, target, h, tol)))
    return out

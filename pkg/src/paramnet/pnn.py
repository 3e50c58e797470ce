"""Parameterized networks: a shared MLP fed with [x, p_task].

Training optimizes the shared weights and every task vector jointly; a new
task is handled by optimizing a fresh vector with the weights frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .nn_core import (
    AdamState,
    LrSchedule,
    MlpModel,
    RowAdamState,
    adam_step,
    adam_step_rows,
    backward,
    forward,
    init_mlp,
    mse_loss,
)
from .taskgen import TaskSample, TaskSet

# independent random streams used during training
INIT_STREAM, EMBED_STREAM, BATCH_STREAM, NOISE_STREAM = range(4)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


def stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


@dataclass(frozen=True)
class Architecture:
    hidden_layers: int = 3
    width: int = 32
    activation: str = "selu"

    def dims(self, n_in: int, n_out: int) -> list[int]:
        return [n_in] + [self.width] * self.hidden_layers + [n_out]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8000
    batch_size: int | None = None  # None: full batch
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    input_noise_sigma: float = 0.0
    embedding_init_std: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.input_noise_sigma < 0:
            raise ValueError("input_noise_sigma must be >= 0")


RECALIB_INITS = ("mean", "last", "zero", "given")


@dataclass(frozen=True)
class RecalibConfig:
    epochs: int = 100
    batch_size: int = 10
    rate: float = 0.01
    init: str = "mean"
    given: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.init not in RECALIB_INITS:
            raise ValueError(f"init must be one of {RECALIB_INITS}")
        if self.init == "given" and self.given is None:
            raise ValueError("init='given' needs a vector")
        if self.epochs < 0 or self.batch_size < 1 or not self.rate > 0:
            raise ValueError("invalid recalibration settings")


@dataclass
class PnnModel:
    base: MlpModel
    params: np.ndarray  # (n_tasks, l)
    k1: int
    train_loss: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 2:
            self.params = self.params.reshape(-1, self.l)
        if self.params.shape[1] != self.l:
            raise ValueError(f"params must have {self.l} columns")
        if self.base.layer_dims[0] != self.k1 + self.l:
            raise ValueError("base input width must equal k1 + l")

    @property
    def l(self) -> int:
        return self.base.layer_dims[0] - self.k1

    @property
    def k2(self) -> int:
        return self.base.layer_dims[-1]

    @property
    def n_tasks(self) -> int:
        return self.params.shape[0]

    def inputs(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        if x.ndim != 2 or x.shape[1] != self.k1:
            raise ValueError(f"x must have {self.k1} columns")
        if p.size != self.l:
            raise ValueError(f"p must have length {self.l}")
        return np.concatenate([x, np.broadcast_to(p, (x.shape[0], self.l))], axis=1)

    def curve(self, p) -> Curve:
        return Curve(self, np.asarray(p, dtype=np.float64).copy())

    def to_dict(self) -> dict:
        doc = self.base.to_dict()
        doc.update(kind="pnn", k1=self.k1, param_dim=self.l, params=self.params.tolist())
        return doc

    @classmethod
    def from_dict(cls, doc) -> PnnModel:
        base = MlpModel.from_dict(doc)
        l = int(doc["param_dim"])
        params = np.asarray(doc["params"], dtype=np.float64).reshape(len(doc["params"]), l)
        return cls(base, params, int(doc["k1"]))


@dataclass
class Curve:
    """One member g(.; p) of the learned family."""

    model: PnnModel
    p: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return predict(self.model, x, self.p)


def predict(model: PnnModel, x, p) -> np.ndarray:
    return forward(model.base, model.inputs(x, p))[0]


def _check_tasks(tasks: TaskSet):
    if len(tasks) == 0:
        raise ValueError("no tasks")
    k1, k2 = tasks[0].x.shape[1], tasks[0].y.shape[1]
    for i, t in enumerate(tasks.tasks):
        if t.x.shape[1] != k1 or t.y.shape[1] != k2:
            raise ValueError(f"task {i} has dims {t.x.shape[1]}/{t.y.shape[1]}, expected {k1}/{k2}")
    return k1, k2


def train_joint(tasks: TaskSet, arch: Architecture, l: int, cfg: TrainConfig, on_step=None) -> PnnModel:
    """Fit shared weights and one l-vector per task on the pooled samples.

    Each mini-batch is drawn from all (task, sample) pairs; only the vectors
    of tasks present in the batch are touched. ``on_step(epoch, inputs,
    task_index, table)`` is called with the network input of every step
    before the update.
    """
    k1, k2 = _check_tasks(tasks)
    base = init_mlp(arch.dims(k1 + l, k2), stream(cfg.seed, INIT_STREAM), arch.activation)
    table = stream(cfg.seed, EMBED_STREAM).normal(0.0, cfg.embedding_init_std, size=(len(tasks), l))
    x, y, idx = tasks.pooled()

    n_rows = x.shape[0]
    bs = n_rows if cfg.batch_size is None else min(cfg.batch_size, n_rows)
    batch_rng = stream(cfg.seed, BATCH_STREAM)
    noise_rng = stream(cfg.seed, NOISE_STREAM)
    w_state = AdamState.like(base.params())
    p_state = RowAdamState.like(table)
    history = []
    first = None
    for epoch in range(cfg.epochs):
        rate = cfg.schedule.rate(epoch)
        order = batch_rng.permutation(n_rows) if bs < n_rows else np.arange(n_rows)
        total = 0.0
        for start in range(0, n_rows, bs):
            rows = order[start:start + bs]
            xb = x[rows]
            if cfg.input_noise_sigma > 0:
                xb = xb + cfg.input_noise_sigma * noise_rng.standard_normal(xb.shape)
            tb = idx[rows]
            inp = np.concatenate([xb, table[tb]], axis=1)
            if on_step is not None:
                on_step(epoch, inp, tb, table)
            out, cache = forward(base, inp)
            loss, g = mse_loss(out, y[rows])
            wg, bg, ig = backward(base, cache, g)
            if l:
                pg = np.zeros_like(table)
                np.add.at(pg, tb, ig[:, k1:])
                adam_step_rows(table, pg, np.unique(tb), p_state, rate)
            adam_step(base.params(), wg + bg, w_state, rate)
            total += loss * len(rows)
        epoch_loss = total / n_rows
        if first is None:
            first = epoch_loss
        if not math.isfinite(epoch_loss) or epoch_loss > 1e6 * max(first, 1e-300):
            raise DivergenceError(epoch, epoch_loss)
        history.append(epoch_loss)
    return PnnModel(base, table, k1, history)


def _initial_p(model: PnnModel, cfg: RecalibConfig) -> np.ndarray:
    if cfg.init == "mean":
        return model.params.mean(axis=0)
    if cfg.init == "last":
        return model.params[-1].copy()
    if cfg.init == "zero":
        return np.zeros(model.l)
    p = np.asarray(cfg.given, dtype=np.float64).reshape(-1)
    if p.size != model.l:
        raise ValueError(f"given vector has length {p.size}, expected {model.l}")
    return p.copy()


def recalibrate(model: PnnModel, data, cfg: RecalibConfig = RecalibConfig(), seed: int = 0):
    """Optimize a new task vector against ``data`` with the shared weights frozen.

    ``data`` is a TaskSample or an (x, y) pair. Returns the fitted vector and
    the full-data loss before training and after each epoch (epochs + 1 values).
    """
    x, y = (data.x, data.y) if isinstance(data, TaskSample) else data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("no samples to recalibrate on")
    if x.shape[1] != model.k1 or y.shape[1] != model.k2:
        raise ValueError("data dims do not match the model")
    p = _initial_p(model, cfg)
    state = AdamState.like([p])
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    bs = min(cfg.batch_size, n)
    base = model.base
    k1 = model.k1

    def full_loss():
        return mse_loss(forward(base, model.inputs(x, p))[0], y)[0]

    history = [full_loss()]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            rows = order[start:start + bs]
            out, cache = forward(base, model.inputs(x[rows], p))
            _, g = mse_loss(out, y[rows])
            ig = backward(base, cache, g)[2]
            adam_step([p], [ig[:, k1:].sum(axis=0)], state, cfg.rate)
        history.append(full_loss())
    return p, history


def lipschitz_estimate(model: PnnModel, x_box, p_box, n_samples: int, seed: int = 0) -> float:
    """Largest observed |g(x;p1) - g(x;p2)| / |p1 - p2| over random triples.

    A lower bound for the Lipschitz constant in p on the boxes. Samples are
    drawn as one block, so a run with more samples and the same seed extends
    the sample set of a smaller run.
    """
    xlo, xhi = (np.asarray(b, dtype=np.float64).reshape(-1) for b in x_box)
    plo, phi = (np.asarray(b, dtype=np.float64).reshape(-1) for b in p_box)
    if np.any(xhi < xlo) or np.any(phi <= plo):
        raise ValueError("degenerate box")
    k1, l = model.k1, model.l
    u = np.random.default_rng(seed).random((n_samples, k1 + 2 * l))
    x = xlo + (xhi - xlo) * u[:, :k1]
    p1 = plo + (phi - plo) * u[:, k1:k1 + l]
    p2 = plo + (phi - plo) * u[:, k1 + l:]
    g1 = forward(model.base, np.concatenate([x, p1], axis=1))[0]
    g2 = forward(model.base, np.concatenate([x, p2], axis=1))[0]
    dp = np.linalg.norm(p1 - p2, axis=1)
    ok = dp > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(np.linalg.norm(g1 - g2, axis=1)[ok] / dp[ok]))


@dataclass
class ProjectionSweep:
    coord: int
    values: np.ndarray  # (n_steps,)
    x_grid: np.ndarray  # (n_x, k1)
    curves: np.ndarray  # (n_steps, n_x, k2)

    def rows(self):
        """(step, coordinate value, x..., y...) tuples, one per grid point per step."""
        for s, v in enumerate(self.values):
            for xi, yi in zip(self.x_grid, self.curves[s]):
                yield (s, float(v), *map(float, xi), *map(float, yi))


def projection_sweep(model: PnnModel, base_p, coord: int, n_steps: int, x_grid) -> ProjectionSweep:
    """Vary one coordinate between its trained min and max, the rest fixed at ``base_p``."""
    if not 0 <= coord < model.l:
        raise ValueError(f"coord must be in [0, {model.l})")
    lo, hi = param_ranges(model)
    values = np.linspace(lo[coord], hi[coord], n_steps)
    x_grid = np.asarray(x_grid, dtype=np.float64)
    curves = []
    for v in values:
        p = np.array(base_p, dtype=np.float64)
        p[coord] = v
        curves.append(predict(model, x_grid, p))
    return ProjectionSweep(coord, values, x_grid, np.stack(curves))


def param_scatter(model: PnnModel) -> np.ndarray:
    return model.params.copy()


def param_ranges(model: PnnModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate min and max of the trained task vectors."""
    return model.params.min(axis=0), model.params.max(axis=0)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)

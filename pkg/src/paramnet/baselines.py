"""Reference models: one network per task, and quadratic least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_core import AdamState, MlpModel, adam_step, backward, forward, init_mlp, stacked_mse_loss
from .pnn import (
    BATCH_STREAM,
    INIT_STREAM,
    Architecture,
    DivergenceError,
    TrainConfig,
    stream,
    train_joint,
)
from .taskgen import TaskSample, TaskSet


class SingularFitError(ValueError):
    pass


def fit_single_task(task: TaskSample, arch: Architecture, cfg: TrainConfig) -> MlpModel:
    if task.m == 0:
        raise ValueError("empty task")
    return train_joint(TaskSet("single", [task]), arch, 0, cfg).base


def single_task_seed(seed: int, task_id: int) -> int:
    """Seed of the network fitted to test task ``task_id`` in a run seeded ``seed``."""
    return int(np.random.SeedSequence([int(seed), 7919, int(task_id)]).generate_state(1)[0])


def fit_single_tasks(tasks: list[TaskSample], arch: Architecture, cfg: TrainConfig, seeds) -> MlpModel:
    """Train one independent network per task, all at once.

    Returns a stacked model whose member ``k`` matches
    ``fit_single_task(tasks[k], arch, replace(cfg, seed=seeds[k]))`` up to
    floating-point summation order. All tasks must have the same size.
    """
    if not tasks:
        raise ValueError("no tasks")
    m = tasks[0].m
    if any(t.m != m for t in tasks):
        raise ValueError("stacked fitting needs equally sized tasks")
    if cfg.input_noise_sigma:
        raise ValueError("input noise is not supported for stacked fits")
    k1, k2 = tasks[0].x.shape[1], tasks[0].y.shape[1]
    dims = arch.dims(k1, k2)
    members = [init_mlp(dims, stream(s, INIT_STREAM), arch.activation) for s in seeds]
    model = MlpModel(
        dims,
        [np.stack([mm.weights[i] for mm in members]) for i in range(len(dims) - 1)],
        [np.stack([mm.biases[i] for mm in members]) for i in range(len(dims) - 1)],
        arch.activation,
    )
    x = np.stack([t.x for t in tasks])
    y = np.stack([t.y for t in tasks])
    bs = m if cfg.batch_size is None else min(cfg.batch_size, m)
    batch_rngs = [stream(s, BATCH_STREAM) for s in seeds]
    state = AdamState.like(model.params())
    first = None
    for epoch in range(cfg.epochs):
        rate = cfg.schedule.rate(epoch)
        if bs < m:
            order = np.stack([r.permutation(m) for r in batch_rngs])
        else:
            order = np.broadcast_to(np.arange(m), (len(tasks), m))
        total = np.zeros(len(tasks))
        for start in range(0, m, bs):
            rows = order[:, start:start + bs, None]
            xb = np.take_along_axis(x, rows, axis=1)
            yb = np.take_along_axis(y, rows, axis=1)
            out, cache = forward(model, xb)
            loss, g = stacked_mse_loss(out, yb)
            wg, bg, _ = backward(model, cache, g)
            adam_step(model.params(), wg + bg, state, rate)
            total += loss * rows.shape[1]
        epoch_loss = total / m
        if first is None:
            first = epoch_loss
        bad = ~np.isfinite(epoch_loss) | (epoch_loss > 1e6 * np.maximum(first, 1e-300))
        if np.any(bad):
            raise DivergenceError(epoch, float(epoch_loss[np.argmax(bad)]))
    return model


def predict_stacked(model: MlpModel, x) -> np.ndarray:
    """Evaluate every member of a stacked model on the same inputs: (stack, rows, k2)."""
    x = np.asarray(x, dtype=np.float64)
    return forward(model, np.broadcast_to(x, (model.stack,) + x.shape))[0]


@dataclass(frozen=True)
class PolyFit:
    constant: float
    linear: float
    quadratic: float
    with_intercept: bool

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return (self.constant, self.linear, self.quadratic)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.constant + self.linear * x + self.quadratic * x * x


def design_matrix(x, with_intercept: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cols = [x, x * x]
    if with_intercept:
        cols.insert(0, np.ones_like(x))
    return np.column_stack(cols)


def polyfit_quadratic(x, y, with_intercept: bool = True) -> PolyFit:
    """Least-squares quadratic via the normal equations (LU with partial pivoting)."""
    A = design_matrix(x, with_intercept)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    need = A.shape[1]
    if A.shape[0] < need:
        raise SingularFitError(f"need at least {need} points, got {A.shape[0]}")
    gram = A.T @ A
    if np.linalg.matrix_rank(A) < need:
        raise SingularFitError("design matrix is rank deficient")
    coef = np.linalg.solve(gram, A.T @ y)
    if with_intercept:
        return PolyFit(float(coef[0]), float(coef[1]), float(coef[2]), True)
    return PolyFit(0.0, float(coef[0]), float(coef[1]), False)

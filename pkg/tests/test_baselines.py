from dataclasses import replace

import numpy as np
import pytest

from paramnet.baselines import (
    PolyFit,
    SingularFitError,
    design_matrix,
    fit_single_task,
    fit_single_tasks,
    polyfit_quadratic,
    predict_stacked,
)
from paramnet.nn_core import LrSchedule, forward, mse_loss
from paramnet.pnn import Architecture, TrainConfig, predict, train_joint
from paramnet.taskgen import TaskSet, family_grid, gen_noisy_quadratic, gen_quadratic

SMALL = Architecture(2, 8)


def test_three_point_task_fits():
    task = gen_quadratic(1, 3, seed=0).tasks[0]
    cfg = TrainConfig(epochs=3000, schedule=LrSchedule(0.01, 0.995, 10))
    net = fit_single_task(task, Architecture(), cfg)
    assert mse_loss(forward(net, task.x)[0], task.y)[0] < 1e-4


def test_single_task_deterministic():
    task = gen_quadratic(1, 4, seed=1).tasks[0]
    cfg = TrainConfig(epochs=50, seed=3)
    a, b = fit_single_task(task, SMALL, cfg), fit_single_task(task, SMALL, cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_single_task_equals_joint_with_l0():
    task = gen_quadratic(1, 5, seed=2).tasks[0]
    cfg = TrainConfig(epochs=60, batch_size=2, seed=4)
    net = fit_single_task(task, SMALL, cfg)
    model = train_joint(TaskSet("quadratic", [task]), SMALL, 0, cfg)
    grid = family_grid("quadratic")
    assert np.array_equal(forward(net, grid)[0], predict(model, grid, np.zeros(0)))


@pytest.mark.parametrize("batch", [None, 2])
def test_stacked_matches_sequential(batch):
    tasks = gen_quadratic(4, 5, seed=3).tasks
    cfg = TrainConfig(epochs=80, batch_size=batch)
    seeds = [11, 12, 13, 14]
    stacked = fit_single_tasks(tasks, SMALL, cfg, seeds)
    grid = family_grid("quadratic")
    preds = predict_stacked(stacked, grid)
    for k, (t, s) in enumerate(zip(tasks, seeds)):
        net = fit_single_task(t, SMALL, replace(cfg, seed=s))
        assert np.allclose(preds[k], forward(net, grid)[0], rtol=0, atol=1e-9)


def test_stacked_needs_equal_sizes():
    a = gen_quadratic(1, 3, 0).tasks[0]
    b = gen_quadratic(1, 4, 0).tasks[0]
    with pytest.raises(ValueError):
        fit_single_tasks([a, b], SMALL, TrainConfig(epochs=1), [0, 1])


def test_polyfit_exact_interpolation():
    x = np.array([-1.0, 0.5, 2.0])
    y = 2 * x**2 - x
    fit = polyfit_quadratic(x, y, True)
    assert np.allclose(fit.coefficients, (0.0, -1.0, 2.0), atol=1e-10)
    fit0 = polyfit_quadratic(x, y, False)
    assert fit0.constant == 0.0
    assert np.allclose(fit0.coefficients, (0.0, -1.0, 2.0), atol=1e-10)


def test_polyfit_matches_pseudoinverse():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.uniform(-1, 1, 5)
        y = rng.uniform(1, 2) * x**2 + rng.normal(0, 0.1, 5)
        for intercept in (True, False):
            A = design_matrix(x, intercept)
            oracle = np.linalg.pinv(A) @ y
            rss_oracle = float(np.sum((A @ oracle - y) ** 2))
            fit = polyfit_quadratic(x, y, intercept)
            rss = float(np.sum((fit(x) - y) ** 2))
            assert abs(rss - rss_oracle) < 1e-8


def test_polyfit_residuals_orthogonal():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, 7)
    y = rng.normal(size=7)
    for intercept in (True, False):
        A = design_matrix(x, intercept)
        r = polyfit_quadratic(x, y, intercept)(x) - y
        for col in A.T:
            assert abs(col @ r) < 1e-8 * np.linalg.norm(col) * max(np.linalg.norm(r), 1.0)


def test_intercept_never_worse_in_sample():
    for t in gen_noisy_quadratic(100, 5, seed=7).tasks:
        x, y = t.x[:, 0], t.y[:, 0]
        rss1 = np.sum((polyfit_quadratic(x, y, True)(x) - y) ** 2)
        rss0 = np.sum((polyfit_quadratic(x, y, False)(x) - y) ** 2)
        assert rss1 <= rss0 + 1e-12


def test_polyfit_rank_errors():
    with pytest.raises(SingularFitError):
        polyfit_quadratic([1.0, 2.0], [1.0, 2.0], True)
    with pytest.raises(SingularFitError):
        polyfit_quadratic([0.5, 0.5, 0.5], [1.0, 1.0, 1.0], True)
    fit = polyfit_quadratic([1.0, -2.0], [3.0, 2.0], False)
    assert fit.constant == 0.0


def test_polyfit_call():
    fit = PolyFit(1.0, 2.0, 3.0, True)
    assert fit(2.0) == 1 + 4 + 12

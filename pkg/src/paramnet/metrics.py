"""Error measures, the d_nu distance, loss-gap diagnostic and regime clustering.

Two normalizations of the per-task and aggregate errors are offered:

``"printed"``
    e_i = sqrt(sum_j |r_ij|^2) / m  and  e = sqrt(sum_i e_i^2) / N
``"rms"``
    e_i = sqrt(sum_j |r_ij|^2 / m)  and  e = sqrt(sum_i e_i^2 / N)

The first follows the formulas as typeset, the second the prose description
("mean squared error", "square root of the mean"). The reported tables use
``"rms"``; both are written to every error file.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

NORMALIZATIONS = ("printed", "rms")


def task_error(truth_values, predictions, normalization: str = "printed") -> float:
    r = np.asarray(predictions, dtype=np.float64) - np.asarray(truth_values, dtype=np.float64)
    if r.shape[0] == 0:
        raise ValueError("no grid points")
    r = r.reshape(r.shape[0], -1)
    m = r.shape[0]
    ss = float(np.sum(r * r))
    if normalization == "printed":
        return math.sqrt(ss) / m
    if normalization == "rms":
        return math.sqrt(ss / m)
    raise ValueError(f"unknown normalization {normalization!r}")


def aggregate_error(errors, normalization: str = "printed") -> float:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no task errors")
    ss = float(np.sum(e * e))
    if normalization == "printed":
        return math.sqrt(ss) / e.size
    if normalization == "rms":
        return math.sqrt(ss / e.size)
    raise ValueError(f"unknown normalization {normalization!r}")


@dataclass
class ErrorReport:
    model: str
    family: str
    n_tasks: int
    m_points: int
    param_dim: int
    seed: int
    errors: list[float]  # per-task, printed normalization
    rms_errors: list[float]
    fingerprint: str = ""

    @property
    def e(self) -> float:
        return aggregate_error(self.errors, "printed")

    @property
    def e_rms(self) -> float:
        return aggregate_error(self.rms_errors, "rms")

    COLUMNS = ("model", "family", "n_tasks", "m_points", "param_dim", "seed", "task_id", "e_i", "e_i_rms")

    def rows(self):
        head = (self.model, self.family, self.n_tasks, self.m_points, self.param_dim, self.seed)
        for i, (a, b) in enumerate(zip(self.errors, self.rms_errors)):
            yield (*head, i, a, b)
        yield (*head, "aggregate", self.e, self.e_rms)


def d_nu(x: float, y: float, nu: float) -> float:
    """|x - y| / (nu + x + y) on non-negative reals."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    if x < 0 or y < 0:
        raise ValueError("d_nu is defined on non-negative reals")
    return abs(x - y) / (nu + (x + y))  # x + y first keeps symmetry exact


@dataclass
class LossGap:
    empirical_loss: float
    grid_loss: float
    distance: float


def loss_gap(predict_fn, truth, x_train, y_train, grid, nu: float = 1.0) -> LossGap:
    """Training-point loss vs. noiseless loss on a dense grid, and their d_nu distance.

    ``predict_fn`` maps an (rows, k1) array to (rows, k2) predictions.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape[0] < 100:
        raise ValueError("grid needs at least 100 points")
    y_train = np.asarray(y_train, dtype=np.float64)
    emp = float(np.mean(np.sum((predict_fn(x_train) - y_train) ** 2, axis=1)))
    true = float(np.mean(np.sum((predict_fn(grid) - truth.evaluate(grid)) ** 2, axis=1)))
    return LossGap(emp, true, d_nu(emp, true, nu))


def _two_means(X: np.ndarray, rng: np.random.Generator, max_iter: int = 300):
    n = X.shape[0]
    i, j = rng.choice(n, size=2, replace=False)
    centers = X[[i, j]].copy()
    prev = math.inf
    for _ in range(max_iter):
        d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d, axis=1)
        inertia = float(d[np.arange(n), assign].sum())
        for k in range(2):
            if np.any(assign == k):
                centers[k] = X[assign == k].mean(axis=0)
        if prev < math.inf and abs(prev - inertia) <= 1e-10 * max(prev, 1e-300):
            break
        prev = inertia
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d, axis=1)
    return assign, centers, float(d[np.arange(n), assign].sum())


@dataclass
class ClusterResult:
    accuracy: float
    centroid_distance: float
    assignment: np.ndarray


def cluster_separation(params, labels, restarts: int = 10, seed: int = 0) -> ClusterResult:
    """2-means on the task vectors, scored against two-class ``labels``.

    Accuracy is taken under the better of the two label permutations.
    Restarts are seeded; the lowest-inertia run wins.
    """
    X = np.asarray(params, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or labels.shape[0] != X.shape[0]:
        raise ValueError("labels must have one entry per task")
    classes = np.unique(labels)
    if classes.size != 2:
        raise ValueError("exactly two classes are required")
    if np.all(X == X[0]):
        raise ValueError("all parameter rows are identical")
    # canonical row order makes the result independent of task order
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        run = _two_means(Xs, rng)
        if best is None or run[2] < best[2]:
            best = run
    assign = np.empty(X.shape[0], dtype=int)
    assign[order] = best[0]
    truth = (labels == classes[1]).astype(int)
    acc = float(np.mean(assign == truth))
    return ClusterResult(max(acc, 1.0 - acc), float(np.linalg.norm(best[1][0] - best[1][1])), assign)


def neighbor_separation(params, labels, k: int = 3) -> float:
    """Leave-one-out k-nearest-neighbour accuracy of ``labels`` from the task vectors.

    Complements 2-means: classes lying on separate curved arcs are separable
    by neighbourhood even when they do not form two compact blobs. Ties in
    the vote count as misses.
    """
    X = np.asarray(params, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or labels.shape[0] != X.shape[0]:
        raise ValueError("labels must have one entry per task")
    if not 1 <= k < X.shape[0]:
        raise ValueError("need 1 <= k < n_tasks")
    d = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d, np.inf)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    same = np.sum(labels[nearest] == labels[:, None], axis=1)
    return float(np.mean(2 * same > k))


def error_histogram(residuals, maturities, split_at_years: float = 0.25, bin_width_bp: float = 1.0):
    """Counts of residuals (in basis points) per bin, for short and long maturities.

    Returns ``{"short": Counter, "long": Counter}`` keyed by each bin's left
    edge in basis points.
    """
    r = np.asarray(residuals, dtype=np.float64).reshape(-1) * 1e4
    T = np.asarray(maturities, dtype=np.float64).reshape(-1)
    if r.shape != T.shape:
        raise ValueError("residuals and maturities must align")
    left = np.floor(r / bin_width_bp) * bin_width_bp + 0.0  # +0.0 folds -0.0 into 0.0
    short = T < split_at_years
    return {
        "short": Counter(left[short].tolist()),
        "long": Counter(left[~short].tolist()),
    }


def histogram_rows(hist):
    for group in ("short", "long"):
        for left in sorted(hist[group]):
            yield (group, left, hist[group][left])


def share_within(residuals, bound: float) -> float:
    r = np.abs(np.asarray(residuals, dtype=np.float64))
    return float(np.mean(r <= bound)) if r.size else float("nan")

"""Seeded synthetic task families and the bond feature encoder.

Every task draws from its own Philox stream keyed by (seed, family, split,
task index), so task ``i`` is the same whatever ``n_tasks`` is and whatever
order tasks are generated in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("quadratic", "noisy_quadratic", "interdep", "regime", "bond")
SPLITS = {"train": 0, "test": 1}

# bond categories: rating, country, sector, esg
CATEGORY_SIZES = (9, 5, 11, 3)
CATEGORY_WEIGHTS = (0.1, 0.2, 0.5, 0.2)
MAX_MATURITY_YEARS = 20.0
BOND_FEATURE_DIM = 19


def task_rng(seed: int, family: str, split: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), FAMILIES.index(family), SPLITS[split], int(index)])
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NelsonSiegelParams:
    beta0: float
    beta1: float
    beta2: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def nelson_siegel(T, p: NelsonSiegelParams):
    """beta0 + (beta1+beta2)*tau*(1-exp(-T/tau))/T - beta2*exp(-T/tau).

    Below T = 1e-8 the short-end limit beta0 + beta1 is returned.
    """
    if not p.tau > 0:
        raise ValueError(f"tau must be positive, got {p.tau}")
    T = np.asarray(T, dtype=np.float64)
    if np.any(T <= 0):
        raise ValueError("maturity must be positive")
    Ts = np.maximum(T, 1e-8)
    decay = np.exp(-Ts / p.tau)
    r = p.beta0 + (p.beta1 + p.beta2) * p.tau * (-np.expm1(-Ts / p.tau)) / Ts - p.beta2 * decay
    r = np.where(T < 1e-8, p.beta0 + p.beta1, r)
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class BondCurves:
    """Two Nelson-Siegel parameter sets per category; ``sets[j] = (first, second)``.

    With ``tau_reading="printed"`` the lower curve borrows the second set's tau,
    as in the published construction; ``"own"`` uses the first set's tau.
    """

    sets: tuple[tuple[NelsonSiegelParams, NelsonSiegelParams], ...]
    tau_reading: str = "printed"

    def lower(self, j: int, T):
        first, second = self.sets[j]
        tau = second.tau if self.tau_reading == "printed" else first.tau
        return nelson_siegel(T, NelsonSiegelParams(first.beta0, first.beta1, first.beta2, tau))

    def upper(self, j: int, T):
        return self.lower(j, T) + nelson_siegel(T, self.sets[j][1])

    def to_dict(self) -> dict:
        return {
            "tau_reading": self.tau_reading,
            "sets": [[[p.beta0, p.beta1, p.beta2, p.tau] for p in pair] for pair in self.sets],
        }

    @classmethod
    def from_dict(cls, doc) -> BondCurves:
        sets = tuple(tuple(NelsonSiegelParams(*q) for q in pair) for pair in doc["sets"])
        return cls(sets, doc["tau_reading"])


def _draw_ns(rng: np.random.Generator) -> NelsonSiegelParams:
    b0 = rng.uniform(0.0, 0.15)
    b1 = rng.uniform(-b0, 0.1 - b0)
    b2 = rng.uniform(0.0, 0.2)
    tau = rng.uniform(0.2, 2.0)
    return NelsonSiegelParams(b0, b1, b2, tau)


def sample_task_curves(seed, tau_reading: str = "printed") -> BondCurves:
    """Draw both parameter sets for each of the four categories.

    ``seed`` may be an int or an existing Generator.
    """
    if tau_reading not in ("printed", "own"):
        raise ValueError(f"unknown tau_reading {tau_reading!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sets = tuple((_draw_ns(rng), _draw_ns(rng)) for _ in CATEGORY_SIZES)
    return BondCurves(sets, tau_reading)


def combined_spread(T, k1, k2, k3, k4, curves: BondCurves):
    """Category-weighted blend of each category's lower and upper curve.

    Works elementwise when ``T`` and the indices are arrays.
    """
    total = 0.0
    for j, (k, n, w) in enumerate(zip((k1, k2, k3, k4), CATEGORY_SIZES, CATEGORY_WEIGHTS)):
        k = np.asarray(k)
        if np.any((k < 1) | (k > n)):
            raise ValueError(f"category {j + 1} index {k} outside 1..{n}")
        lo = (n - k) / (n - 1)
        hi = (k - 1) / (n - 1)
        total = total + w * (lo * curves.lower(j, T) + hi * curves.upper(j, T))
    return float(total) if np.ndim(total) == 0 else total


@dataclass(frozen=True)
class BondRecord:
    maturity_years: float
    rating: int
    country: int
    sector: int
    esg: int
    spread: float = float("nan")

    @property
    def categories(self) -> tuple[int, int, int, int]:
        return (self.rating, self.country, self.sector, self.esg)


def encode_bond_features(record: BondRecord) -> np.ndarray:
    """[T/20, ordinal rating, ordinal esg, one-hot country (5), one-hot sector (11)]."""
    for j, (k, n) in enumerate(zip(record.categories, CATEGORY_SIZES)):
        if not (isinstance(k, (int, np.integer)) and 1 <= k <= n):
            raise ValueError(f"category {j + 1} value {k!r} outside 1..{n}")
    out = np.zeros(BOND_FEATURE_DIM)
    out[0] = record.maturity_years / MAX_MATURITY_YEARS
    out[1] = (record.rating - 1) / (CATEGORY_SIZES[0] - 1)
    out[2] = (record.esg - 1) / (CATEGORY_SIZES[3] - 1)
    out[3 + record.country - 1] = 1.0
    out[8 + record.sector - 1] = 1.0
    return out


def decode_bond_features(x: np.ndarray):
    """Inverse of the encoder for a (rows, 19) array: maturities and category indices."""
    x = np.asarray(x, dtype=np.float64)
    T = x[:, 0] * MAX_MATURITY_YEARS
    rating = np.rint(x[:, 1] * (CATEGORY_SIZES[0] - 1)).astype(int) + 1
    esg = np.rint(x[:, 2] * (CATEGORY_SIZES[3] - 1)).astype(int) + 1
    country = np.argmax(x[:, 3:8], axis=1) + 1
    sector = np.argmax(x[:, 8:19], axis=1) + 1
    return T, rating, country, sector, esg


@dataclass
class GroundTruth:
    family: str
    params: dict

    def evaluate(self, x) -> np.ndarray:
        """Noiseless targets for a (rows, k1) input array; returns (rows, 1)."""
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        f = self.family
        if f == "quadratic":
            y = p["a"] * (x[:, 0] - p["c"]) ** 2 + p["b"]
        elif f == "noisy_quadratic":
            y = p["a"] * x[:, 0] ** 2 + p["b"] * x[:, 0]
        elif f == "interdep":
            x1 = x[:, 0]
            y = p["a"] * (x1 - p["c"]) ** 2 + p["b"] + np.where(x[:, 1] == 1, p["d"] * x1, 0.0)
        elif f == "regime":
            y = p["a"] * x[:, 0] ** (2 if p["regime"] == 1 else 3)
        elif f == "bond":
            curves = BondCurves.from_dict(p["curves"])
            T, *cats = decode_bond_features(x)
            y = combined_spread(T, *cats, curves)
        else:
            raise ValueError(f"unknown family {f!r}")
        return np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params}

    @classmethod
    def from_dict(cls, doc) -> GroundTruth:
        return cls(doc["family"], doc["params"])


@dataclass
class TaskSample:
    x: np.ndarray
    y: np.ndarray
    truth: GroundTruth
    records: list | None = None  # BondRecords, bond family only

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y row counts differ")

    @property
    def m(self) -> int:
        return self.x.shape[0]


@dataclass
class TaskSet:
    family: str
    tasks: list[TaskSample]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    @property
    def k1(self) -> int:
        return self.tasks[0].x.shape[1]

    @property
    def k2(self) -> int:
        return self.tasks[0].y.shape[1]

    def pooled(self):
        """Stacked x, y and the task index of each row."""
        x = np.concatenate([t.x for t in self.tasks])
        y = np.concatenate([t.y for t in self.tasks])
        idx = np.concatenate([np.full(t.m, i) for i, t in enumerate(self.tasks)])
        return x, y, idx

    def subset(self, n: int) -> TaskSet:
        return TaskSet(self.family, self.tasks[:n], dict(self.meta))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def quadratic(x, a, b, c):
    return a * (np.asarray(x) - c) ** 2 + b


def gen_quadratic(n_tasks: int, m_points: int, seed: int, split: str = "train") -> TaskSet:
    if m_points < 1:
        raise ValueError("m_points must be >= 1")
    tasks = []
    for i in range(n_tasks):
        rng = task_rng(seed, "quadratic", split, i)
        a, b, c = rng.uniform(1, 2), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)
        truth = GroundTruth("quadratic", {"a": a, "b": b, "c": c})
        x = rng.uniform(-1, 1, size=(m_points, 1))
        tasks.append(TaskSample(x, truth.evaluate(x), truth))
    return TaskSet("quadratic", tasks, {"m_points": m_points, "seed": seed, "split": split})


def gen_noisy_quadratic(n_tasks: int, m_points: int = 5, sigma: float = 0.1, seed: int = 0,
                        split: str = "train") -> TaskSet:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    tasks = []
    for i in range(n_tasks):
        rng = task_rng(seed, "noisy_quadratic", split, i)
        a, b = rng.uniform(1, 2), rng.uniform(-0.5, 0.5)
        truth = GroundTruth("noisy_quadratic", {"a": a, "b": b})
        x = rng.uniform(-1, 1, size=(m_points, 1))
        y = truth.evaluate(x) + sigma * rng.standard_normal((m_points, 1))
        tasks.append(TaskSample(x, y, truth))
    meta = {"m_points": m_points, "seed": seed, "split": split, "noise_sigma": sigma}
    return TaskSet("noisy_quadratic", tasks, meta)


def gen_interdep(n_tasks: int, seed: int, split: str = "train", n_zero: int = 3, n_one: int = 2) -> TaskSet:
    tasks = []
    for i in range(n_tasks):
        rng = task_rng(seed, "interdep", split, i)
        a, b, c = rng.uniform(1, 2), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)
        d = rng.uniform(0.1, 1.0)
        truth = GroundTruth("interdep", {"a": a, "b": b, "c": c, "d": d})
        x1 = rng.uniform(-1, 1, size=n_zero + n_one)
        x2 = np.array([0.0] * n_zero + [1.0] * n_one)
        x = np.column_stack([x1, x2])
        tasks.append(TaskSample(x, truth.evaluate(x), truth))
    return TaskSet("interdep", tasks, {"m_points": n_zero + n_one, "seed": seed, "split": split})


def gen_regime(n_tasks: int, m_points: int = 4, seed: int = 0, split: str = "train") -> TaskSet:
    tasks = []
    for i in range(n_tasks):
        rng = task_rng(seed, "regime", split, i)
        regime = 1 if rng.random() < 0.5 else 2
        a = rng.uniform(1, 2)
        truth = GroundTruth("regime", {"a": a, "regime": regime})
        x = rng.uniform(0, 1, size=(m_points, 1))
        tasks.append(TaskSample(x, truth.evaluate(x), truth))
    return TaskSet("regime", tasks, {"m_points": m_points, "seed": seed, "split": split})


def sample_bonds(n_bonds: int, rng: np.random.Generator, curves: BondCurves,
                 min_maturity_years: float = 0.02) -> list[BondRecord]:
    T = rng.uniform(min_maturity_years, MAX_MATURITY_YEARS, size=n_bonds)
    cats = [rng.integers(1, n, endpoint=True, size=n_bonds) for n in CATEGORY_SIZES]
    spreads = combined_spread(T, *cats, curves)
    return [
        BondRecord(float(t), int(k1), int(k2), int(k3), int(k4), float(s))
        for t, k1, k2, k3, k4, s in zip(T, *cats, spreads)
    ]


def bond_spreads(records, curves: BondCurves) -> np.ndarray:
    T = np.array([r.maturity_years for r in records])
    cats = np.array([r.categories for r in records]).T
    return combined_spread(T, *cats, curves)


def gen_bond_task(n_bonds: int, seed, tau_reading: str = "printed",
                  min_maturity_years: float = 0.02) -> TaskSample:
    """One day: fresh curves, ``n_bonds`` random bonds, encoded features and spreads."""
    if n_bonds < 1:
        raise ValueError("n_bonds must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    curves = sample_task_curves(rng, tau_reading)
    records = sample_bonds(n_bonds, rng, curves, min_maturity_years)
    x = np.stack([encode_bond_features(r) for r in records])
    y = np.array([[r.spread] for r in records])
    return TaskSample(x, y, GroundTruth("bond", {"curves": curves.to_dict()}), records)


def gen_bond(n_tasks: int, n_bonds: int, seed: int, split: str = "train",
             tau_reading: str = "printed", min_maturity_years: float = 0.02) -> TaskSet:
    tasks = [
        gen_bond_task(n_bonds, task_rng(seed, "bond", split, i), tau_reading, min_maturity_years)
        for i in range(n_tasks)
    ]
    meta = {"m_points": n_bonds, "seed": seed, "split": split, "tau_reading": tau_reading}
    return TaskSet("bond", tasks, meta)


def generate(family: str, n_tasks: int, m_points: int, seed: int, split: str = "train",
             **options) -> TaskSet:
    """Dispatch by family name. ``m_points`` is ignored for ``interdep`` (always 3+2)."""
    if family == "quadratic":
        return gen_quadratic(n_tasks, m_points, seed, split)
    if family == "noisy_quadratic":
        return gen_noisy_quadratic(n_tasks, m_points, options.get("noise_sigma", 0.1), seed, split)
    if family == "interdep":
        return gen_interdep(n_tasks, seed, split)
    if family == "regime":
        return gen_regime(n_tasks, m_points, seed, split)
    if family == "bond":
        return gen_bond(n_tasks, m_points, seed, split, options.get("tau_reading", "printed"),
                        options.get("min_maturity_years", 0.02))
    raise ValueError(f"unknown family {family!r}")


def test_grid(lower: float, upper: float, n: int = 100) -> np.ndarray:
    """n equidistant points on [lower, upper] as an (n, 1) array."""
    if not lower < upper:
        raise ValueError("lower must be < upper")
    return np.linspace(lower, upper, n).reshape(-1, 1)


test_grid.__test__ = False  # keep pytest from collecting it


def family_grid(family: str, n: int = 100) -> np.ndarray:
    """Evaluation grid on the family's input domain.

    The two-feature family gets the 1-D grid once per value of the binary
    coordinate, i.e. 2n rows.
    """
    if family in ("quadratic", "noisy_quadratic"):
        return test_grid(-1.0, 1.0, n)
    if family == "regime":
        return test_grid(0.0, 1.0, n)
    if family == "interdep":
        g = test_grid(-1.0, 1.0, n)[:, 0]
        return np.concatenate([np.column_stack([g, np.zeros(n)]), np.column_stack([g, np.ones(n)])])
    raise ValueError(f"no grid for family {family!r}")


def ns_nonnegativity_violations(n_sets: int, seed: int, n_grid: int = 200) -> int:
    """Count parameter draws whose curve dips below zero on (0, 20]."""
    rng = np.random.default_rng(seed)
    T = np.linspace(MAX_MATURITY_YEARS / n_grid, MAX_MATURITY_YEARS, n_grid)
    bad = 0
    for _ in range(n_sets):
        if np.min(nelson_siegel(T, _draw_ns(rng))) < 0:
            bad += 1
    return bad


def maturity_share_below(threshold_years: float, n: int, seed: int, min_maturity_years: float = 0.02) -> float:
    rng = np.random.default_rng(seed)
    T = rng.uniform(min_maturity_years, MAX_MATURITY_YEARS, size=n)
    return float(np.mean(T < threshold_years))



def curve_invariant_violations(seeds, n_grid: int = 200, tau_reading: str = "printed") -> dict:
    """Scan sampled curves for ordering and monotonicity failures.

    For each seed, checks lower <= upper per category on an ``n_grid``
    maturity grid over (0, 20], and that combined_spread never decreases when
    one category index steps up, over every combination of the other indices.
    Returns counts of violating grid points.
    """
    T = np.linspace(MAX_MATURITY_YEARS / n_grid, MAX_MATURITY_YEARS, n_grid)
    grids = np.meshgrid(*[np.arange(1, n + 1) for n in CATEGORY_SIZES], indexing="ij")
    order = 0
    monotone = 0
    for seed in seeds:
        curves = sample_task_curves(int(seed), tau_reading)
        for j in range(len(CATEGORY_SIZES)):
            order += int(np.sum(curves.lower(j, T) > curves.upper(j, T)))
        # (9, 5, 11, 3, n_grid) spreads over every index combination
        s = combined_spread(T, *[g[..., None] for g in grids], curves)
        for axis in range(len(CATEGORY_SIZES)):
            monotone += int(np.sum(np.diff(s, axis=axis) < 0))
    return {"ordering": order, "monotonicity": monotone}

"""Train/test protocols and the on-disk pipeline behind the CLI.

Layout of an output directory::

    config.json                      resolved config (written by gen)
    data/m{m}_s{seed}/               train.csv, train_truth.json, test.csv, test_truth.json
    cells/n{n}_m{m}_l{l}_s{seed}/    model.json, train_loss.csv, recalib.csv, errors.csv, ...
    baselines/m{m}_s{seed}/          errors.csv, ...
    report/                          tables and figure data

Every stage writes a ``manifest_<stage>.json`` next to the files it
produced.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import fit_single_tasks, polyfit_quadratic, predict_stacked, single_task_seed
from .config import Cell, ExperimentConfig
from .metrics import ErrorReport, task_error
from .nn_core import forward
from .persist import load_taskset, read_json, save_taskset, write_csv, write_json
from .pnn import PnnModel, predict, recalibrate, train_joint
from .taskgen import TaskSet, decode_bond_features, family_grid, generate


class MissingInputError(FileNotFoundError):
    pass


def recalib_seed(seed: int, task_id: int) -> int:
    return int(np.random.SeedSequence([int(seed), 104729, int(task_id)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# In-memory protocol
# ---------------------------------------------------------------------------


def make_train_tasks(cfg: ExperimentConfig, m: int, seed: int, n: int | None = None) -> TaskSet:
    n = max(cfg.n_train_tasks) if n is None else n
    return generate(cfg.family, n, m, seed, "train", **cfg.gen_options())


def make_test_tasks(cfg: ExperimentConfig, m: int, seed: int) -> TaskSet:
    return generate(cfg.family, cfg.n_test_tasks, m, seed, "test", **cfg.gen_options())


def eval_points(cfg: ExperimentConfig, task):
    """Inputs and noiseless targets on which a test task is scored."""
    if cfg.family == "bond":
        return task.x, task.truth.evaluate(task.x)
    grid = family_grid(cfg.family, cfg.options["grid_points"])
    return grid, task.truth.evaluate(grid)


def train_cell(cfg: ExperimentConfig, cell: Cell, tasks: TaskSet | None = None) -> PnnModel:
    if tasks is None:
        tasks = make_train_tasks(cfg, cell.m_points, cell.seed, cell.n_tasks)
    return train_joint(tasks.subset(cell.n_tasks), cfg.arch, cell.param_dim, replace(cfg.train, seed=cell.seed))


@dataclass
class Outcome:
    """Scores of one model on a test task set."""

    report: ErrorReport
    predictions: list[np.ndarray] = field(default_factory=list)
    p_hats: np.ndarray | None = None
    histories: list[list[float]] = field(default_factory=list)
    zero_values: np.ndarray | None = None

    def residuals(self, cfg: ExperimentConfig, test: TaskSet):
        """(task_id, maturity, residual) rows for the bond family."""
        out = []
        for i, (t, pred) in enumerate(zip(test.tasks, self.predictions)):
            T = decode_bond_features(t.x)[0]
            for mat, r in zip(T, (pred - t.truth.evaluate(t.x))[:, 0]):
                out.append((i, float(mat), float(r)))
        return out


def _report(model_name, cfg, cell_like, errors, rms):
    n, m, l, seed = cell_like
    return ErrorReport(model_name, cfg.family, n, m, l, seed, errors, rms, cfg.fingerprint)


def evaluate_pnn(cfg: ExperimentConfig, model: PnnModel, test: TaskSet, cell: Cell) -> Outcome:
    errs, rms, preds, phats, hists = [], [], [], [], []
    for i, task in enumerate(test.tasks):
        p, hist = recalibrate(model, task, cfg.recalib, seed=recalib_seed(cell.seed, i))
        xs, ys = eval_points(cfg, task)
        pred = predict(model, xs, p)
        errs.append(task_error(ys, pred, "printed"))
        rms.append(task_error(ys, pred, "rms"))
        preds.append(pred)
        phats.append(p)
        hists.append(hist)
    out = Outcome(
        _report("pnn", cfg, (cell.n_tasks, cell.m_points, cell.param_dim, cell.seed), errs, rms),
        preds, np.array(phats).reshape(len(phats), model.l), hists,
    )
    if cfg.family == "noisy_quadratic":
        out.zero_values = np.array([predict(model, [[0.0]], p)[0, 0] for p in phats])
    return out


def evaluate_baselines(cfg: ExperimentConfig, test: TaskSet, m: int, seed: int) -> dict[str, Outcome]:
    results = {}
    key = (0, m, 0, seed)
    if "single" in cfg.baselines:
        seeds = [single_task_seed(seed, i) for i in range(len(test))]
        stacked = fit_single_tasks(test.tasks, cfg.arch, cfg.train, seeds)
        xs = [eval_points(cfg, t) for t in test.tasks]
        if cfg.family == "bond":
            preds = list(forward(stacked, np.stack([x for x, _ in xs]))[0])
        else:
            preds = list(predict_stacked(stacked, xs[0][0]))
        errs = [task_error(ys, p, "printed") for (_, ys), p in zip(xs, preds)]
        rms = [task_error(ys, p, "rms") for (_, ys), p in zip(xs, preds)]
        out = Outcome(_report("single", cfg, key, errs, rms), preds)
        if cfg.family == "noisy_quadratic":
            out.zero_values = predict_stacked(stacked, np.zeros((1, 1)))[:, 0, 0]
        results["single"] = out
    for name, intercept in (("poly", True), ("poly0", False)):
        if name not in cfg.baselines:
            continue
        errs, rms, preds, zeros = [], [], [], []
        for t in test.tasks:
            fit = polyfit_quadratic(t.x[:, 0], t.y[:, 0], intercept)
            xs, ys = eval_points(cfg, t)
            pred = fit(xs)
            errs.append(task_error(ys, pred, "printed"))
            rms.append(task_error(ys, pred, "rms"))
            preds.append(pred)
            zeros.append(fit.constant)
        zv = np.array(zeros) if cfg.family == "noisy_quadratic" else None
        results[name] = Outcome(_report(name, cfg, key, errs, rms), preds, zero_values=zv)
    return results


# ---------------------------------------------------------------------------
# On-disk stages
# ---------------------------------------------------------------------------


class Manifest:
    def __init__(self, directory: Path, stage: str, cfg: ExperimentConfig):
        self.directory = Path(directory)
        self.stage = stage
        self.cfg = cfg
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def add(self, path: Path):
        self.files.append(Path(path).relative_to(self.directory).as_posix())

    def time(self, label: str, seconds: float):
        self.timings[label] = round(seconds, 3)

    def write(self) -> Path:
        self.timings.setdefault("total", round(time.perf_counter() - self._t0, 3))
        return write_json(self.directory / f"manifest_{self.stage}.json", {
            "stage": self.stage,
            "config_fingerprint": self.cfg.fingerprint,
            "library_version": __version__,
            "wall_clock_seconds": self.timings,
            "files": sorted(self.files),
        })


def data_dir(out: Path, m: int, seed: int) -> Path:
    return Path(out) / "data" / f"m{m}_s{seed}"


def cell_dir(out: Path, cell: Cell) -> Path:
    return Path(out) / "cells" / cell.name


def baseline_dir(out: Path, m: int, seed: int) -> Path:
    return Path(out) / "baselines" / f"m{m}_s{seed}"


def _load(out, m, seed, split) -> TaskSet:
    d = data_dir(out, m, seed)
    csv_path, truth_path = d / f"{split}.csv", d / f"{split}_truth.json"
    if not csv_path.exists() or not truth_path.exists():
        raise MissingInputError(f"missing task files in {d}; run gen first")
    return load_taskset(csv_path, truth_path)


def stage_gen(cfg: ExperimentConfig, out: Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    top = Manifest(out, "gen", cfg)
    top.add(write_json(out / "config.json", cfg.to_dict()))
    top.write()
    written = [out / "config.json"]
    for m, seed in cfg.data_keys():
        d = data_dir(out, m, seed)
        man = Manifest(d, "gen", cfg)
        t0 = time.perf_counter()
        for split, ts in (("train", make_train_tasks(cfg, m, seed)), ("test", make_test_tasks(cfg, m, seed))):
            for p in save_taskset(ts, d / f"{split}.csv", d / f"{split}_truth.json"):
                man.add(p)
                written.append(p)
        man.time("generate", time.perf_counter() - t0)
        man.write()
    return written


def stage_train(cfg: ExperimentConfig, out: Path, log=print) -> list[Path]:
    written = []
    cache = {}
    for cell in cfg.cells():
        key = (cell.m_points, cell.seed)
        if key not in cache:
            cache = {key: _load(out, cell.m_points, cell.seed, "train")}
        d = cell_dir(out, cell)
        man = Manifest(d, "train", cfg)
        t0 = time.perf_counter()
        model = train_cell(cfg, cell, cache[key])
        man.time("train", time.perf_counter() - t0)
        man.add(write_json(d / "model.json", model.to_dict()))
        man.add(write_csv(d / "train_loss.csv", ["epoch", "loss"], enumerate(model.train_loss)))
        man.write()
        written.append(d / "model.json")
        log(f"trained {cell.name}: final loss {model.train_loss[-1]:.3e}")
    return written


def _write_outcome(d: Path, man: Manifest, cfg: ExperimentConfig, name: str, res: Outcome, test: TaskSet):
    man.add(write_csv(d / "errors.csv", ErrorReport.COLUMNS, res.report.rows()))
    if res.zero_values is not None:
        man.add(write_csv(d / "zero_values.csv", ["model", "task_id", "value_at_zero"],
                          ((name, i, v) for i, v in enumerate(res.zero_values))))
    if cfg.family == "bond":
        man.add(write_csv(d / "residuals.csv", ["model", "task_id", "maturity_years", "residual"],
                          ((name, *r) for r in res.residuals(cfg, test))))


def stage_recalib(cfg: ExperimentConfig, out: Path, log=print) -> list[Path]:
    out = Path(out)
    written = []
    tests = {}
    for cell in cfg.cells():
        d = cell_dir(out, cell)
        if not (d / "model.json").exists():
            raise MissingInputError(f"missing model for cell {cell.name}; run train first")
        key = (cell.m_points, cell.seed)
        if key not in tests:
            tests = {key: _load(out, cell.m_points, cell.seed, "test")}
        test = tests[key]
        model = PnnModel.from_dict(read_json(d / "model.json"))
        man = Manifest(d, "recalib", cfg)
        t0 = time.perf_counter()
        res = evaluate_pnn(cfg, model, test, cell)
        man.time("recalibrate", time.perf_counter() - t0)
        header = ["task_id", "epoch", "loss"] + [f"p{j}" for j in range(model.l)]
        rows = (
            (i, ep, loss, *res.p_hats[i])
            for i, hist in enumerate(res.histories)
            for ep, loss in enumerate(hist)
        )
        man.add(write_csv(d / "recalib.csv", header, rows))
        _write_outcome(d, man, cfg, "pnn", res, test)
        man.write()
        written.append(d / "errors.csv")
        log(f"recalibrated {cell.name}: e_rms {res.report.e_rms:.4f}")
    if cfg.baselines:
        for m, seed in cfg.data_keys():
            d = baseline_dir(out, m, seed)
            test = _load(out, m, seed, "test")
            man = Manifest(d, "recalib", cfg)
            t0 = time.perf_counter()
            results = evaluate_baselines(cfg, test, m, seed)
            man.time("baselines", time.perf_counter() - t0)
            reports = [r.report for r in results.values()]
            man.add(write_csv(d / "errors.csv", ErrorReport.COLUMNS, (row for r in reports for row in r.rows())))
            zero = [(n, i, v) for n, r in results.items() if r.zero_values is not None
                    for i, v in enumerate(r.zero_values)]
            if zero:
                man.add(write_csv(d / "zero_values.csv", ["model", "task_id", "value_at_zero"], zero))
            if cfg.family == "bond" and "single" in results:
                man.add(write_csv(d / "residuals.csv", ["model", "task_id", "maturity_years", "residual"],
                                  (("single", *r) for r in results["single"].residuals(cfg, test))))
            man.write()
            written.append(d / "errors.csv")
            for r in reports:
                log(f"baseline {r.model} m{m} s{seed}: e_rms {r.e_rms:.4f}")
    return written

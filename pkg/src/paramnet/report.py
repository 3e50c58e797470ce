"""Collects completed runs into tables and plot-ready CSVs."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .experiments import Manifest, MissingInputError, baseline_dir, cell_dir, data_dir
from .metrics import cluster_separation, error_histogram, histogram_rows, neighbor_separation, share_within
from .persist import load_taskset, read_csv, read_json, write_csv
from .pnn import PnnModel, projection_sweep
from .taskgen import family_grid


class IncompleteRunError(MissingInputError):
    def __init__(self, missing: list[str]):
        super().__init__("incomplete run set; missing: " + ", ".join(missing))
        self.missing = missing


def missing_cells(cfg: ExperimentConfig, out: Path) -> list[str]:
    missing = [f"cells/{c.name}" for c in cfg.cells() if not (cell_dir(out, c) / "errors.csv").exists()]
    if cfg.baselines:
        missing += [
            f"baselines/m{m}_s{s}" for m, s in cfg.data_keys()
            if not (baseline_dir(out, m, s) / "errors.csv").exists()
        ]
    return missing


def _aggregates(path: Path):
    for row in read_csv(path):
        if row["task_id"] == "aggregate":
            yield {
                "model": row["model"],
                "n_tasks": int(row["n_tasks"]),
                "m_points": int(row["m_points"]),
                "param_dim": int(row["param_dim"]),
                "seed": int(row["seed"]),
                "e": float(row["e_i"]),
                "e_rms": float(row["e_i_rms"]),
            }


def _mean(vals):
    return float(np.mean(vals)) if vals else float("nan")


def build_report(out: Path, log=print) -> list[Path]:
    out = Path(out)
    if not (out / "config.json").exists():
        raise IncompleteRunError([f"{out}/config.json (no run found)"])
    cfg = ExperimentConfig.from_dict(read_json(out / "config.json"))
    missing = missing_cells(cfg, out)
    if missing:
        raise IncompleteRunError(missing)

    rep = out / "report"
    man = Manifest(rep, "report", cfg)
    records = []
    for c in cfg.cells():
        records += list(_aggregates(cell_dir(out, c) / "errors.csv"))
    if cfg.baselines:
        for m, s in cfg.data_keys():
            records += list(_aggregates(baseline_dir(out, m, s) / "errors.csv"))

    groups = defaultdict(dict)
    for r in records:
        groups[(r["model"], r["n_tasks"], r["m_points"], r["param_dim"])][r["seed"]] = r
    seeds = list(cfg.seeds)

    summary = []
    for (model, n, m, l), by_seed in sorted(groups.items()):
        e = [by_seed[s]["e_rms"] for s in seeds if s in by_seed]
        ep = [by_seed[s]["e"] for s in seeds if s in by_seed]
        summary.append((model, cfg.family, n, m, l, len(e), _mean(e), float(np.std(e)), _mean(ep)))
    man.add(write_csv(rep / "summary.csv", [
        "model", "family", "n_tasks", "m_points", "param_dim", "n_seeds",
        "mean_e_rms", "std_e_rms", "mean_e_printed",
    ], summary))

    # Table-1 shape: points per task down, simple network then task counts across
    def cell_mean(model, n, m, l):
        by_seed = groups.get((model, n, m, l), {})
        return _mean([by_seed[s]["e_rms"] for s in seeds if s in by_seed])

    header = ["param_dim", "points"] + (["simple_network"] if "single" in cfg.baselines else [])
    header += [f"tasks_{n}" for n in cfg.n_train_tasks]
    rows = []
    for l in cfg.param_dim:
        for m in cfg.m_points:
            row = [l, m]
            if "single" in cfg.baselines:
                row.append(cell_mean("single", 0, m, 0))
            row += [cell_mean("pnn", n, m, l) for n in cfg.n_train_tasks]
            rows.append(row)
    man.add(write_csv(rep / "table1.csv", header, rows))

    # error vs parameter dimension, per seed
    sweep = []
    for n in cfg.n_train_tasks:
        for m in cfg.m_points:
            for l in cfg.param_dim:
                by_seed = groups.get(("pnn", n, m, l), {})
                sweep.append(("pnn", n, m, l, cell_mean("pnn", n, m, l),
                              *[by_seed[s]["e_rms"] if s in by_seed else "" for s in seeds]))
            for b in cfg.baselines:
                by_seed = groups.get((b, 0, m, 0), {})
                sweep.append((b, n, m, "", cell_mean(b, 0, m, 0),
                              *[by_seed[s]["e_rms"] if s in by_seed else "" for s in seeds]))
    man.add(write_csv(rep / "param_dim_sweep.csv",
                      ["model", "n_tasks", "m_points", "param_dim", "mean_e_rms"] + [f"seed_{s}" for s in seeds],
                      sweep))

    _figure_data(cfg, out, rep, man)
    man.write()
    log(f"report written to {rep}")
    return [rep / f for f in man.files]


def _figure_data(cfg: ExperimentConfig, out: Path, rep: Path, man: Manifest):
    max_l = max(cfg.param_dim)
    scatter, projection, clusters, convergence = [], [], [], []
    zero_rows, bond_rows = [], []
    trains = {}
    for c in cfg.cells():
        d = cell_dir(out, c)
        model = PnnModel.from_dict(read_json(d / "model.json"))
        key = (c.m_points, c.seed)
        if key not in trains:
            dd = data_dir(out, *key)
            trains = {key: load_taskset(dd / "train.csv", dd / "train_truth.json")}
        train = trains[key]
        labels = [t.truth.params.get("regime", "") for t in train.tasks[:c.n_tasks]]
        for i, p in enumerate(model.params):
            scatter.append((c.name, i, labels[i], *p, *[""] * (max_l - model.l)))

        if model.l and cfg.family != "bond":
            grid = family_grid(cfg.family, cfg.options["grid_points"])
            for coord in range(model.l):
                sw = projection_sweep(model, model.params[0], coord, cfg.options["projection_steps"], grid)
                projection += [(c.name, coord, *r) for r in sw.rows()]

        if cfg.family == "regime" and model.l:
            res = cluster_separation(model.params, labels, seed=c.seed)
            clusters.append((c.name, res.accuracy, res.centroid_distance, neighbor_separation(model.params, labels)))

        hist = defaultdict(list)
        for row in read_csv(d / "recalib.csv"):
            hist[int(row["epoch"])].append(float(row["loss"]))
        convergence += [(c.name, ep, _mean(v)) for ep, v in sorted(hist.items())]

        if (d / "zero_values.csv").exists():
            zero_rows += [(c.name, r["model"], r["task_id"], r["value_at_zero"]) for r in read_csv(d / "zero_values.csv")]

        if cfg.family == "bond":
            res_rows = read_csv(d / "residuals.csv")
            r = np.array([float(x["residual"]) for x in res_rows])
            T = np.array([float(x["maturity_years"]) for x in res_rows])
            split = cfg.options["short_maturity_years"]
            h = error_histogram(r, T, split, cfg.options["histogram_bin_bp"])
            man.add(write_csv(rep / f"histogram_{c.name}.csv", ["group", "bin_left_bp", "count"], histogram_rows(h)))
            bound = cfg.options["error_bound_bp"] * 1e-4
            short = T < split
            first = _mean(hist.get(1, []))
            last = _mean(hist[max(hist)])
            bond_rows.append((
                c.name, int((~short).sum()), share_within(r[~short], bound),
                int(short.sum()), share_within(r[short], bound),
                float(np.percentile(np.abs(r[~short]), 95) * 1e4) if (~short).any() else "",
                float(np.percentile(np.abs(r[short]), 95) * 1e4) if short.any() else "",
                first, last, last / first if first else "",
            ))

    man.add(write_csv(rep / "param_scatter.csv", ["cell", "task_id", "label"] + [f"p{j}" for j in range(max_l)], scatter))
    man.add(write_csv(rep / "recalib_convergence.csv", ["cell", "epoch", "mean_loss"], convergence))
    if projection:
        k1 = 2 if cfg.family == "interdep" else 1
        man.add(write_csv(rep / "projection.csv",
                          ["cell", "coord", "step", "value"] + [f"x{j}" for j in range(k1)] + ["y0"], projection))
    if clusters:
        man.add(write_csv(rep / "clusters.csv", ["cell", "accuracy", "centroid_distance", "neighbor_accuracy"], clusters))
    if cfg.family == "noisy_quadratic":
        for m, s in cfg.data_keys():
            f = baseline_dir(out, m, s) / "zero_values.csv"
            if f.exists():
                zero_rows += [(f"m{m}_s{s}", r["model"], r["task_id"], r["value_at_zero"]) for r in read_csv(f)]
        man.add(write_csv(rep / "zero_crossing.csv", ["source", "model", "task_id", "value_at_zero"], zero_rows))
    if bond_rows:
        man.add(write_csv(rep / "bond_summary.csv", [
            "cell", "n_long", "share_long_within_bound", "n_short", "share_short_within_bound",
            "p95_abs_long_bp", "p95_abs_short_bp", "mean_loss_epoch1", "mean_loss_final", "final_over_epoch1",
        ], bond_rows))


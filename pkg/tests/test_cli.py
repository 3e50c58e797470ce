import json
from pathlib import Path

import numpy as np
import pytest

from paramnet.cli import EXIT_DIVERGED, EXIT_FAIL, EXIT_INVALID, EXIT_MISSING, EXIT_OK, main
from paramnet.config import Cell, ExperimentConfig
from paramnet.experiments import evaluate_pnn, make_train_tasks
from paramnet.persist import read_csv, read_json
from paramnet.pnn import RecalibConfig, predict, train_joint
from paramnet.taskgen import GroundTruth, TaskSample, TaskSet

TINY = {
    "family": "quadratic",
    "n_train_tasks": [3, 5],
    "n_test_tasks": 4,
    "m_points": [3, 4],
    "param_dim": 2,
    "architecture": {"width": 8, "hidden_layers": 2},
    "train": {"epochs": 7, "batch_size": 4},
    "recalib": {"epochs": 3},
    "baselines": ["single", "poly", "poly0"],
    "seeds": [0],
}


def write_cfg(tmp_path, **changes):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TINY, **changes}))
    return str(path)


def files_under(d: Path):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file())


def test_presets_listed(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "smoke" in capsys.readouterr().out.split()


def test_full_run_layout(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", write_cfg(tmp_path), "--out", str(out)]) == EXIT_OK
    cell = out / "cells" / "n5_m4_l2_s0"
    loss = read_csv(cell / "train_loss.csv")
    assert len(loss) == 7
    errs = read_csv(cell / "errors.csv")
    assert len(errs) == 4 + 1 and errs[-1]["task_id"] == "aggregate"
    assert len(read_csv(cell / "recalib.csv")) == 4 * (3 + 1)
    base = read_csv(out / "baselines" / "m3_s0" / "errors.csv")
    assert {r["model"] for r in base} == {"single", "poly", "poly0"}
    table = read_csv(out / "report" / "table1.csv")
    assert len(table) == 2 and list(table[0]) == ["param_dim", "points", "simple_network", "tasks_3", "tasks_5"]
    assert all(float(v) > 0 for r in table for k, v in r.items() if k.startswith(("simple", "tasks")))


def test_manifests_cover_every_file_once(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", write_cfg(tmp_path), "--out", str(out)]) == EXIT_OK
    listed = []
    for man in out.rglob("manifest_*.json"):
        doc = read_json(man)
        assert doc["config_fingerprint"] == ExperimentConfig.from_dict(TINY).fingerprint
        assert "total" in doc["wall_clock_seconds"] and doc["library_version"]
        listed += [(man.parent / f).relative_to(out).as_posix() for f in doc["files"]]
    produced = [f for f in files_under(out) if not Path(f).name.startswith("manifest_")]
    assert sorted(listed) == produced


def test_gen_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    for name in ("a", "b"):
        assert main(["gen", "--config", cfg, "--out", str(tmp_path / name)]) == EXIT_OK
    fa = [f for f in files_under(tmp_path / "a") if "manifest" not in f]
    assert fa == [f for f in files_under(tmp_path / "b") if "manifest" not in f]
    for f in fa:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_bond_has_19_inputs(tmp_path):
    cfg = write_cfg(tmp_path, family="bond", m_points=6, baselines=[], n_test_tasks=2)
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    header = (tmp_path / "o" / "data" / "m6_s0" / "train.csv").read_text().splitlines()[0].split(",")
    assert sum(h.startswith("x") for h in header) == 19 and header[-1] == "y0"


def test_seed_override(tmp_path):
    out = tmp_path / "o"
    assert main(["gen", "--config", write_cfg(tmp_path, seeds=[0, 1, 2]), "--out", str(out), "--seed", "7"]) == EXIT_OK
    assert sorted(p.name for p in (out / "data").iterdir()) == ["m3_s7", "m4_s7"]


def test_invalid_config_exit(tmp_path, capsys):
    assert main(["gen", "--config", write_cfg(tmp_path, epochz=3), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "epochz" in capsys.readouterr().err
    assert main(["gen", "--config", write_cfg(tmp_path)]) == EXIT_INVALID


def test_missing_inputs_exit(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_MISSING
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert main(["recalib", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_MISSING
    assert main(["train", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == EXIT_MISSING


def test_report_lists_missing_cells(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path / "empty")]) == EXIT_MISSING
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "o")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", "--out", out]) == EXIT_MISSING
    err = capsys.readouterr().err
    assert "cells/n3_m3_l2_s0" in err and "baselines/m4_s0" in err


def test_divergence_exit(tmp_path):
    cfg = write_cfg(tmp_path, train={"epochs": 50, "batch_size": 4, "initial_rate": 1e12, "decay_factor": 1.0},
                    baselines=[])
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_DIVERGED


def test_gradcheck_exit_codes(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path), "--models", "3"]) == EXIT_OK
    rows = read_csv(tmp_path / "gradcheck.csv")
    assert len(rows) == 3 and all(r["passed"] == "1" for r in rows)
    assert main(["gradcheck", "--out", str(tmp_path), "--models", "3", "--tol", "1e-30"]) == EXIT_FAIL


def test_param_dim_sweep_per_seed(tmp_path):
    cfg = write_cfg(tmp_path, n_train_tasks=3, m_points=3, param_dim=[0, 1], seeds=list(range(8)),
                    baselines=[], train={"epochs": 2})
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "report" / "param_dim_sweep.csv")
    assert [r["param_dim"] for r in rows] == ["0", "1"]
    for r in rows:
        per_seed = [float(r[f"seed_{s}"]) for s in range(8)]
        assert np.isclose(float(r["mean_e_rms"]), np.mean(per_seed), rtol=1e-12)


def test_zero_epoch_given_recovers_own_curve():
    # targets produced by the trained model itself at p_i; GIVEN(p_i) with no epochs must reproduce them
    cfg = ExperimentConfig.from_dict(TINY)
    train = make_train_tasks(cfg, 3, 0, 3)
    model = train_joint(train, cfg.arch, 2, cfg.train)
    for i in range(3):
        rc = ExperimentConfig.from_dict({**TINY, "recalib": {"epochs": 0, "init": "given",
                                                              "given": list(model.params[i])}})
        assert rc.recalib == RecalibConfig(epochs=0, init="given", given=tuple(model.params[i]))
        res = evaluate_pnn(rc, model, _self_generated(model, train.tasks[i], i), Cell(3, 3, 2, 0))
        assert len(res.report.errors) == 1 and res.report.errors[0] < 1e-6 and res.report.e_rms < 1e-6


def _self_generated(model, task, i):
    class Own(GroundTruth):
        def evaluate(self, x):
            return predict(model, x, model.params[i])

    truth = Own(task.truth.family, task.truth.params)
    return TaskSet("quadratic", [TaskSample(task.x, truth.evaluate(task.x), truth)], {})


def test_regime_report_has_clusters(tmp_path):
    cfg = write_cfg(tmp_path, family="regime", n_train_tasks=12, m_points=4, baselines=[], n_test_tasks=3)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "report" / "clusters.csv")
    assert len(rows) == 1 and 0.5 <= float(rows[0]["accuracy"]) <= 1.0
    assert 0.0 <= float(rows[0]["neighbor_accuracy"]) <= 1.0
    scatter = read_csv(out / "report" / "param_scatter.csv")
    assert len(scatter) == 12 and {r["label"] for r in scatter} <= {"1", "2"}

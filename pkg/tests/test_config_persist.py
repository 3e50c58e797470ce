import json

import numpy as np
import pytest

from paramnet.config import ConfigError, ExperimentConfig, load_config, preset_names
from paramnet.persist import load_taskset, read_csv, save_taskset, taskset_from_dict, taskset_to_dict, write_csv
from paramnet.taskgen import gen_bond, gen_interdep, gen_quadratic

BASE = {"family": "quadratic", "n_train_tasks": 10, "m_points": 3, "param_dim": 2}


def test_defaults_follow_protocol():
    cfg = ExperimentConfig.from_dict(BASE)
    assert cfg.n_test_tasks == 250 and cfg.options["grid_points"] == 100
    assert (cfg.recalib.epochs, cfg.recalib.batch_size, cfg.recalib.rate, cfg.recalib.init) == (100, 10, 0.01, "mean")
    assert cfg.train.epochs == 8000 and cfg.arch.hidden_layers == 3 and cfg.arch.width == 32


@pytest.mark.parametrize("doc", [
    {**BASE, "epochs": 5},
    {**BASE, "train": {"epoch": 5}},
    {**BASE, "recalib": {"lr": 0.1}},
    {**BASE, "architecture": {"depth": 2}},
    {**BASE, "family": "cubic"},
    {**BASE, "m_points": [3, "4"]},
    {**BASE, "baselines": ["ridge"]},
    {**BASE, "family": "bond", "baselines": ["poly"]},
    {**BASE, "family": "interdep", "m_points": 4},
    {**BASE, "tau_reading": "other"},
    {**BASE, "train": {"epochs": 0}},
    {**BASE, "recalib": {"init": "given"}},
])
def test_invalid_configs_rejected(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_fingerprint_tracks_meaningful_fields():
    a = ExperimentConfig.from_dict(BASE)
    assert a.fingerprint == ExperimentConfig.from_dict(dict(BASE)).fingerprint
    assert a.fingerprint == a.with_overrides(output_dir="/tmp/x").fingerprint
    assert a.fingerprint == ExperimentConfig.from_dict({**BASE, "description": "hi"}).fingerprint
    for change in ({"param_dim": 3}, {"seeds": [1]}, {"train": {"epochs": 10}}, {"noise_sigma": 0.2},
                   {"recalib": {"rate": 0.001}}, {"architecture": {"width": 16}}):
        assert ExperimentConfig.from_dict({**BASE, **change}).fingerprint != a.fingerprint


def test_cells_are_the_product():
    cfg = ExperimentConfig.from_dict({**BASE, "n_train_tasks": [10, 20], "m_points": [3, 4], "seeds": [0, 1, 2]})
    cells = list(cfg.cells())
    assert len(cells) == 12 and cells[0].name == "n10_m3_l2_s0"
    assert len(cfg.data_keys()) == 6


def test_all_presets_load():
    names = preset_names()
    assert {"smoke", "table1_desk", "bond_desk", "bond_paper"} <= set(names)
    for name in names:
        load_config(f"preset:{name}")


def test_bond_presets():
    desk = load_config("preset:bond_desk")
    assert (desk.arch.hidden_layers, desk.arch.width) == (3, 64)
    assert desk.train.batch_size == 1000 and desk.recalib.epochs == 15 and desk.recalib.batch_size == 10
    assert desk.n_train_tasks == (100,) and desk.m_points == (300,) and desk.train.epochs == 4000
    paper = load_config("preset:bond_paper")
    assert paper.m_points == (600,) and paper.train.schedule.initial_rate == 0.001
    assert paper.train.schedule.decay_factor == 0.99


def test_load_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


@pytest.mark.parametrize("ts", [gen_quadratic(5, 3, 0), gen_interdep(4, 1), gen_bond(2, 10, 0)],
                         ids=["quadratic", "interdep", "bond"])
def test_taskset_csv_roundtrip(tmp_path, ts):
    save_taskset(ts, tmp_path / "t.csv", tmp_path / "t.json")
    back = load_taskset(tmp_path / "t.csv", tmp_path / "t.json")
    assert back.family == ts.family and len(back) == len(ts)
    for a, b in zip(ts.tasks, back.tasks):
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        assert a.truth == b.truth
    header = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 2 + ts.k1 + ts.k2


def test_taskset_dict_roundtrip():
    ts = gen_quadratic(3, 4, 2)
    back = taskset_from_dict(json.loads(json.dumps(taskset_to_dict(ts))))
    assert all(np.array_equal(a.y, b.y) for a, b in zip(ts.tasks, back.tasks))


def test_csv_floats_exact(tmp_path):
    vals = [0.1, 1 / 3, 2.0**-40, 1e300]
    write_csv(tmp_path / "f.csv", ["v"], [(v,) for v in vals])
    assert [float(r["v"]) for r in read_csv(tmp_path / "f.csv")] == vals

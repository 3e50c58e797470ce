"""CSV/JSON reading and writing for task sets, models and result tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .taskgen import GroundTruth, TaskSample, TaskSet


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def taskset_header(k1: int, k2: int) -> list[str]:
    return ["task_id", "sample_id"] + [f"x{i}" for i in range(k1)] + [f"y{i}" for i in range(k2)]


def save_taskset(ts: TaskSet, csv_path, truth_path) -> tuple[Path, Path]:
    """Samples to CSV, ground truth and metadata to a JSON sidecar."""
    rows = (
        (i, j, *t.x[j], *t.y[j])
        for i, t in enumerate(ts.tasks)
        for j in range(t.m)
    )
    a = write_csv(csv_path, taskset_header(ts.k1, ts.k2), rows)
    b = write_json(truth_path, {
        "family": ts.family,
        "meta": ts.meta,
        "k1": ts.k1,
        "k2": ts.k2,
        "truth": [t.truth.to_dict() for t in ts.tasks],
    })
    return a, b


def load_taskset(csv_path, truth_path) -> TaskSet:
    side = read_json(truth_path)
    k1, k2 = side["k1"], side["k2"]
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    tasks = []
    for i, truth in enumerate(side["truth"]):
        rows = data[data[:, 0] == i]
        rows = rows[np.argsort(rows[:, 1], kind="stable")]
        x = rows[:, 2:2 + k1]
        y = rows[:, 2 + k1:2 + k1 + k2]
        tasks.append(TaskSample(x.copy(), y.copy(), GroundTruth.from_dict(truth)))
    return TaskSet(side["family"], tasks, side["meta"])


def taskset_to_dict(ts: TaskSet) -> dict:
    return {
        "family": ts.family,
        "meta": ts.meta,
        "tasks": [
            {"x": t.x.tolist(), "y": t.y.tolist(), "truth": t.truth.to_dict()} for t in ts.tasks
        ],
    }


def taskset_from_dict(doc) -> TaskSet:
    tasks = [
        TaskSample(
            np.asarray(t["x"], dtype=np.float64),
            np.asarray(t["y"], dtype=np.float64),
            GroundTruth.from_dict(t["truth"]),
        )
        for t in doc["tasks"]
    ]
    return TaskSet(doc["family"], tasks, doc["meta"])

import csv

import numpy as np
import orjson
import pytest

from analysis.estimators import direct_estimate
from analysis.results_logger import (
    SausageLogger,
    SurvivalLogger,
    dump_cloud,
    dump_paths,
    read_survival_csv,
    write_json,
)
from core.models import PointCloud, Region, SurvivalCurve
from core.paths import PathBatch


def _curve():
    points = (direct_estimate(90, 100), direct_estimate(40, 100), direct_estimate(5, 100))
    return SurvivalCurve((1.0, 2.0, 4.0), points, "isolation")


def test_survival_csv(tmp_path):
    path = tmp_path / "survival.csv"
    SurvivalLogger(path).log_curve(_curve())
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "estimate", "ci_lo", "ci_hi", "n", "method"]
    assert len(rows) == 4
    back = read_survival_csv(path, "isolation")
    assert back.t_grid == (1.0, 2.0, 4.0)
    assert back.values.tolist() == pytest.approx([0.9, 0.4, 0.05])
    assert back.stderrs[1] == pytest.approx(np.sqrt(0.4 * 0.6 / 100))


def test_logger_appends_when_not_fresh(tmp_path):
    path = tmp_path / "sausage.csv"
    SausageLogger(path).log_estimate(2, 1.0, 1.0, direct_estimate(1, 4, scale=10.0))
    SausageLogger(path, fresh=False).log_estimate(2, 1.0, 2.0, direct_estimate(2, 4, scale=10.0))
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[2].split(",")[3] == "5"


def test_read_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,estimate\n1,0.5\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_survival_csv(path)


def test_write_json_numpy(tmp_path):
    path = write_json(tmp_path / "out" / "doc.json", {"a": np.arange(3), "est": direct_estimate(1, 2), "p": tmp_path})
    doc = orjson.loads(path.read_bytes())
    assert doc["a"] == [0, 1, 2]
    assert doc["est"]["n"] == 2
    assert doc["p"] == str(tmp_path)


def test_dump_cloud(tmp_path):
    cloud = PointCloud(2, np.array([[0.5, -1.0]]), Region.ball(2.0, 2), 1.0)
    path = tmp_path / "cloud.csv"
    dump_cloud(path, cloud)
    assert path.read_text().splitlines() == ["node_id,x_1,x_2", "0,0.500000,-1.000000"]


def test_dump_paths(tmp_path):
    disp = np.array([[[0.0], [0.5]], [[0.0], [-1.0]]])
    batch = PathBatch(np.array([3, 7]), np.array([[1.0], [2.0]]), np.array([0.0, 1.0]), disp)
    path = tmp_path / "paths.csv"
    dump_paths(path, batch)
    assert path.read_text().splitlines() == [
        "node_id,t,x_1",
        "3,0.000000,1.000000",
        "3,1.000000,1.500000",
        "7,0.000000,2.000000",
        "7,1.000000,1.000000",
    ]

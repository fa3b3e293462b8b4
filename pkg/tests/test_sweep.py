import numpy as np
import pytest
from dataclasses import replace

from isinglab.errors import ParameterError
from isinglab.sweep import (PipelineConfig, SweepConfig, loglog_slope, replica_seed, run_pipeline,
                            run_sweep, write_sweep_csv)

SMALL = PipelineConfig(L=5, g=0.3, n_updates=2e4, methods=("nmf", "tap"), burn_in=5.0)


def test_single_point_sweep_equals_pipeline():
    sc = SweepConfig("field", [0.1], SMALL, replicas=1, seed=3)
    rows, cells = run_sweep(sc)
    s = replica_seed(3, 0)
    direct = run_pipeline(replace(SMALL, theta=0.1, model_seed=s, sim_seed=s + 1))
    assert rows[0].mse_mean == direct["mse"]["nmf"]
    assert rows[1].mse_mean == direct["mse"]["tap"]
    assert cells[0]["mse"] == direct["mse"]


def test_size_axis_scales_length():
    cells = SweepConfig("size", [4, 8], SMALL).cells()
    assert [c.n_updates for c in cells] == [2e6, 4e6]
    assert [c.L for c in cells] == [4, 8]


def test_sweep_parallel_order_independent():
    sc = SweepConfig("g", [0.2, 0.4], SMALL, replicas=2, seed=1)
    a, _ = run_sweep(sc, workers=1)
    b, _ = run_sweep(sc, workers=2)
    assert [(r.value, r.method, r.mse_mean) for r in a] == [(r.value, r.method, r.mse_mean) for r in b]
    assert all(r.n_ok == 2 and np.isfinite(r.mse_stderr) for r in a)


def test_sweep_csv(tmp_path):
    rows, _ = run_sweep(SweepConfig("data-length", [1e4], SMALL))
    p = tmp_path / "s.csv"
    write_sweep_csv(p, "data-length", rows)
    lines = p.read_text().splitlines()
    assert lines[0] == "data-length,method,mse_mean,mse_stderr,n_ok,n_failed"
    assert lines[1].startswith("10000,nmf,")


def test_sweep_validation():
    with pytest.raises(ParameterError):
        SweepConfig("temperature", [1.0])
    with pytest.raises(ParameterError):
        SweepConfig("g", [], SMALL)
    with pytest.raises(ParameterError):
        PipelineConfig(methods=("magic",))


def test_loglog_slope():
    x = np.array([1e5, 1e6, 1e7])
    assert loglog_slope(x, 3.0 / x) == pytest.approx(-1.0)

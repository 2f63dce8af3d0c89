import json
import os
from pathlib import Path

import numpy as np
import pytest

import h2market

DATA = Path(os.environ.get("H2M_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))


def test_validate_shipped_instance():
    result = h2market.validate(str(DATA / "coupled_network.yaml"), str(DATA / "coupled_scenario.yaml"))
    assert result["ok"]


def test_validate_reports_cycle():
    result = h2market.validate(str(DATA / "cyclic_network.yaml"))
    assert not result["ok"]
    assert any(i["code"] == "cycle detected" for i in result["issues"])


def test_bad_weights_raise():
    with pytest.raises(h2market.InputError, match="scenario weights"):
        h2market.validate(str(DATA / "cournot_network.yaml"), str(DATA / "bad_weights_scenario.yaml"))


def test_steady_simulation_is_constant():
    out = h2market.simulate(str(DATA / "steady_network.yaml"), str(DATA / "steady_boundary.yaml"))
    pipe = out["pipes"]["link"]
    assert np.max(np.abs(pipe["p"] - 5.0e6)) <= 1e-12 * 5.0e6
    assert np.max(np.abs(pipe["q"] - 2.5)) <= 1e-12 * 5.0e6
    assert out["t"][-1] == 3600.0


def test_cournot_duopoly():
    out = h2market.solve(str(DATA / "cournot_network.yaml"), str(DATA / "cournot_scenario.yaml"))
    assert out["certified"]
    for d in out["decisions"]:
        assert np.max(np.abs(d["s"] - 3.0)) <= 1e-6
    assert json.loads(out["report"])["schema"] == "h2market.report/1"
    assert h2market.cournot_sales(2, 10.0, 1.0, 1.0) == 3.0


def test_methods_agree():
    gs = h2market.solve(str(DATA / "cournot_network.yaml"), str(DATA / "cournot_scenario.yaml"), method="gs")
    eg = h2market.solve(str(DATA / "cournot_network.yaml"), str(DATA / "cournot_scenario.yaml"), method="eg")
    for a, b in zip(gs["decisions"], eg["decisions"]):
        assert np.max(np.abs(a["s"] - b["s"])) <= 1e-4


def test_oracles_pass():
    results = h2market.oracle("all")
    assert [r["suite"] for r in results] == ["ptdf-tree", "cournot", "manufactured", "coercivity"]
    assert all(r["pass"] for r in results)


def test_convergence_order():
    rows = h2market.convergence_study([8, 16, 32])
    assert min(r["order"] for r in rows[1:]) >= 1.9


def test_emit_round_trips_through_validate(tmp_path):
    path = tmp_path / "net.yaml"
    path.write_text(h2market.emit_network(str(DATA / "coupled_network.yaml")))
    assert h2market.validate(str(path))["ok"]

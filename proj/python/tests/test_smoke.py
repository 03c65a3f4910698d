import math

import numpy as np
import pytest

import slowfast


def test_systems_listed():
    assert set(slowfast.systems()) == {"L1", "Q1", "L2", "VDP-cut", "NF1"}


def test_certify_l1():
    doc = slowfast.certify("L1", eps=0.1)
    assert doc["existence_ok"]
    assert doc["certificate"]["fields"]["K"]["value"] == 1.0
    names = {row["name"] for row in doc["hypotheses"]}
    assert {"H1", "H2", "H3"} <= names


def test_infeasible_override_is_reported():
    doc = slowfast.certify("L1", overrides={"N1": 10.0})
    assert not doc["existence_ok"]
    assert doc["certificate"]["fields"]["N1"]["provenance"] == "supplied"


def test_slow_manifold_l1_matches_closed_form():
    out = slowfast.slow_manifold("L1", eps=0.1, grid=21, derivative=1)
    y, h = out["y"][:, 0], out["h"][:, 0]
    assert np.max(np.abs(h - (y - 0.1))) <= 1e-6
    assert all(abs(d[0, 0] - 1.0) <= 1e-6 for d in out["Dh"])
    assert out["measured_ratio"] <= out["theoretical_ratio"] * 1.05


def test_reduce_l2():
    out = slowfast.reduce("L2", np.array([1.0]), np.array([0.0]))
    assert out["P"][0] == pytest.approx(0.1, rel=1e-6)
    assert abs(out["Q"][0]) / 1.0 <= 1.05 * out["e_bound"]
    assert out["semiconjugacy_residual"] <= 1e-5


def test_fit_exponential():
    t = np.linspace(0.0, 5.0, 40)
    fit = slowfast.fit_exponential(list(t), list(3.0 * np.exp(-2.0 * t)))
    assert fit["rate"] == pytest.approx(2.0, rel=1e-9)
    assert fit["prefactor"] == pytest.approx(3.0, rel=1e-9)


def test_errors_carry_codes():
    with pytest.raises(slowfast.SlowfastError) as info:
        slowfast.run_scenario({"system": "L1", "bogus": 1})
    assert slowfast.error_code(info.value) == "usage"
    with pytest.raises(slowfast.SlowfastError) as info:
        slowfast.reduce("L2", np.array([1.0, 2.0]), np.array([0.0]))
    assert slowfast.error_code(info.value) == "usage"


def test_run_scenario_l2():
    report = slowfast.run_scenario({"system": "L2", "seed": 3})
    assert report["passed"]
    assert report["failed_checks"] == []
    stages = [s["name"] for s in report["stages"]]
    assert stages[:2] == ["certify", "lp_solve"]
    assert math.isfinite(report["certificate"]["fields"]["mu"]["value"])

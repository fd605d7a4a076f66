import math

import numpy as np
import pytest

from dichotomy.errors import HypothesisFailure, InvariantFailure, OrbitLeavesTube
from dichotomy.nhim import (
    NHIMParams,
    ambient_flow,
    build_base,
    center_orbit_point,
    center_stable_persist,
    check_base,
    strong_foliation_leaf,
    tracking_check,
    trichotomy_persist,
)
from dichotomy.problems import instantiate


@pytest.fixture(scope="module")
def circle():
    d = instantiate("nhim_circle", {"eta": 1e-2})
    base = build_base(d, 64)
    tg = trichotomy_persist(d, base, NHIMParams())
    return d, base, tg


def _on_cs(tg, theta, rho):
    w = np.array([theta, rho, 0.0])
    w[2] = tg.h_cs.graph(0)(w[None, :2])[0, 0]
    return w


def test_base_report_for_unit_circle():
    d = instantiate("nhim_circle")
    b = build_base(d, 64)
    rep = b.report
    assert rep["projection_defect"] <= 1e-12
    assert rep["chi_eps1"] < 0.25
    assert b.chi(0.05) <= b.chi(0.1) <= b.chi(0.2)
    # secant deviation of a unit circle grows roughly like eps
    assert 0.5 * 0.1 <= b.chi(0.1) <= 1.5 * 0.1


def test_swapped_projections_fail_h1():
    d = instantiate("nhim_circle")
    with pytest.raises(InvariantFailure) as exc:
        build_base(d, 64, swap_sc=True)
    assert exc.value.which == "H1"
    b = build_base(d, 64, swap_sc=True, check=False)
    rep = check_base(b, raise_on_fail=False)
    assert not rep["passed"] and any(f.startswith("H1") for f in rep["failures"])


def test_ambient_flow_preserves_unperturbed_circle():
    d = instantiate("nhim_circle", {"eta": 0.0})
    b = build_base(d, 16)
    out = ambient_flow(d.oracle["ambient_field"], 1.3, b.samples)
    assert np.max(np.abs(np.hypot(out[:, 0], out[:, 1]) - 1.0)) <= 1e-9
    assert np.max(np.abs(out[:, 2])) <= 1e-12


def test_center_manifold_matches_oracle(circle):
    d, base, tg = circle
    th = np.linspace(0, 2 * np.pi, 500)
    c = tg.center(th)
    assert np.max(np.abs(c[:, 1] - d.oracle["center_z"](th))) <= 5e-4
    assert np.max(np.abs(c[:, 0])) <= 5e-4
    assert all(v <= 1e-9 for v in tg.residuals.values())


def test_center_node_is_on_two_point_orbit(circle):
    d, base, tg = circle
    pt = center_orbit_point(tg, 1.0)
    np.testing.assert_allclose(pt, tg.center(np.array([1.0]))[0], atol=1e-7)


def test_gates_recorded(circle):
    *_, tg = circle
    for name in ("A2", "A3a", "B3", "eta", "chi"):
        assert tg.gates[name]["passed"]


def test_tracking_rate(circle):
    d, base, tg = circle
    rep = tracking_check(d, tg, _on_cs(tg, 0.3, 0.1))
    assert rep.within
    assert rep.fitted_rate == pytest.approx(math.exp(-2.0), rel=0.05)
    assert rep.to_dict()["relative_error"] <= 0.05


def test_tracking_rejects_off_manifold_start(circle):
    d, base, tg = circle
    w = _on_cs(tg, 0.3, 0.1)
    w[2] += 0.01
    with pytest.raises(OrbitLeavesTube):
        tracking_check(d, tg, w)


def test_strong_leaf_is_transverse_and_decays(circle):
    d, base, tg = circle
    leaf = strong_foliation_leaf(d, tg, _on_cs(tg, 0.5, 0.0))
    t = leaf.tangent[0] / np.linalg.norm(leaf.tangent[0])
    assert abs(t[1]) >= 0.99
    assert leaf.fiber.fitted_rate == pytest.approx(math.exp(-2.0), rel=0.05)


def test_sheared_circle_tracking():
    d = instantiate("nhim_circle", {"eta": 1e-2, "shear": 0.3, "nu": 0.5})
    tg = trichotomy_persist(d, build_base(d, 64), NHIMParams())
    rep = tracking_check(d, tg, _on_cs(tg, 0.3, 0.1))
    assert rep.within


def test_attracting_variant():
    d = instantiate("nhim_circle", {"eta": 1e-2, "variant": "attracting"})
    b = build_base(d, 64)
    with pytest.raises(HypothesisFailure):
        trichotomy_persist(d, b)
    cs = center_stable_persist(d, b)
    assert np.all(cs.family.values.size == 0 or cs.family.values == 0)
    leaf = strong_foliation_leaf(d, None, np.array([0.5, 0.05, 0.0]))
    assert leaf.fiber.fitted_rate == pytest.approx(math.exp(-2.0), rel=0.05)


def test_exports(tmp_path, circle):
    d, base, tg = circle
    lines = tg.to_csv(tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "theta,r,z" and len(lines) == 65
    assert base.to_csv(tmp_path / "b.csv").exists()

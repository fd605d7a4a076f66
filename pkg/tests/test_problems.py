import math

import numpy as np
import pytest

from dichotomy.cocycles import problem_certificate
from dichotomy.errors import ParamOutOfRange, UnknownProblem
from dichotomy.problems import catalog, instantiate
from dichotomy.solver import solve_two_point, wellposed_cocycle_eval
from dichotomy.splitting import check_invariants

IDS = ["scalar_saddle", "elliptic_cylinder", "spatial_rd", "nonauto_scalar", "nhim_circle", "boussinesq_trunc"]


def test_catalog_ids():
    assert [e["id"] for e in catalog()] == IDS


def test_unknown_and_out_of_range():
    with pytest.raises(UnknownProblem):
        instantiate("mixed_delay")
    with pytest.raises(ParamOutOfRange):
        instantiate("scalar_saddle", {"radius": 2.0})
    with pytest.raises(ParamOutOfRange):
        instantiate("scalar_saddle", {"bogus": 1})
    with pytest.raises(ParamOutOfRange):
        instantiate("nhim_circle", {"variant": "repelling"})


@pytest.mark.parametrize("pid", IDS)
def test_every_problem_certifies_and_splits(pid):
    d = instantiate(pid)
    p = d.to_problem()
    inv = check_invariants(p.splitting, d.generator)
    assert inv["idempotency"] <= 1e-10 and inv["leak_xy"] <= 1e-9 and inv["leak_yx"] <= 1e-9
    assert inv["rate_excess"] <= 1e-8
    cert = problem_certificate(p)
    assert cert.gap_sigma > 0


@pytest.mark.parametrize("pid", IDS)
def test_nonlinearity_lipschitz_within_declared_eps(pid):
    d = instantiate(pid)
    rng = np.random.default_rng(0)
    n = d.generator.shape[0]
    r = d.sample_radius
    z1 = rng.uniform(-r, r, (1000, n))
    z2 = z1 + rng.normal(0, 1e-3 * r, (1000, n))
    w = rng.uniform(0, 2 * np.pi, (1000,))
    g1 = np.asarray(d.nonlinearity(w, z1))
    g2 = np.asarray(d.nonlinearity(w, z2))
    assert np.all(np.isfinite(g1))
    lip = np.max(np.linalg.norm(g1 - g2, axis=1) / np.linalg.norm(z1 - z2, axis=1))
    assert lip <= d.eps * 1.05


def test_scalar_saddle_eps_on_ball():
    d = instantiate("scalar_saddle")
    np.testing.assert_array_equal(d.generator, np.diag([1.0, -1.0]))
    assert d.eps_split == (1.0, 0.0)  # 2 * 0.5 for x^2 on |x| <= 0.5
    d = instantiate("scalar_saddle", {"radius": 0.3})
    assert d.eps_split[0] == pytest.approx(0.6)


def test_elliptic_mode_rates():
    d = instantiate("elliptic_cylinder", {"n_modes": 3})
    for k, r in enumerate(d.mode_rates(), start=1):
        np.testing.assert_allclose(r.real, [-k * np.pi, k * np.pi], rtol=1e-13)
        np.testing.assert_allclose(r.imag, 0.0, atol=1e-13)


@pytest.mark.parametrize("pid,key", [("elliptic_cylinder", "n_modes"), ("boussinesq_trunc", "n_modes"), ("spatial_rd", "n_modes")])
def test_truncation_consistency(pid, key):
    d1 = instantiate(pid, {key: 3})
    d2 = instantiate(pid, {key: 6})
    e1 = np.sort_complex(np.linalg.eigvals(d1.generator))
    e2 = np.sort_complex(np.linalg.eigvals(d2.generator))
    # every retained eigenvalue reappears in the doubled truncation
    for v in e1:
        assert np.min(np.abs(e2 - v)) <= 1e-10 * max(1.0, abs(v))


def test_boussinesq_classification():
    d = instantiate("boussinesq_trunc", {"n_modes": 3, "alpha": 0.2})
    assert d.truncation["hyperbolic_modes"] == [3]
    assert d.truncation["center_modes"] == [1, 2]
    s = d.splitting()
    assert s.dim_y == 1 and abs(s.mu_s) <= 1e-12
    lam = 0.2 * 81 - 9
    assert s.mu_u == pytest.approx(math.sqrt(lam), rel=1e-12)


def test_nonauto_constant_driver_is_autonomous():
    d0 = instantiate("nonauto_scalar", {"amp": 0.0})
    p0 = d0.to_problem()
    z = np.array([0.2, -0.1])
    a = wellposed_cocycle_eval(p0, 1.3, 0.7, z, grid_n=1000)
    b = wellposed_cocycle_eval(p0, 1.3, 0.0, z, grid_n=1000)
    np.testing.assert_allclose(a, b, atol=1e-14)
    tr0 = solve_two_point(p0, [0.1], [0.1], 0.0, 1.0, grid_n=200, omega=2.0)
    tr1 = solve_two_point(p0, [0.1], [0.1], 0.0, 1.0, grid_n=200, omega=0.0)
    np.testing.assert_allclose(tr0.x, tr1.x, atol=1e-14)


def test_saddle_oracles_solve_invariance_equations():
    # unstable graph y = h(x) along x' = x + c h^2:  h'(x) (x + c h^2) = -h + x^2
    for c in (0.0, 0.5):
        d = instantiate("scalar_saddle", {"c": c})
        h = d.oracle["unstable_manifold"]
        x = np.linspace(-0.2, 0.2, 401)
        dh = np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(d.oracle["unstable_series"]))
        res = dh * (x + c * h(x) ** 2) - (-h(x) + x**2)
        assert np.max(np.abs(res)) <= 1e-10
    d = instantiate("scalar_saddle")
    x = np.linspace(-0.5, 0.5, 11)
    np.testing.assert_allclose(d.oracle["unstable_manifold"](x), x**2 / 3, atol=1e-15)


def test_circle_oracle_solves_cohomological_equation():
    d = instantiate("nhim_circle", {"eta": 1e-2})
    th = np.linspace(0, 2 * np.pi, 200)
    z = d.oracle["center_z"]
    dz = np.gradient(z(th), th, edge_order=2)
    exact_dz = 1e-2 * (np.cos(th) + 4 * np.sin(th)) / 17
    np.testing.assert_allclose(dz, exact_dz, atol=1e-5)
    assert np.max(np.abs(exact_dz - (4 * z(th) + 1e-2 * np.cos(th)))) <= 1e-15


def test_circle_coordinates_round_trip():
    d = instantiate("nhim_circle")
    w = np.array([[0.3, 0.1, -0.05], [2.0, -0.2, 0.1]])
    np.testing.assert_allclose(d.oracle["to_tubular"](d.oracle["to_ambient"](w)), w, atol=1e-15)


def test_summary_is_plain():
    s = instantiate("spatial_rd").summary()
    assert s["id"] == "spatial_rd" and s["dim"] == 18

import numpy as np
import pytest

from dichotomy.certificates import ABConstants, gap_certificate
from dichotomy.cocycles import orbit_cocycle, orbit_consistency, orbit_problem, problem_certificate, problem_cocycle
from dichotomy.correspondence import dual, linear_correspondence
from dichotomy.errors import AngleConditionViolated, DomainEscape, GridTooCoarse, OrbitInconsistent, SpectralConditionViolated
from dichotomy.graphs import (
    Graph,
    GraphFamily,
    Grid,
    SampledCocycle,
    SectionSpec,
    dual_certificate,
    dual_cocycle,
    invariance_residual,
    invariant_graph,
    local_stable_graph,
    pullback_graph_step,
    smoothness_probe,
    strong_stable_fiber,
)
from dichotomy.problems import instantiate
from dichotomy.solver import solve_two_point

C = ABConstants(0.5, 0.5, 0.5, 0.5, 0.5, 0.5)



def test_grid_interpolation_and_periodic_wrap():
    g = Grid((0.0, -1.0), (2 * np.pi, 1.0), (32, 5), (True, False))
    vals = np.sin(g.points()[:, :1]) + g.points()[:, 1:]
    q = np.array([[2 * np.pi + 0.1, 0.3], [-0.1, 0.0]])
    out, esc = g.interpolate(vals, q)
    assert not esc
    np.testing.assert_allclose(out[:, 0], np.sin(q[:, 0]) + q[:, 1], atol=0.02)
    _, esc = g.interpolate(vals, np.array([[0.0, 1.5]]))
    assert esc


def test_pullback_zero_graph():
    h = linear_correspondence(0.3, 0.0, 0.0, 0.4)
    grid = Grid.ball(1.0, 1, 11)
    f1, xm = pullback_graph_step(h, Graph(grid, np.zeros((11, 1))), C)
    np.testing.assert_array_equal(f1, 0.0)
    np.testing.assert_allclose(xm, 0.3 * grid.points(), atol=1e-15)


def test_pullback_constant_graph_closed_form():
    ls, lu, a, c = 0.3, 0.4, 0.2, 0.5
    h = linear_correspondence(ls, a, 0.0, lu)
    grid = Grid.ball(1.0, 1, 11)
    f1, xm = pullback_graph_step(h, Graph(grid, np.full((11, 1), c)), C)
    np.testing.assert_allclose(xm, ls * grid.points() + a * c, atol=1e-15)
    np.testing.assert_allclose(f1, lu * c, atol=1e-15)


def test_pullback_errors():
    h = linear_correspondence(0.3, 1.0, 0.0, 0.4)
    grid = Grid.ball(1.0, 1, 11)
    with pytest.raises(AngleConditionViolated):
        pullback_graph_step(h, Graph(grid, grid.points().copy()), ABConstants(2.0, 2.0, 0.9, 0.9, 0.5, 0.5))
    big = linear_correspondence(2.0, 0.0, 0.0, 0.4)
    with pytest.raises(DomainEscape):
        pullback_graph_step(big, Graph(grid, np.zeros((11, 1))), C)


def _linear_cocycle(ls=np.exp(-1.0), lu=np.exp(-1.0)):
    corr = lambda t, k: linear_correspondence(ls**t, 0.0, 0.0, lu**t)
    return SampledCocycle(corr, np.zeros(1), 1.0, 1, 1)


def test_linear_cocycle_zero_graph_one_iteration():
    cert = gap_certificate(-1.0, 1.0, 0.0, 0.0)
    fam = invariant_graph(_linear_cocycle(), SectionSpec("invariant_zero"), [cert], Grid.ball(1.0, 1, 21), t0=1.0)
    np.testing.assert_array_equal(fam.values, 0.0)
    assert len(fam.history) == 1


@pytest.fixture(scope="module")
def saddle_unstable():
    d = instantiate("scalar_saddle")
    p = d.to_problem()
    cert = problem_certificate(p)
    coc = problem_cocycle(p, step=0.5, steps_per_unit=400)
    grid = Grid.ball(0.5, 1, 201)
    fam = invariant_graph(dual_cocycle(coc), SectionSpec("invariant_zero"), [dual_certificate(cert)], grid,
                          t0=2.0, check_times=[1.0, 2.0, 4.0])
    return d, p, cert, coc, fam


def test_saddle_unstable_manifold(saddle_unstable):
    d, p, cert, coc, fam = saddle_unstable
    x = np.linspace(-0.5, 0.5, 1001)[:, None]
    # 201 nodes: interpolation error dominates (about spacing^2 / 12)
    assert np.max(np.abs(fam(x)[:, 0] - x[:, 0] ** 2 / 3)) <= 2e-5
    assert fam.section_offset[0] == 0.0
    # off-t0 checks include the interpolation error of the node graph
    assert fam.invariance_residual <= 1e-5
    at_t0 = invariance_residual(dual_cocycle(coc), fam.values, fam.grid, [dual_certificate(cert).constants(2.0)], 2.0)
    assert at_t0 <= 1e-10
    assert fam.lip_estimate <= dual_certificate(cert).constants(2.0).beta_prime * 1.05


def test_outer_contraction_below_theta(saddle_unstable):
    *_, fam = saddle_unstable
    assert max(fam.contraction_ratios) <= fam.theta + 0.05


def test_uniqueness_from_random_lipschitz_init(saddle_unstable):
    d, p, cert, coc, fam = saddle_unstable
    rng = np.random.default_rng(1)
    bp = dual_certificate(cert).constants(2.0).beta_prime
    knots = rng.uniform(-1, 1, 8)
    init = lambda pts, k: 0.05 * bp * np.interp(pts[:, 0], np.linspace(-0.5, 0.5, 8), knots)[:, None]
    fam2 = invariant_graph(dual_cocycle(coc), SectionSpec("invariant_zero"), [dual_certificate(cert)], fam.grid,
                           t0=2.0, init=init, tol=1e-12)
    assert np.max(np.abs(fam2.values - fam.values)) <= 2e-12


def test_dual_route_equals_direct_role_exchange(saddle_unstable):
    d, p, cert, coc, fam = saddle_unstable
    # exchange the roles directly: a cocycle whose maps are the dual maps of H(t)
    direct = SampledCocycle(lambda t, k: dual(coc.corr(t, k)), coc.samples, coc.step, 1, 1, reversed_time=True)
    fam2 = invariant_graph(direct, SectionSpec("invariant_zero"), [dual_certificate(cert)], fam.grid, t0=2.0)
    assert np.max(np.abs(fam2.values - fam.values)) <= 2e-12


def test_smoothness_probe_examples(saddle_unstable):
    *_, fam = saddle_unstable
    rep = smoothness_probe(fam, "1")
    x = fam.grid.points()[1:-1, 0]
    assert np.max(np.abs(rep["derivative"][:, 0] - 2 * x / 3)) <= 1e-4
    zero = GraphFamily(np.zeros(1), fam.grid, np.zeros_like(fam.values), 0.0, np.zeros(1), 0.0)
    z = smoothness_probe(zero, "1")
    assert z["max_discrepancy"] == 0.0 and np.all(z["derivative"] == 0.0)
    coarse = GraphFamily(np.zeros(1), Grid.ball(1.0, 1, 4), np.zeros((1, 4, 1)), 0.0, np.zeros(1), 0.0)
    with pytest.raises(GridTooCoarse):
        smoothness_probe(coarse, "1")


@pytest.fixture(scope="module")
def nonauto_bounded():
    d = instantiate("nonauto_scalar", {"forcing": 0.05})
    p = d.to_problem()
    cert = problem_certificate(p)
    coc = problem_cocycle(p, step=2 * np.pi / 16, steps_per_unit=100)
    grid = Grid.ball(2.0, 1, 41)
    fam = invariant_graph(coc, SectionSpec("y_bounded"), [cert] * 16, grid, tol=1e-10)
    return coc, cert, grid, fam


def test_y_bounded_offset_within_k_eta(nonauto_bounded):
    coc, cert, grid, fam = nonauto_bounded
    eta = 0.0
    for k in range(16):
        _, y1 = coc.corr(fam.t0, k).evaluate(grid.points(), np.zeros((grid.size, 1)))
        eta = max(eta, float(np.abs(y1).max()))
    assert fam.section_offset.max() > 0
    assert fam.section_offset.max() <= fam.meta["K"] * eta
    assert max(fam.contraction_ratios) <= fam.theta + 0.05


def test_circle_base_hoelder_exponent(nonauto_bounded):
    *_, fam = nonauto_bounded
    fam.meta["period"] = 2 * np.pi
    assert smoothness_probe(fam, "holder")["exponent"] >= 0.9


def test_local_stable_graph_taylor_oracle():
    d = instantiate("scalar_saddle", {"radius": 0.3, "c": 0.5})
    p = d.to_problem()
    cert = problem_certificate(p)
    coc = problem_cocycle(p, step=0.5, steps_per_unit=400)
    fam = local_stable_graph(coc, 0.3, [cert], t0=2.0, n_nodes=241)
    y = np.linspace(-0.3, 0.3, 601)[:, None]
    assert np.max(np.abs(fam(y)[:, 0] - d.oracle["stable_manifold"](y[:, 0]))) <= 1e-5
    bp = cert.constants(2.0).beta_prime
    assert np.max(np.abs(fam.values)) <= bp * 0.3
    assert fam.meta["x_map_lip"] <= fam.meta["x_map_lip_bound"] * 1.05


def test_local_stable_graph_linear_and_preconditions():
    cert = gap_certificate(-1.0, 1.0, 0.0, 0.0)
    fam = local_stable_graph(_linear_cocycle(), 0.5, [cert], t0=1.0, n_nodes=21)
    np.testing.assert_array_equal(fam.values, 0.0)
    bad = gap_certificate(0.5, 2.0, 0.0, 0.0)
    with pytest.raises(SpectralConditionViolated):
        local_stable_graph(_linear_cocycle(np.exp(0.5), np.exp(-2.0)), 0.5, [bad], t0=1.0)


def test_perturbed_section_offset_bound():
    res = {}
    for forcing in (0.0, 1e-3):
        d = instantiate("nonauto_scalar", {"forcing": forcing})
        p = d.to_problem()
        cert = problem_certificate(p)
        coc = problem_cocycle(p, step=2 * np.pi / 8, steps_per_unit=100)
        grid = Grid.ball(1.0, 1, 21)
        fam = invariant_graph(coc, SectionSpec("y_bounded"), [cert] * 8, grid, tol=1e-11)
        eta = max(float(np.abs(coc.corr(fam.t0, k).evaluate(grid.points(), np.zeros((grid.size, 1)))[1]).max()) for k in range(8))
        res[forcing] = (fam.section_offset.max(), fam.meta["K"], eta)
    assert res[0.0][0] == 0.0
    off, k, eta = res[1e-3]
    assert 0 < off <= k * eta


def _saddle_fiber(y0, radius=0.02, c=0.0, n=11, t0=1.0):
    d = instantiate("scalar_saddle", {"radius": radius, "c": c})
    p = d.to_problem()
    T = t0 * (n - 1) + 4.0
    tr = solve_two_point(p, np.array([y0]), np.array([0.0]), 0.0, T, grid_n=int(T * 800))
    prel = orbit_problem(p, tr.times, tr.ambient(p))
    cert = problem_certificate(prel)
    idx = (np.arange(n) * t0 * 800).astype(int)
    err = orbit_consistency(p, tr.times[idx], tr.x[idx], tr.y[idx])
    coc = orbit_cocycle(prel, t0, n, steps_per_unit=400)
    return strong_stable_fiber(coc, lambda: err, radius, [cert] * n, t0=t0, n_nodes=41), cert, tr, p


def test_fiber_through_equilibrium_is_stable_manifold():
    fib, cert, *_ = _saddle_fiber(0.0, radius=0.02, c=0.5)
    d = instantiate("scalar_saddle", {"radius": 0.02, "c": 0.5})
    p = d.to_problem()
    coc = problem_cocycle(p, step=1.0, steps_per_unit=400)
    loc = local_stable_graph(coc, 0.02, [problem_certificate(p)], t0=1.0, n_nodes=41)
    assert np.max(np.abs(fib.family.values[0] - loc.values[0])) <= 1e-6


def test_fiber_decay_rate():
    fib, cert, *_ = _saddle_fiber(0.2, c=0.5)
    assert 0.95 * cert.lambda_s <= fib.fitted_rate <= 1.05 * cert.lambda_s


def test_fibers_disjoint():
    f1, _, tr1, p = _saddle_fiber(0.2)
    f2, _, tr2, _ = _saddle_fiber(0.1)
    a = f1.points + tr1.ambient(p)[0][::-1]
    b = f2.points + tr2.ambient(p)[0][::-1]
    dist = np.linalg.norm(a[:, None] - b[None], axis=-1)
    assert dist.min() > 0


def test_orbit_inconsistent():
    d = instantiate("scalar_saddle", {"radius": 0.02})
    p = d.to_problem()
    t = np.linspace(0, 5, 501)
    prel = orbit_problem(p, t, np.zeros((501, 2)))
    coc = orbit_cocycle(prel, 1.0, 5)
    with pytest.raises(OrbitInconsistent):
        strong_stable_fiber(coc, lambda: 1.0, 0.02, [problem_certificate(prel)] * 5, t0=1.0)


def test_family_csv_and_metadata(tmp_path, saddle_unstable):
    *_, fam = saddle_unstable
    path = fam.to_csv(tmp_path / "g.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "omega_id,x0,y0" and len(lines) == 1 + fam.grid.size
    meta = fam.metadata()
    assert meta["outer_iterations"] == len(fam.history)

import numpy as np
import pytest

from dichotomy.errors import BoundaryDimensionMismatch, IllPosedProblem, NonContraction, NonUniformGrid
from dichotomy.problems import instantiate
from dichotomy.solver import (
    BaseDynamics,
    DichotomousTrajectory,
    EvolutionProblem,
    generating_cocycle_eval,
    solve_two_point,
    verify_mild_solution,
    wellposed_cocycle_eval,
)
from dichotomy.splitting import spectral_split

# Collocation oracle (scipy solve_bvp, tol 1e-12) for x' = x, y' = -y + x^2,
# y(0) = 0.01, x(3) = 0.2; frozen values (x, y) at t = 0, 1.5, 3.
BVP_ORACLE = {
    0.0: (0.009957413673572908, 0.01),
    1.5: (0.044626032029686014, 0.0028877547214539033),
    3.0: (0.2, 0.013829558552957564),
}


def _linear(mu_s=-1.0, mu_u=1.0, g=None, eps=0.0, **kw):
    s = spectral_split(np.diag([mu_s, mu_u]), 0.0)
    return EvolutionProblem(s, g or (lambda w, z: np.zeros_like(z)), eps, **kw)


def test_decoupled_linear_flow():
    p = _linear()
    tr = solve_two_point(p, [1.0], [1.0], 0.0, 2.0, grid_n=200)
    t = tr.times
    np.testing.assert_allclose(tr.x[:, 0], np.exp(-t), rtol=1e-13)
    np.testing.assert_allclose(tr.y[:, 0], np.exp(t - 2.0), rtol=1e-13)


def test_saddle_matches_collocation_oracle():
    p = instantiate("scalar_saddle").to_problem()
    # stable block = ambient y, unstable block = ambient x
    tr = solve_two_point(p, [0.01], [0.2], 0.0, 3.0, grid_n=3000, tol=1e-14)
    z = tr.ambient(p)
    for t, ref in BVP_ORACLE.items():
        i = int(round(t / 3.0 * 3000))
        np.testing.assert_allclose(z[i], ref, atol=1e-6)
    assert tr.x[0, 0] == 0.01 and tr.y[-1, 0] == 0.2


def test_sin_coupling_decouples():
    p = _linear(g=lambda w, z: np.stack([0.1 * np.sin(z[..., 1]), np.zeros_like(z[..., 0])], axis=-1), eps=0.1)
    tr = solve_two_point(p, [0.7], [0.0], 0.5, 2.5, grid_n=100)
    np.testing.assert_array_equal(tr.y, 0.0)
    np.testing.assert_allclose(tr.x[:, 0], 0.7 * np.exp(-(tr.times - 0.5)), rtol=1e-13)


def test_boundary_dimension_mismatch():
    with pytest.raises(BoundaryDimensionMismatch):
        solve_two_point(_linear(), [1.0, 2.0], [1.0], 0.0, 1.0)


def test_noncontraction_reports_kappa():
    p = _linear(g=lambda w, z: 5.0 * np.sin(z[..., ::-1]), eps=5.0)
    with pytest.raises(NonContraction) as exc:
        solve_two_point(p, [0.1], [0.1], 0.0, 2.0)
    assert exc.value.kappa >= 1


def test_generating_eval_examples():
    p = _linear()
    f, g = generating_cocycle_eval(p, 0.0, 0.0, [0.3], [0.4])
    np.testing.assert_array_equal(f, [0.3])
    np.testing.assert_array_equal(g, [0.4])
    f, g = generating_cocycle_eval(p, 0.8, 0.0, [0.3], [0.4])
    np.testing.assert_allclose(f, 0.3 * np.exp(-0.8), rtol=1e-13)
    np.testing.assert_allclose(g, 0.4 * np.exp(-0.8), rtol=1e-13)


def test_saddle_cocycle_law():
    p = instantiate("scalar_saddle").to_problem()
    x1, y3 = np.array([0.2]), np.array([0.15])
    f1, g1 = generating_cocycle_eval(p, 1.0, 0.0, x1, y3, grid_n=800)
    # intermediate y-value by fixed point: y_mid = G_{0.5}(F_{0.5}(x1, y_mid), y3)
    ym = np.zeros(1)
    for _ in range(100):
        xm, _ = generating_cocycle_eval(p, 0.5, 0.0, x1, ym, grid_n=400)
        _, ym = generating_cocycle_eval(p, 0.5, 0.0, xm, y3, grid_n=400)
    xm, y1 = generating_cocycle_eval(p, 0.5, 0.0, x1, ym, grid_n=400)
    x3, _ = generating_cocycle_eval(p, 0.5, 0.0, xm, y3, grid_n=400)
    assert abs(x3[0] - f1[0]) <= 1e-6 and abs(y1[0] - g1[0]) <= 1e-6


def test_mild_residual_is_second_order():
    p = _linear()
    res = []
    for n in (200, 400, 800, 1600):
        tr = solve_two_point(p, [1.0], [1.0], 0.0, 2.0, grid_n=n)
        res.append(verify_mild_solution(tr, p))
    assert res[0] <= 1e-4
    assert all(a / b >= 3.5 for a, b in zip(res, res[1:]))


def test_zero_trajectory_residual_zero():
    p = instantiate("scalar_saddle").to_problem()
    tr = solve_two_point(p, [0.0], [0.0], 0.0, 1.0, grid_n=50)
    assert verify_mild_solution(tr, p) == 0.0


def test_saddle_mild_residual_bound():
    p = instantiate("scalar_saddle").to_problem()
    n = 600
    tr = solve_two_point(p, [0.01], [0.2], 0.0, 3.0, grid_n=n)
    h = 3.0 / n
    z = tr.ambient(p)
    bound = 5 * h**2 * np.linalg.norm(p.generator, 2) * np.max(np.linalg.norm(z, axis=1))
    assert verify_mild_solution(tr, p) <= bound


def test_nonuniform_grid_rejected():
    p = _linear()
    tr = solve_two_point(p, [1.0], [1.0], 0.0, 1.0, grid_n=10)
    bad = DichotomousTrajectory(tr.times**2, tr.x, tr.y, 1, 0.0, 0.0)
    with pytest.raises(NonUniformGrid):
        verify_mild_solution(bad, p)


def test_wellposed_linear_and_identity():
    p = _linear(well_posed=True)
    x = np.array([0.3, -0.2])
    np.testing.assert_array_equal(wellposed_cocycle_eval(p, 0.0, 0.0, x), x)
    np.testing.assert_allclose(wellposed_cocycle_eval(p, 1.2, 0.0, x), x * np.exp([-1.2, 1.2]), rtol=1e-12)


def test_wellposed_driver_closed_form():
    base = BaseDynamics("driver", period=2 * np.pi, driver=lambda w: 2.0 + 0.0 * np.asarray(w))
    p = _linear(well_posed=True, base=base)
    x = np.array([0.5, 0.5])
    np.testing.assert_allclose(wellposed_cocycle_eval(p, 0.7, 0.3, x), x * np.exp([-1.4, 1.4]), rtol=1e-12)


def test_wellposed_semigroup_and_stable_slice():
    p = instantiate("scalar_saddle").to_problem()
    z = np.array([0.0, 0.3])  # x = 0 slice: y' = -y
    np.testing.assert_allclose(wellposed_cocycle_eval(p, 1.0, 0.0, z), [0.0, 0.3 * np.exp(-1)], rtol=1e-12)
    z = np.array([0.1, 0.2])
    a = wellposed_cocycle_eval(p, 0.7, 0.0, z, grid_n=2000)
    b = wellposed_cocycle_eval(p, 0.4, 0.0, wellposed_cocycle_eval(p, 0.3, 0.0, z, grid_n=2000), grid_n=2000)
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_illposed_rejected():
    p = instantiate("elliptic_cylinder").to_problem()
    with pytest.raises(IllPosedProblem):
        wellposed_cocycle_eval(p, 1.0, 0.0, np.zeros(p.dim))


def test_picard_increments_contract_with_kappa():
    # c != 0 couples the blocks both ways, so the iteration is not finite
    p = instantiate("scalar_saddle", {"c": 0.8}).to_problem()
    tr = solve_two_point(p, [0.3], [0.3], 0.0, 2.0, grid_n=400, tol=1e-15)
    inc = [v for v in tr.increments if v > 1e-13]
    ratios = [b / a for a, b in zip(inc, inc[1:])]
    assert ratios and max(ratios) <= tr.kappa


def test_cone_gronwall_decay():
    p = instantiate("scalar_saddle").to_problem()
    from dichotomy.cocycles import problem_certificate

    cert = problem_certificate(p)
    rng = np.random.default_rng(4)
    x1 = rng.uniform(-0.4, 0.4, (300, 1))
    y2 = rng.uniform(-0.4, 0.4, (300, 1))
    x1b = rng.uniform(-0.4, 0.4, (300, 1))
    y2b = rng.uniform(-0.4, 0.4, (300, 1))
    T = 1.5
    a = solve_two_point(p, x1, y2, 0.0, T, grid_n=300)
    b = solve_two_point(p, x1b, y2b, 0.0, T, grid_n=300)
    dx0 = np.abs(a.x[0] - b.x[0])[:, 0]
    dy0 = np.abs(a.y[0] - b.y[0])[:, 0]
    dyT = np.abs(a.y[-1] - b.y[-1])[:, 0]
    sel = dx0 <= cert.alpha * dy0
    assert sel.sum() > 10
    assert np.all(dy0[sel] <= cert.lambda_u**T * dyT[sel] * (1 + 1e-6))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dichotomy.errors import EigenvalueOnCut, NegativeTime
from dichotomy.splitting import (
    SpectralSplitting,
    check_invariants,
    eigen_reweight,
    log_norm_rate,
    lyapunov_reweight,
    propagate,
    spectral_split,
    subspace_splitting,
)


def _assert_invariants(s, a):
    inv = check_invariants(s, a)
    assert inv["idempotency"] <= 1e-10
    assert inv["rank_sum"] == s.dim_total
    assert inv["leak_xy"] <= 1e-9 and inv["leak_yx"] <= 1e-9
    assert inv["rate_excess"] <= 1e-8
    assert inv["norm_p"] <= s.c1 * (1 + 1e-12) and inv["norm_q"] <= s.c1 * (1 + 1e-12)


def test_diagonal_split():
    a = np.diag([-1.0, 2.0])
    s = spectral_split(a, 0.0)
    np.testing.assert_allclose(s.projection_p, np.diag([1.0, 0.0]), atol=1e-14)
    assert s.mu_s == pytest.approx(-1.0) and s.mu_u == pytest.approx(2.0)
    _assert_invariants(s, a)


def test_companion_split_matches_eigenvectors():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    s = spectral_split(a, 0.0)
    bx = s.basis_x[:, 0] / s.basis_x[0, 0]
    by = s.basis_y[:, 0] / s.basis_y[0, 0]
    np.testing.assert_allclose(bx, [1.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(by, [1.0, 1.0], atol=1e-12)
    assert s.mu_s == pytest.approx(-1.0) and s.mu_u == pytest.approx(1.0)
    ox, _ = propagate(s, 1.0)
    np.testing.assert_allclose(ox, [[np.exp(-1.0)]], rtol=1e-12)


def test_empty_unstable_block():
    s = spectral_split(np.diag([-3.0, -1.0]), 5.0)
    assert s.dim_x == 2 and s.dim_y == 0
    assert s.mu_u == np.inf
    np.testing.assert_allclose(s.projection_p, np.eye(2), atol=1e-14)


def test_eigenvalue_on_cut():
    with pytest.raises(EigenvalueOnCut):
        spectral_split(np.diag([0.0, 1.0]), 0.0)


def test_log_norm_examples():
    assert log_norm_rate(np.diag([-1.0, -2.0])) == pytest.approx(-1.0)
    assert log_norm_rate(np.array([[-1.0, 10.0], [0.0, -1.0]])) == pytest.approx(4.0)
    assert log_norm_rate(np.zeros((3, 3))) == 0.0


def test_propagate_examples():
    s = spectral_split(np.diag([-1.0, 2.0]), 0.0)
    ox, oy = propagate(s, 1.0)
    np.testing.assert_allclose(ox, [[np.exp(-1)]], rtol=1e-14)
    np.testing.assert_allclose(oy, [[np.exp(-2)]], rtol=1e-14)
    ox, oy = propagate(s, 0.0)
    np.testing.assert_array_equal(ox, np.eye(1))
    np.testing.assert_array_equal(oy, np.eye(1))
    with pytest.raises(NegativeTime):
        propagate(s, -0.1)


def _random_hyperbolic(seed, n=4):
    rng = np.random.default_rng(seed)
    while True:
        a = rng.standard_normal((n, n))
        if np.min(np.abs(np.linalg.eigvals(a).real)) > 0.05:
            return a


@pytest.mark.parametrize("seed", range(20))
def test_random_split_invariants_and_reassembly(seed):
    a = _random_hyperbolic(seed)
    s = spectral_split(a, 0.0)
    _assert_invariants(s, a)
    err = np.linalg.norm(s.reassemble() - a) / np.linalg.norm(a)
    assert err <= 1e-9
    for t1, t2 in [(0.3, 1.7), (2.0, 3.0), (0.0, 5.0)]:
        a1, b1 = propagate(s, t1 + t2)
        a2, b2 = propagate(s, t1)
        a3, b3 = propagate(s, t2)
        scale = max(1.0, np.linalg.norm(a1), np.linalg.norm(b1))
        assert np.linalg.norm(a1 - a2 @ a3) <= 1e-8 * scale
        assert np.linalg.norm(b1 - b2 @ b3) <= 1e-8 * scale


def test_log_norm_dominates_spectral_abscissa_on_100_matrices():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.standard_normal((4, 4))
        assert log_norm_rate(a) >= np.max(np.linalg.eigvals(a).real) - 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)), st.floats(0.0, 4.0))
def test_log_norm_bounds_exponential(a, t):
    from scipy.linalg import expm

    assert np.linalg.norm(expm(t * a), 2) <= np.exp(log_norm_rate(a) * t) * (1 + 1e-8)


def test_reweightings_tighten_rates():
    a = np.array([[-1.0, 10.0, 0.0], [0.0, -1.5, 0.0], [0.0, 0.0, 2.0]])
    s = spectral_split(a, 0.0)
    assert s.mu_s > 0  # the log norm is far from the abscissa here
    for r in (lyapunov_reweight(s), eigen_reweight(s)):
        assert r.mu_s < 0
        assert r.mu_s >= -1.0 - 1e-9
        _assert_invariants(r, a)


def test_serialization_round_trip():
    s = lyapunov_reweight(spectral_split(_random_hyperbolic(3), 0.0))
    s2 = SpectralSplitting.from_dict(s.to_dict())
    for name in ("basis_x", "basis_y", "projection_p", "restricted_gen_x", "restricted_gen_y", "weight_x"):
        np.testing.assert_array_equal(getattr(s, name), getattr(s2, name))
    assert (s2.mu_s, s2.mu_u, s2.c1) == (s.mu_s, s.mu_u, s.c1)


def test_subspace_splitting_keeps_axes():
    a = np.array([[0.0, 0.3, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 4.0]])
    e = np.eye(3)
    s = subspace_splitting(a, e[:, :2], e[:, 2:])
    np.testing.assert_allclose(s.projection_p, np.diag([1.0, 1.0, 0.0]), atol=1e-14)
    with pytest.raises(Exception):
        subspace_splitting(a, np.array([[1.0], [1.0], [1.0]]), e[:, 2:])

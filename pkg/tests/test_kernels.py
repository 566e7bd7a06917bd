"""Pair kernels, homogenization constant, potential kernel, covariances.

Expected numbers are frozen from closed-form evaluation of the fixture
laws (two-entry uniform-bias law and the three-point mixture), plus the
symmetric-Dirichlet family where the constant has a closed form.
"""

import numpy as np
import pytest

import rwdre.envmodel as env
import rwdre.kernels as ker

LAZY_U = env.lazy_u()
FLIP3 = env.flip3()

# frozen: three-point mixture constant and limiting covariances (lags 1..5)
FLIP3_BETA = 0.5863600066027785
FLIP3_COV_LIMIT = [0.16948339, -0.08804558, 0.04573914, -0.0237612, 0.0123438]


def stencil_dict(st):
    return {k[0]: v for k, v in st.to_dict().items()}


def test_pair_kernels_lazy_u():
    same = stencil_dict(ker.pair_step_same_site(LAZY_U))
    apart = stencil_dict(ker.pair_step_apart(LAZY_U))
    excess = stencil_dict(ker.pair_step_excess(LAZY_U))
    assert same[-1] == pytest.approx(1 / 6, abs=1e-15)
    assert same[0] == pytest.approx(2 / 3, abs=1e-15)
    assert same[1] == pytest.approx(1 / 6, abs=1e-15)
    assert apart[-1] == pytest.approx(1 / 4, abs=1e-15)
    assert apart[0] == pytest.approx(1 / 2, abs=1e-15)
    assert apart[1] == pytest.approx(1 / 4, abs=1e-15)
    assert excess[-1] == pytest.approx(-1 / 12, abs=1e-15)
    assert excess[0] == pytest.approx(1 / 6, abs=1e-15)
    assert excess[1] == pytest.approx(-1 / 12, abs=1e-15)


def test_pair_kernels_flip3():
    same = stencil_dict(ker.pair_step_same_site(FLIP3))
    apart = stencil_dict(ker.pair_step_apart(FLIP3))
    excess = stencil_dict(ker.pair_step_excess(FLIP3))
    for z, val in [(-2, 0.08), (-1, 0.09), (0, 0.66), (1, 0.09), (2, 0.08)]:
        assert same[z] == pytest.approx(val, abs=1e-15)
    for z, val in [(-2, 0.2025), (-1, 0.09), (0, 0.415), (1, 0.09), (2, 0.2025)]:
        assert apart[z] == pytest.approx(val, abs=1e-15)
    assert excess[0] == pytest.approx(0.245, abs=1e-15)
    assert excess[1] == pytest.approx(0.0, abs=1e-15)
    assert excess[2] == pytest.approx(-0.1225, abs=1e-15)


def test_pair_kernels_are_probability_rows():
    for spec in (LAZY_U, FLIP3, env.dirichlet_star2()):
        for st in (ker.pair_step_same_site(spec), ker.pair_step_apart(spec)):
            assert st.total() == pytest.approx(1.0, abs=1e-12)
            assert np.all(st.values >= 0)
        assert ker.pair_step_excess(spec).total() == pytest.approx(0.0, abs=1e-12)


def test_spectral_gap_ordering():
    rng = np.random.default_rng(0)
    for spec in (LAZY_U, FLIP3):
        same = ker.pair_step_same_site(spec)
        apart = ker.pair_step_apart(spec)
        theta = rng.uniform(-np.pi, np.pi, size=(64, spec.dim))
        g_same = ker.spectral_gap(same, theta)
        g_apart = ker.spectral_gap(apart, theta)
        assert np.all(g_same >= -1e-15)
        assert np.all(g_apart >= -1e-15)
        # extra same-site holding mass keeps the same-site walk slower
        assert np.all(g_same <= g_apart + 1e-12)


def test_beta_closed_forms():
    assert ker.beta_fourier(LAZY_U) == pytest.approx(2 / 3, abs=1e-10)
    # symmetric Dirichlet on k offsets: constant = k*alpha / (k*alpha + 1)
    assert ker.beta_fourier(env.dirichlet_line()) == pytest.approx(3 / 4, abs=1e-10)
    spec = env.dirichlet_line((2.5, 2.5, 2.5))
    assert ker.beta_fourier(spec) == pytest.approx(7.5 / 8.5, abs=1e-10)
    assert ker.beta_fourier(env.dirichlet_star2()) == pytest.approx(5 / 6, abs=1e-10)
    assert ker.beta_fourier(FLIP3) == pytest.approx(FLIP3_BETA, abs=1e-9)


def test_beta_duality_between_pipelines():
    for spec in (LAZY_U, FLIP3, env.dirichlet_line((0.5, 1.5, 1.0)),
                  env.dirichlet_star2()):
        bf = ker.beta_fourier(spec)
        bp = ker.beta_from_potential(spec)
        assert abs(bf - bp) < 1e-8


def test_potential_kernel_lazy_u_is_two_abs_x():
    xs = np.arange(-10, 11, dtype=np.int64)[:, None]
    series = ker.potential_kernel_series(LAZY_U, xs)
    fourier = ker.potential_kernel_fourier(LAZY_U, xs)
    expect = 2.0 * np.abs(xs[:, 0])
    assert np.abs(series - expect).max() < 1e-8
    assert np.abs(fourier - expect).max() < 1e-8


def test_potential_kernel_methods_agree_flip3():
    xs = np.arange(-8, 9, dtype=np.int64)[:, None]
    series = ker.potential_kernel_series(FLIP3, xs)
    fourier = ker.potential_kernel_fourier(FLIP3, xs)
    assert np.abs(series - fourier).max() < 1e-8
    # zero at the origin, symmetric law -> symmetric kernel
    origin = np.where(xs[:, 0] == 0)[0][0]
    assert series[origin] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(series, series[::-1], atol=1e-8)


def test_cov_limit_lazy_u_vanishes_off_origin():
    vals = ker.cov_limit(LAZY_U, [0, 1, 2, 3])
    assert vals[0] == pytest.approx(0.5, abs=1e-10)
    assert np.abs(vals[1:]).max() < 1e-10


def test_cov_limit_flip3_frozen_and_pipeline_agreement():
    ms = [1, 2, 3, 4, 5]
    vals = ker.cov_limit(FLIP3, ms)
    np.testing.assert_allclose(vals, FLIP3_COV_LIMIT, atol=2e-7)
    from_pot = ker.cov_limit_from_potential(FLIP3, ms)
    assert np.abs(vals - from_pot).max() < 1e-8
    var = 1.0 / ker.beta_fourier(FLIP3) - 1.0
    assert var == pytest.approx(0.7054369137379388, abs=1e-9)
    var_from_cov = ker.cov_limit(FLIP3, [0])[0]
    assert var_from_cov == pytest.approx(var, abs=1e-9)


def test_cov_finite_exact_small_horizons():
    c1 = ker.cov_finite(LAZY_U, 1, [0, 1])
    assert c1[0] == pytest.approx(1 / 6, abs=1e-15)
    assert c1[1] == pytest.approx(-1 / 12, abs=1e-15)
    c2 = ker.cov_finite(LAZY_U, 2, [0, 1])
    assert c2[0] == pytest.approx(17 / 72, abs=1e-15)
    assert c2[1] == pytest.approx(-7 / 72, abs=1e-15)
    c3 = ker.cov_finite(LAZY_U, 3, [0])
    assert c3[0] == pytest.approx(119 / 432, abs=1e-15)


def test_cov_finite_converges_to_limit():
    target = ker.cov_limit(FLIP3, [1])[0]
    totals, snaps = ker.cov_finite(FLIP3, 256, [1], snapshots=[16, 64, 256])
    gaps = np.abs(snaps[:, 0] - target)
    # d=1 relaxation is diffusive: the gap shrinks like 1/sqrt(N)
    assert gaps[-1] < 0.03
    assert np.all(np.diff(gaps) < 0)
    ratio = gaps[0] / gaps[-1]
    assert 2.0 < ratio < 8.0


def test_density_second_moments_ladder():
    vals = ker.density_second_moments(LAZY_U, 3)
    np.testing.assert_allclose(vals, [1.0, 7 / 6, 89 / 72, 551 / 432],
                               atol=1e-12)
    # second moments grow toward 1 + limiting variance = 1/beta
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] < 1.5


def test_drift_and_variance():
    v, cov = ker.drift_and_variance(LAZY_U)
    assert v[0] == pytest.approx(0.5, abs=1e-15)
    assert cov[0, 0] == pytest.approx(0.25, abs=1e-15)
    v3, cov3 = ker.drift_and_variance(FLIP3)
    assert v3[0] == pytest.approx(0.0, abs=1e-15)
    # mixture: E[Z^2] = 0.9, drift 0 -> variance 0.9
    assert cov3[0, 0] == pytest.approx(0.9, abs=1e-15)


def test_beta_dim2_and_cross_identity():
    spec = env.dirichlet_star2()
    beta = ker.beta_fourier(spec)
    pot = ker.beta_from_potential(spec)
    assert abs(beta - pot) < 1e-8
    vals = ker.cov_limit(spec, [[0, 0]])
    assert vals[0] == pytest.approx(1.0 / beta - 1.0, abs=1e-8)

"""Density functional: exactness, stationarity in mean, one-step identity."""

import numpy as np
import pytest

import rwdre.density as dn
import rwdre.envmodel as env
import rwdre.kernels as ker
from rwdre.rng import Stream, hash_coords


def dense_oracle(field, horizon, half):
    """Transfer-matrix density on a window, built site by site from kernel_at.

    Independent of the vectorized evolution: assembles the full one-step
    matrix per level from individual jump laws and multiplies ones through.
    """
    spec = field.spec
    assert spec.dim == 1
    big = half + spec.jump_range * horizon
    xs = np.arange(-big, big + 1)
    u = np.ones(xs.size)
    for s in range(-horizon, 0):
        nxt = np.zeros(xs.size)
        for i, x in enumerate(xs):
            probs = field.kernel_at(s, [x]).probs
            for z, p in zip(spec.offsets[:, 0], probs):
                j = i + z
                if 0 <= j < xs.size:
                    nxt[j] += p * u[i]
        u = nxt
    return u[big - half: big + half + 1]


def test_density_matches_dense_oracle():
    for name in ("lazy-u", "flip3"):
        field = env.EnvField(env.FIXTURES[name](), seed=5)
        got = dn.density_window(field, horizon=6, half=4)
        expect = dense_oracle(field, horizon=6, half=4)
        np.testing.assert_allclose(got, expect, rtol=0, atol=1e-13)


def test_deterministic_environment_density_is_one():
    spec = env.EnvSpec(dim=1, offsets=[[-1], [0], [1]], family="deterministic",
                       law=[0.25, 0.5, 0.25])
    field = env.EnvField(spec, seed=3)
    vals = dn.density_window(field, horizon=12, half=5)
    np.testing.assert_allclose(vals, 1.0, atol=1e-12)


def test_density_mean_one_across_environments():
    spec = env.flip3()
    vals = dn.density_mc_origin(spec, horizon=16, n_rep=20_000,
                                stream=Stream.from_seed(2))
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - 1.0) < 4.0 * se


def test_density_variance_matches_exact_second_moment():
    spec = env.lazy_u()
    horizon = 8
    exact_second = ker.density_second_moments(spec, horizon)[horizon]
    vals = dn.density_mc_origin(spec, horizon, n_rep=20_000,
                                stream=Stream.from_seed(4))
    sq = vals**2
    se = sq.std(ddof=1) / np.sqrt(sq.size)
    assert abs(sq.mean() - exact_second) < 4.0 * se


def test_density_shift_equivariance():
    field = env.EnvField(env.lazy_u(), seed=21)
    moved = field.shifted(-2, [3])
    got = dn.density_at(moved, horizon=5, sites=[[0]])[0]
    expect = dn.density_at(field, horizon=5, sites=[[3]], level=-2)[0]
    assert got == expect


def test_density_window_trims_to_requested_sites():
    field = env.EnvField(env.flip3(), seed=9)
    win = dn.density_window(field, horizon=4, half=3)
    at = dn.density_at(field, horizon=4, sites=np.arange(-3, 4)[:, None])
    np.testing.assert_array_equal(win, at)


def test_harmonicity_identity_exact():
    stream = Stream.from_seed(31)
    keys = hash_coords(stream.key, np.arange(25))
    worst = 0.0
    for name in ("lazy-u", "flip3", "dirichlet-line"):
        spec = env.FIXTURES[name]()
        for i in range(25):
            field = env.EnvField(spec, seed=int(keys[i] >> np.uint64(1)))
            for horizon in (1, 4, 9):
                worst = max(worst, dn.harmonicity_residual(field, horizon))
    assert worst <= 1e-12


def test_harmonicity_shifted_route_agrees():
    field = env.EnvField(env.flip3(), seed=44)
    direct = dn.harmonicity_residual(field, 6)
    via_shift = dn.harmonicity_residual(field, 6, use_shifted=True)
    assert direct <= 1e-12 and via_shift <= 1e-12


def test_window_sites_covers_box():
    sites = dn.window_sites([2, 1])
    assert sites.shape == (15, 2)
    assert sites.min(axis=0).tolist() == [-2, -1]
    assert sites.max(axis=0).tolist() == [2, 1]


def test_density_dim2():
    field = env.EnvField(env.dirichlet_star2(), seed=13)
    vals = dn.density_window(field, horizon=3, half=[2, 2])
    assert vals.shape == (5, 5)
    assert np.all(vals > 0)
    # mass balance: mean over environments is one; a single window is not,
    # but one further step preserves the window's total influence cone mass
    res = dn.harmonicity_residual(field, 3)
    assert res <= 1e-12

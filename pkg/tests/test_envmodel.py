"""Environment laws: validity, purity, shifts, moments, serialization."""

import json

import numpy as np
import pytest

import rwdre.envmodel as env
from rwdre.rng import Stream


def all_fixture_specs():
    return [build() for build in env.FIXTURES.values()]


def test_fixture_laws_are_probability_vectors():
    for spec in all_fixture_specs():
        field = env.EnvField(spec, seed=31)
        sites = np.zeros((40, spec.dim), dtype=np.int64)
        sites[:, 0] = np.arange(40) - 20
        laws = field.laws_block(0, sites)
        assert laws.shape == (40, spec.n_offsets)
        assert np.all(laws >= 0.0)
        np.testing.assert_allclose(laws.sum(axis=1), 1.0, atol=1e-12)


def test_kernel_at_is_pure_and_varies():
    field = env.EnvField(env.lazy_u(), seed=8)
    a = field.kernel_at(3, [5])
    b = field.kernel_at(3, [5])
    assert np.array_equal(a.probs, b.probs)
    assert np.array_equal(a.offsets, field.spec.offsets)
    c = field.kernel_at(3, [6])
    d = field.kernel_at(4, [5])
    assert not np.array_equal(a.probs, c.probs)
    assert not np.array_equal(a.probs, d.probs)


def test_shift_identity_bitwise():
    for spec in (env.lazy_u(), env.flip3(), env.dirichlet_star2()):
        field = env.EnvField(spec, seed=123)
        dx = np.zeros(spec.dim, dtype=np.int64)
        dx[0] = -4
        moved = field.shifted(2, dx)
        x = np.zeros(spec.dim, dtype=np.int64)
        x[0] = 1
        got = moved.kernel_at(5, x).probs
        expect = field.kernel_at(7, x + dx).probs
        assert np.array_equal(got, expect)


def test_deterministic_family_is_constant():
    spec = env.EnvSpec(dim=1, offsets=[[-1], [0], [1]], family="deterministic",
                       law=[0.2, 0.5, 0.3])
    field = env.EnvField(spec, seed=0)
    for s, x in [(0, 0), (5, -3), (-2, 9)]:
        np.testing.assert_array_equal(field.kernel_at(s, [x]).probs,
                                      [0.2, 0.5, 0.3])


def test_offsets_are_canonicalized_with_params():
    spec = env.EnvSpec(dim=1, offsets=[[1], [0]], family="deterministic",
                       law=[0.3, 0.7])
    np.testing.assert_array_equal(spec.offsets, [[0], [1]])
    np.testing.assert_array_equal(spec.law, [0.7, 0.3])
    mean = env.env_moments(spec).mean_dict()
    assert mean[(0,)] == pytest.approx(0.7)
    assert mean[(1,)] == pytest.approx(0.3)


def test_exact_moments_match_monte_carlo():
    stream = Stream.from_seed(17)

    def assert_within(mc, se, target):
        # constant components (zero spread) must match to rounding instead
        gap = np.abs(mc - target)
        degenerate = se < 1e-12
        assert np.all(gap[degenerate] < 1e-12)
        assert np.all(gap[~degenerate] < 4.0 * se[~degenerate])

    for spec in (env.lazy_u(), env.flip3(), env.dirichlet_line((2.0, 0.5, 1.0))):
        exact = env.env_moments(spec)
        mean, mean_se, second, second_se = env.env_moments_mc(spec, 40_000, stream)
        assert_within(mean, mean_se, exact.mean)
        assert_within(second, second_se, exact.second)


def test_moment_identities():
    for spec in all_fixture_specs():
        m = env.env_moments(spec)
        assert m.mean.sum() == pytest.approx(1.0, abs=1e-12)
        # second-moment matrix: rows sum to the mean (law sums to one)
        np.testing.assert_allclose(m.second.sum(axis=1), m.mean, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(m.second) > -1e-12)


def test_assumption_checks():
    for spec in all_fixture_specs():
        assert env.validate_assumptions(spec).ok
    point_mass = env.EnvSpec(dim=1, offsets=[[0], [1]], family="deterministic",
                             law=[0.0, 1.0])
    rep = env.validate_assumptions(point_mass)
    assert not rep.nondegenerate
    # support differences on a sublattice: jumps {-2, 0, 2} have span 2
    coarse = env.EnvSpec(dim=1, offsets=[[-2], [0], [2]], family="dirichlet",
                         alpha=[1.0, 1.0, 1.0])
    rep = env.validate_assumptions(coarse)
    assert not rep.span_one and rep.messages


def test_json_round_trip():
    for spec in all_fixture_specs():
        block = spec.to_json_dict()
        assert set(block) == {"dim", "range", "family", "params"}
        back = env.EnvSpec.from_json_dict(json.loads(json.dumps(block)))
        assert back.to_json_dict() == block


def test_config_round_trip_with_seed():
    field = env.EnvField(env.flip3(), seed=99)
    block = env.field_to_config(field)
    assert block["seed"] == 99
    back = env.field_from_config(block)
    assert back.spec.to_json_dict() == field.spec.to_json_dict()
    assert np.array_equal(back.kernel_at(0, [0]).probs,
                          field.kernel_at(0, [0]).probs)


def test_malformed_configs_raise_naming_the_field():
    good = env.lazy_u().to_json_dict()

    missing = dict(good)
    del missing["params"]
    with pytest.raises(ValueError, match="params"):
        env.EnvSpec.from_json_dict(missing)

    bad_alpha = json.loads(json.dumps(good))
    bad_alpha["params"]["alpha"] = [1.0, -0.5]
    with pytest.raises(ValueError, match="alpha"):
        env.EnvSpec.from_json_dict(bad_alpha)

    bad_range = json.loads(json.dumps(good))
    bad_range["range"] = 3
    with pytest.raises(ValueError, match="range"):
        env.EnvSpec.from_json_dict(bad_range)

    bad_family = json.loads(json.dumps(good))
    bad_family["family"] = "gaussian"
    with pytest.raises(ValueError, match="family"):
        env.EnvSpec.from_json_dict(bad_family)

    with pytest.raises(ValueError, match="seed"):
        env.field_from_config(good)


def test_invalid_spec_parameters():
    with pytest.raises(ValueError):
        env.EnvSpec(dim=1, offsets=[[0], [0]], family="dirichlet",
                    alpha=[1.0, 1.0])  # duplicate offsets
    with pytest.raises(ValueError):
        env.EnvSpec(dim=1, offsets=[[0], [1]], family="two_point",
                    law_a=[0.5, 0.5], law_b=[0.9, 0.2], weight_a=0.5)  # not a law
    with pytest.raises(ValueError):
        env.EnvSpec(dim=1, offsets=[[0], [1]], family="two_point",
                    law_a=[0.5, 0.5], law_b=[0.5, 0.5], weight_a=1.5)  # bad weight
    with pytest.raises(ValueError):
        env.EnvSpec(dim=2, offsets=[[0], [1]], family="dirichlet",
                    alpha=[1.0, 1.0])  # offsets not 2-dimensional

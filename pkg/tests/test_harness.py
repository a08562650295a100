import numpy as np
import pytest
from conftest import desk_instance, oscillator_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from minimaxbvp import harness as hs
from minimaxbvp.continuous import FunctionalTarget, solve_estimator
from minimaxbvp.errors import DegenerateDirection
from minimaxbvp.ordern import OrderNProblem, OrderNSpec, OrderNWeights, WindowObservation, ordern_grid, solve_functional_estimator
from minimaxbvp.point import solve_point_estimator
from test_point import instance as point_instance


@pytest.fixture(scope="module")
def desk():
    spec, alg, G, obs, target, grid = desk_instance(257)
    return spec, alg, G, obs, grid, solve_estimator(spec, alg, G, obs, target, grid)


@pytest.fixture(scope="module")
def oscillator():
    spec, alg, G, obs, target, grid = oscillator_instance(257)
    return spec, alg, G, obs, grid, solve_estimator(spec, alg, G, obs, target, grid)


# -------------------------------------------------------------------- RNG


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.integers(1, 12_000), st.integers(0, 5000))
def test_coins_do_not_depend_on_split(seed, total, cut):
    cut = min(cut, total)
    whole = hs.rademacher(seed, total)
    parts = np.concatenate([hs.rademacher(seed, cut), hs.rademacher(seed, total - cut, offset=cut)])
    np.testing.assert_array_equal(whole, parts)
    assert set(np.unique(whole)) <= {-1.0, 1.0}


def test_coins_are_balanced():
    c = hs.rademacher(0, 100_000)
    assert abs(c.mean()) < 4 / np.sqrt(len(c))


def test_sample_streams_keyed_by_seed_and_index():
    a = hs.sample_rng(3, 5).standard_normal(4)
    np.testing.assert_array_equal(a, hs.sample_rng(3, 5).standard_normal(4))
    assert not np.array_equal(a, hs.sample_rng(3, 6).standard_normal(4))
    assert not np.array_equal(a, hs.sample_rng(4, 5).standard_normal(4))


# --------------------------------------------------------- saturating pair


@pytest.mark.parametrize("name", ["desk", "oscillator"])
def test_worst_case_elements_on_the_boundary(name, request):
    spec, alg, G, obs, grid, sol = request.getfixturevalue(name)
    F = hs.worst_case_F(sol, alg, G)
    assert F.g_form == pytest.approx(1.0, abs=1e-6)
    assert hs.worst_case_noise(sol, obs).constraint == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", ["desk", "oscillator"])
def test_saturating_pair_attains_sigma(name, request):
    # error^2 at the worst F plus the squared noise response equals sigma^2
    spec, alg, G, obs, grid, sol = request.getfixturevalue(name)
    e0 = hs.deterministic_error(spec, sol, obs, hs.worst_case_F(sol, alg, G))
    r = hs.worst_case_noise(sol, obs).response
    assert e0**2 + r**2 == pytest.approx(sol.sigma2, rel=1e-5)


def test_nominal_data_give_no_deterministic_error(oscillator):
    spec, alg, G, obs, grid, sol = oscillator
    assert abs(hs.deterministic_error(spec, sol, obs, hs.nominal_element(G))) < 1e-8


def test_zero_target_is_degenerate():
    spec, alg, G, obs, _, grid = desk_instance(129)
    sol = solve_estimator(spec, alg, G, obs, FunctionalTarget([0.0, 0.0], 0.5), grid)
    with pytest.raises(DegenerateDirection):
        hs.worst_case_F(sol, alg, G)
    with pytest.raises(DegenerateDirection):
        hs.worst_case_noise(sol, obs)


def test_monte_carlo_saturation(desk):
    spec, alg, G, obs, grid, sol = desk
    F, noise, res = hs.continuous_saturation(spec, alg, G, obs, sol, samples=10_000, seed=0)
    summ = hs.saturation_summary(sol.sigma2, res)
    assert summ["within_3se"]
    assert summ["ratio"] >= 0.99


def test_monte_carlo_is_reproducible(desk):
    spec, alg, G, obs, grid, sol = desk
    a = hs.continuous_saturation(spec, alg, G, obs, sol, samples=500, seed=11)[2]
    b = hs.continuous_saturation(spec, alg, G, obs, sol, samples=500, seed=11)[2]
    np.testing.assert_array_equal(a.errors, b.errors)


# -------------------------------------------------------- random elements


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_random_elements_admissible(seed):
    spec, alg, G, obs, _, grid = oscillator_instance(65)
    sol = solve_estimator(spec, alg, G, obs, FunctionalTarget([0.7, -1.2], 0.6), grid)
    rng = hs.sample_rng(seed, 0)
    F = hs.random_admissible_F(rng, G, spec.T, grid)
    assert F.g_form <= 1.0 + 1e-9
    noises = hs.random_admissible_noise(rng, sol, obs)
    assert sum(nd.constraint for nd in noises) <= 1.0 + 1e-9


def test_guarantee_continuous(oscillator):
    spec, alg, G, obs, grid, sol = oscillator
    rep = hs.guarantee_check(spec, sol, obs, G, draws=20, samples=500, seed=1)
    assert rep.holds
    assert np.all(rep.g_forms <= 1.0 + 1e-9)


def test_guarantee_point():
    spec, alg, G, obsP, grid = point_instance()
    sol = solve_point_estimator(spec, alg, G, obsP, [1.0, 0.5], 0.45, grid)
    assert hs.point_guarantee_check(spec, sol, obsP, G, draws=20, samples=500, seed=2).holds
    F = hs.worst_case_F(sol, alg, G)
    nd = hs.point_worst_case_noise(sol, obsP)
    e0 = hs.point_deterministic_error(spec, sol, obsP, F)
    assert e0**2 + nd.response**2 == pytest.approx(sol.sigma2, rel=1e-5)


def test_guarantee_ordern():
    spec = OrderNSpec(2, (0.0, 1.0), [-1.0, 0.0, 0.0], [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    prob = OrderNProblem.build(spec)
    obs = WindowObservation((0.25, 0.75))
    W = OrderNWeights(1.0, np.eye(2))
    l0 = lambda t: 4 * np.asarray(t) - 4 * np.asarray(t) ** 2  # noqa: E731
    sol = solve_functional_estimator(prob, l0, obs, W, ordern_grid(spec, obs, total_nodes=129))
    F = hs.ordern_worst_case_F(prob, sol, W, l0)
    assert F.g_form == pytest.approx(1.0, abs=1e-6)
    assert hs.ordern_guarantee_check(prob, sol, W, l0, draws=10, samples=500, seed=3).holds

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robustft import envs, perturb
from robustft.errors import ConfigError, ParseError, ShapeError
from robustft.perturb import DeParams, PerturbMode

unit = st.floats(-1, 1, allow_nan=False)


def test_apply_arithmetic():
    np.testing.assert_allclose(perturb.apply([0.5, -0.2], [0.3, -0.3]), [0.65, -0.14], atol=1e-15)


def test_apply_zero_delta_is_identity(rng):
    a = rng.uniform(-1, 1, (20, 3))
    np.testing.assert_array_equal(perturb.apply(a, np.zeros(3)), a)


def test_apply_clips():
    np.testing.assert_array_equal(perturb.apply([1.0], [0.3]), [1.0])
    np.testing.assert_array_equal(perturb.apply([-1.0], [0.3]), [-1.0])


def test_apply_shape_mismatch():
    with pytest.raises(ShapeError):
        perturb.apply([0.1, 0.2], [0.1])


@given(st.lists(unit, min_size=2, max_size=2), st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2),
       st.floats(0, 1))
def test_apply_positively_homogeneous(a, d, lam):
    a, d = np.array(a), np.array(d)
    if np.any(np.abs(a + d * a) > 1):
        return
    np.testing.assert_allclose(perturb.apply(lam * a, d), lam * perturb.apply(a, d), atol=1e-15)


def test_sample_random_bounds_and_mean():
    eps = 0.3
    x = perturb.sample_random(eps, 2, np.random.default_rng(1), size=500_000)
    assert x.shape == (500_000, 2) and np.all(np.abs(x) <= eps)
    se = eps / np.sqrt(3) / np.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0)) < 3 * se)


def test_sample_random_seeded():
    a = perturb.sample_random(0.5, 3, np.random.default_rng(4))
    b = perturb.sample_random(0.5, 3, np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ConfigError):
        perturb.sample_random(0.0, 3, np.random.default_rng(4))


def test_make_delta_modes(rng):
    np.testing.assert_array_equal(perturb.make_delta("normal", 0.3, 2, None, rng), [0, 0])
    r = perturb.make_delta(PerturbMode.RANDOM, 0.5, 2, None, rng)
    assert np.all(np.abs(r) <= 0.5)
    v = np.array([0.1, -0.2])
    for _ in range(10):
        np.testing.assert_array_equal(perturb.make_delta("adversarial", 0.3, 2, [v], rng), v)
    with pytest.raises(ConfigError):
        perturb.make_delta("adversarial", 0.3, 2, [], rng)
    with pytest.raises(ConfigError):
        perturb.make_delta("bogus", 0.3, 2, [], rng)


def test_make_delta_pool_is_uniform():
    pool = [np.array([float(k)]) for k in range(4)]
    g = np.random.default_rng(0)
    draws = [int(perturb.make_delta("adversarial", 0.3, 1, pool, g)[0]) for _ in range(4000)]
    counts = np.bincount(draws, minlength=4)
    assert np.all(np.abs(counts - 1000) < 3 * np.sqrt(4000 * 0.25 * 0.75))


def sphere(center):
    return lambda x: np.sum((np.atleast_2d(x) - center) ** 2, axis=1)


def test_de_finds_quadratic_minimum():
    res = perturb.differential_evolution(sphere(np.array([0.2, -0.1])), 2, 0.5,
                                         DeParams(generations=60), np.random.default_rng(0))
    np.testing.assert_allclose(res.best, [0.2, -0.1], atol=1e-3)
    assert res.evaluations == 20 * 61


def test_de_respects_box_when_optimum_outside():
    res = perturb.differential_evolution(sphere(np.array([3.0, -3.0])), 2, 0.5, DeParams(), np.random.default_rng(0))
    assert np.all(np.abs(res.best) <= 0.5)
    np.testing.assert_allclose(res.best, [0.5, -0.5], atol=1e-6)


@given(st.integers(0, 1000))
def test_de_history_non_increasing(seed):
    g = np.random.default_rng(seed)
    centre = g.uniform(-1, 1, 3)
    res = perturb.differential_evolution(lambda x: np.sin(5 * x).sum(axis=1) + sphere(centre)(x), 3, 0.4,
                                         DeParams(generations=10), g)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert res.best_fitness == res.history[-1]


def test_de_zero_generations_is_best_of_initial_population():
    seen = []

    def f(x):
        seen.append(np.array(x))
        return sphere(np.zeros(2))(x)

    res = perturb.differential_evolution(f, 2, 0.3, DeParams(generations=0), np.random.default_rng(3))
    assert len(seen) == 1 and res.evaluations == 20
    np.testing.assert_array_equal(res.best, seen[0][np.argmin(sphere(np.zeros(2))(seen[0]))])


def test_de_synchronous_selection():
    # Every fitness call sees a whole population-sized batch.
    sizes = []

    def f(x):
        sizes.append(len(x))
        return sphere(np.zeros(2))(x)

    perturb.differential_evolution(f, 2, 0.3, DeParams(population_size=7, generations=5), np.random.default_rng(0))
    assert sizes == [7] * 6


@pytest.mark.parametrize("kw", [{"population_size": 3}, {"generations": -1}, {"differential_weight": 0.0},
                                {"crossover_rate": 1.5}, {"fitness_episodes": 3}])
def test_de_params_validation(kw):
    with pytest.raises(ConfigError):
        DeParams(**kw)


def expert_actor_like(spec):
    """Actor-shaped stand-in carrying the dimensions check plus a callable policy."""
    from robustft import approx, td3

    agent = td3.make_agent(spec.obs_dim, spec.action_dim, td3.Td3Hyper(hidden_dims=(8,)), np.random.default_rng(0))
    return agent.actor


def test_generate_adversarial_set_pool(rng):
    spec = envs.make("PointWalker")
    actor = expert_actor_like(spec)
    log = []
    pool = perturb.generate_adversarial_set(actor, spec, 0.5, DeParams(population_size=6, generations=3), 3, rng, log)
    assert len(pool) == 3 and len(log) == 3
    for v in pool:
        assert v.shape == (2,) and np.all(np.abs(v) <= 0.5)
    with pytest.raises(ConfigError):
        perturb.generate_adversarial_set(actor, spec, 0.5, DeParams(), 0, rng)
    with pytest.raises(ConfigError):
        perturb.generate_adversarial_set(actor, envs.make("PointHopper"), 0.5, DeParams(), 1, rng)


def test_pool_round_trip(tmp_path, rng):
    pool = list(rng.uniform(-0.3, 0.3, (5, 3)))
    perturb.save_pool(pool, 0.3, tmp_path / "p.txt")
    back, eps = perturb.load_pool(tmp_path / "p.txt")
    assert eps == 0.3
    np.testing.assert_array_equal(np.array(back), np.array(pool))


def test_pool_parse_errors(tmp_path):
    perturb.save_pool([[0.1, 0.2], [0.3, 0.4]], 0.5, tmp_path / "p.txt")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    cases = {
        "magic": ["nope"] + lines[1:],
        "count": lines[:-1],
        "value": lines[:4] + ["0.1,abc", lines[5]],
        "width": lines[:4] + ["0.1", lines[5]],
    }
    for name, content in cases.items():
        path = tmp_path / f"{name}.txt"
        path.write_text("\n".join(content) + "\n")
        with pytest.raises(ParseError):
            perturb.load_pool(path)

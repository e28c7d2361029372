import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import td3_target_oracle
from robustft import approx, td3
from robustft.errors import ConfigError, ParseError
from robustft.replay import Batch
from robustft.td3 import Td3Hyper

H = Td3Hyper(hidden_dims=(5, 4), batch_size=3)


def tiny_agent(seed=0, h=H, obs_dim=2, action_dim=2):
    agent = td3.make_agent(obs_dim, action_dim, h, np.random.default_rng(seed))
    # Perturb targets so they differ from the online nets.
    g = np.random.default_rng(seed + 100)
    return replace(
        agent,
        actor_target=approx.MlpParams(agent.actor.spec, agent.actor.flat + 0.1 * g.normal(size=agent.actor.flat.shape)),
        critic1_target=approx.MlpParams(agent.critic1.spec, agent.critic1.flat + 0.1 * g.normal(size=agent.critic1.flat.shape)),
        critic2_target=approx.MlpParams(agent.critic2.spec, agent.critic2.flat - 0.1 * g.normal(size=agent.critic2.flat.shape)),
    )


def three_batch(done=(False, True, False)):
    g = np.random.default_rng(7)
    return Batch(g.normal(size=(3, 2)), g.uniform(-1, 1, (3, 2)), np.array([0.5, -1.0, 2.0]),
                 g.normal(size=(3, 2)), np.array(done))


def target_and_oracle(agent, h, batch, seed=3):
    y = td3.compute_target(agent, h, batch, np.random.default_rng(seed))
    noise = np.random.default_rng(seed).normal(0.0, h.target_noise, size=(len(batch.r), agent.action_dim))
    return y, td3_target_oracle(agent, h, batch, noise)


def test_target_matches_scalar_oracle():
    y, oracle = target_and_oracle(tiny_agent(), H, three_batch())
    np.testing.assert_allclose(y, oracle, rtol=0, atol=1e-10)


def test_done_masks_bootstrap():
    batch = three_batch(done=(True, True, True))
    y, _ = target_and_oracle(tiny_agent(), H, batch)
    np.testing.assert_array_equal(y, batch.r)


def test_target_uses_minimum_and_is_symmetric_in_critics():
    agent = tiny_agent(1)
    batch = three_batch(done=(False, False, False))
    y, oracle = target_and_oracle(agent, H, batch)
    swapped = replace(agent, critic1_target=agent.critic2_target, critic2_target=agent.critic1_target)
    y_swapped, _ = target_and_oracle(swapped, H, batch)
    np.testing.assert_allclose(y, oracle, atol=1e-10)
    np.testing.assert_allclose(y, y_swapped, atol=1e-12)
    # Shifting one critic's output bias up must not change a target already below it.
    spec = agent.critic2_target.spec
    raised = agent.critic2_target.copy()
    raised.layers()[-1][1][:] += 1e6
    y_raised, _ = target_and_oracle(replace(agent, critic2_target=raised), H, batch)
    one_critic = replace(agent, critic2_target=agent.critic1_target)
    y_one, _ = target_and_oracle(one_critic, H, batch)
    assert spec == raised.spec
    np.testing.assert_allclose(y_raised, y_one, atol=1e-10)


@given(st.integers(0, 10_000))
def test_target_oracle_random_nets(seed):
    y, oracle = target_and_oracle(tiny_agent(seed), H, three_batch(), seed=seed)
    np.testing.assert_allclose(y, oracle, atol=1e-10)


def test_noise_is_clipped():
    h = replace(H, target_noise=100.0, noise_clip=0.0)
    agent = tiny_agent()
    batch = three_batch()
    y1 = td3.compute_target(agent, h, batch, np.random.default_rng(0))
    y2 = td3.compute_target(agent, replace(h, target_noise=0.0), batch, np.random.default_rng(1))
    np.testing.assert_allclose(y1, y2, atol=1e-12)


def test_policy_delay_and_target_updates():
    agent = tiny_agent()
    batch = three_batch()
    rng = np.random.default_rng(0)
    actors = [agent.actor.flat.copy()]
    targets = [agent.actor_target.flat.copy()]
    for _ in range(6):
        agent = td3.critic_update(agent, H, batch, rng)
        agent = td3.actor_update_td3(agent, H, batch)
        actors.append(agent.actor.flat.copy())
        targets.append(agent.actor_target.flat.copy())
    changed = [not np.array_equal(a, b) for a, b in zip(actors[:-1], actors[1:])]
    assert changed == [False, True, False, True, False, True]
    t_changed = [not np.array_equal(a, b) for a, b in zip(targets[:-1], targets[1:])]
    assert t_changed == changed
    assert agent.updates == 6 and agent.actor_updates == 3


def test_soft_target_update_blend():
    agent = tiny_agent()
    batch = three_batch()
    agent = td3.critic_update(agent, H, batch, np.random.default_rng(0))
    agent = td3.critic_update(agent, H, batch, np.random.default_rng(0))
    before = agent.critic1_target.flat.copy()
    after = td3.actor_update_td3(agent, H, batch)
    np.testing.assert_allclose(after.critic1_target.flat, H.tau * agent.critic1.flat + (1 - H.tau) * before, atol=1e-15)


def _objective(actor_flat, agent, s, bc, w, scale):
    a = approx.forward(approx.MlpParams(agent.actor.spec, actor_flat), s)
    q = td3.q_value(agent.critic1, s, a)
    return -scale * np.mean(q) + w * np.mean(np.sum((a - bc) ** 2, axis=1))


@pytest.mark.parametrize("w,scale", [(0.0, 1.0), (1.0, 1.0), (2.5, 0.3)])
def test_actor_gradient_matches_finite_differences(w, scale):
    agent = tiny_agent(4)
    g = np.random.default_rng(9)
    s, bc = g.normal(size=(6, 2)), g.uniform(-1, 1, (6, 2))
    loss, grad, _ = td3.actor_objective_grad(agent.actor, agent.critic1, s, bc, w, scale)
    assert loss == pytest.approx(_objective(agent.actor.flat, agent, s, bc, w, scale), abs=1e-12)
    fd = np.zeros_like(grad)
    for i in range(len(fd)):
        e = np.zeros_like(fd)
        e[i] = 1e-6
        fd[i] = (_objective(agent.actor.flat + e, agent, s, bc, w, scale)
                 - _objective(agent.actor.flat - e, agent, s, bc, w, scale)) / 2e-6
    np.testing.assert_allclose(grad, fd, atol=1e-7, rtol=1e-5)


def test_bc_normalized_scale():
    h = replace(H, bc_normalize=True, policy_delay=1)
    agent = tiny_agent(2, h)
    batch = three_batch()
    q = td3.q_value(agent.critic1, batch.s, approx.forward(agent.actor, batch.s))
    lam = h.bc_alpha / np.mean(np.abs(q))
    _, g, _ = td3.actor_objective_grad(agent.actor, agent.critic1, batch.s, batch.a, h.bc_weight, lam)
    expected, _ = approx.adam_step(agent.actor, g, agent.actor_opt)
    got = td3.actor_update_td3bc(agent, h, batch)
    np.testing.assert_allclose(got.actor.flat, expected.flat, atol=1e-15)


def test_bc_only_pulls_actor_toward_data():
    h = replace(H, policy_delay=1, actor_lr=1e-2)
    agent = td3.make_agent(2, 2, h, np.random.default_rng(0))
    batch = three_batch()
    start = np.mean((approx.forward(agent.actor, batch.s) - batch.a) ** 2)
    for _ in range(200):
        agent = td3.actor_update_td3bc(agent, h, batch, bc_weight=1e6)
    end = np.mean((approx.forward(agent.actor, batch.s) - batch.a) ** 2)
    assert end < 0.1 * start


def test_select_action_bounds_and_determinism(rng):
    agent = tiny_agent()
    obs = rng.normal(size=(50, 2)) * 10
    a = td3.select_action(agent, replace(H, exploration_noise=5.0), obs, explore=True, rng=rng)
    assert np.all(np.abs(a) <= 1.0)
    np.testing.assert_array_equal(td3.select_action(agent, H, obs, explore=False), approx.forward(agent.actor, obs))


def test_save_load_round_trip(tmp_path):
    agent = tiny_agent()
    td3.save_agent(agent, H, tmp_path / "a")
    back, h = td3.load_agent(tmp_path / "a")
    assert h == H
    assert back.fingerprint() == agent.fingerprint()


def test_bad_manifest_is_parse_error(tmp_path):
    td3.save_agent(tiny_agent(), H, tmp_path / "a")
    (tmp_path / "a" / "manifest.json").write_text("{not json")
    with pytest.raises(ParseError):
        td3.load_agent(tmp_path / "a")
    (tmp_path / "a" / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ParseError):
        td3.load_agent(tmp_path / "a")


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"tau": 0.0}, {"policy_delay": 0}, {"target_noise": -1.0}])
def test_invalid_hyper(kw):
    with pytest.raises(ConfigError):
        Td3Hyper(**kw)

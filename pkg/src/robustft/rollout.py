"""Batched, training-free rollouts of a deterministic policy under perturbation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robustft import approx, envs, perturb


@dataclass
class RolloutResult:
    returns: np.ndarray
    lengths: np.ndarray
    perturbed_steps: np.ndarray
    failed: np.ndarray


def _policy_fn(policy):
    if isinstance(policy, approx.MlpParams):
        return lambda obs: approx.forward(policy, obs)
    return policy


def rollout(spec: envs.EnvSpec, policy, deltas, q: float, rng: np.random.Generator, reset_seeds) -> RolloutResult:
    """Run one episode per row of ``deltas``.

    ``policy`` is actor parameters or a callable mapping an observation batch
    to actions. At each step every episode independently draws whether its
    delta is applied (probability ``q``). Episodes stop on failure or at the
    horizon; finished episodes stop accumulating.
    """
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    n = len(deltas)
    act = _policy_fn(policy)
    phys, obs = envs.reset_batch(spec, reset_seeds)
    returns = np.zeros(n)
    lengths = np.zeros(n, dtype=int)
    perturbed = np.zeros(n, dtype=int)
    failed = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    for _ in range(spec.horizon):
        a = np.asarray(act(obs), dtype=np.float64)
        hit = rng.random(n) < q
        a_exec = np.where(hit[:, None], perturb.apply(a, deltas), a)
        phys, obs, r, fail = envs.step_batch(spec, phys, a_exec)
        returns += np.where(alive, r, 0.0)
        lengths += alive
        perturbed += alive & hit
        failed |= alive & fail
        alive &= ~fail
        if not alive.any():
            break
    return RolloutResult(returns, lengths, perturbed, failed)

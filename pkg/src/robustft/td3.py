"""TD3 actor-critic updates and the TD3+BC actor objective used offline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from robustft import approx
from robustft.approx import AdamState, MlpParams, MlpSpec
from robustft.errors import ConfigError, NumericError, ParseError
from robustft.replay import Batch


@dataclass(frozen=True)
class Td3Hyper:
    gamma: float = 0.99
    tau: float = 0.005
    target_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    exploration_noise: float = 0.1
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden_dims: tuple[int, ...] = (256, 256)
    # TD3+BC: maximise lam * Q - bc_weight * ||pi(s) - a||^2, lam = 1 unless bc_normalize
    bc_weight: float = 1.0
    bc_normalize: bool = False
    bc_alpha: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.noise_clip < 0 or self.target_noise < 0 or self.exploration_noise < 0:
            raise ConfigError("noise parameters must be non-negative")
        if self.policy_delay < 1 or self.batch_size < 1:
            raise ConfigError("policy_delay and batch_size must be >= 1")


@dataclass(frozen=True)
class AgentState:
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    actor_target: MlpParams
    critic1_target: MlpParams
    critic2_target: MlpParams
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    updates: int = 0
    actor_updates: int = 0
    last: dict = field(default_factory=dict, compare=False)

    @property
    def obs_dim(self) -> int:
        return self.actor.spec.input_dim

    @property
    def action_dim(self) -> int:
        return self.actor.spec.output_dim

    def param_sets(self) -> dict[str, MlpParams]:
        return {name: getattr(self, name) for name in PARAM_SETS}

    def fingerprint(self) -> bytes:
        """Bytes of every parameter vector, for bit-identity comparisons."""
        return b"".join(p.flat.tobytes() for p in self.param_sets().values())


PARAM_SETS = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")


def make_agent(obs_dim: int, action_dim: int, h: Td3Hyper, rng: np.random.Generator) -> AgentState:
    actor_spec = MlpSpec(obs_dim, h.hidden_dims, action_dim, "tanh")
    critic_spec = MlpSpec(obs_dim + action_dim, h.hidden_dims, 1, "identity")
    actor = approx.init_params(actor_spec, rng)
    c1 = approx.init_params(critic_spec, rng)
    c2 = approx.init_params(critic_spec, rng)
    return AgentState(
        actor, c1, c2, actor.copy(), c1.copy(), c2.copy(),
        approx.init_adam(actor, h.actor_lr),
        approx.init_adam(c1, h.critic_lr),
        approx.init_adam(c2, h.critic_lr),
    )


def reset_optimizers(agent: AgentState, h: Td3Hyper) -> AgentState:
    return replace(
        agent,
        actor_opt=approx.init_adam(agent.actor, h.actor_lr),
        critic1_opt=approx.init_adam(agent.critic1, h.critic_lr),
        critic2_opt=approx.init_adam(agent.critic2, h.critic_lr),
    )


def q_value(critic: MlpParams, s, a) -> np.ndarray:
    return approx.forward(critic, np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1))[:, 0]


def compute_target(agent: AgentState, h: Td3Hyper, batch: Batch, rng: np.random.Generator) -> np.ndarray:
    """y = r + gamma * (1 - done) * min_i Q_i^-(s', clip(pi^-(s') + noise, -1, 1))."""
    a_next = approx.forward(agent.actor_target, batch.s_next)
    noise = np.clip(rng.normal(0.0, h.target_noise, size=a_next.shape), -h.noise_clip, h.noise_clip)
    a_next = np.clip(a_next + noise, -1.0, 1.0)
    q1 = q_value(agent.critic1_target, batch.s_next, a_next)
    q2 = q_value(agent.critic2_target, batch.s_next, a_next)
    return batch.r + h.gamma * (1.0 - batch.done.astype(np.float64)) * np.minimum(q1, q2)


def critic_loss(critic: MlpParams, batch: Batch, y: np.ndarray) -> float:
    q = q_value(critic, batch.s, batch.a)
    return float(np.mean((q - y) ** 2))


def _critic_step(critic: MlpParams, opt: AdamState, x: np.ndarray, y: np.ndarray):
    q, cache = approx.forward_cache(critic, x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite critic loss {loss}")
    g, _ = approx.backward(critic, cache, (2.0 / len(y)) * err[:, None])
    params, opt = approx.adam_step(critic, g, opt)
    return params, opt, loss


def critic_update(agent: AgentState, h: Td3Hyper, batch: Batch, rng: np.random.Generator) -> AgentState:
    """One Adam step on the Bellman MSE of both critics against shared targets."""
    y = compute_target(agent, h, batch, rng)
    x = np.concatenate([batch.s, batch.a], axis=1)
    c1, o1, l1 = _critic_step(agent.critic1, agent.critic1_opt, x, y)
    c2, o2, l2 = _critic_step(agent.critic2, agent.critic2_opt, x, y)
    return replace(
        agent, critic1=c1, critic1_opt=o1, critic2=c2, critic2_opt=o2,
        updates=agent.updates + 1, last={"critic_loss": 0.5 * (l1 + l2)},
    )


def actor_objective_grad(actor: MlpParams, critic: MlpParams, s, bc_actions=None, bc_weight: float = 0.0, q_scale: float = 1.0):
    """Loss  -q_scale * mean Q(s, pi(s)) + bc_weight * mean ||pi(s) - a||^2  and its actor gradient."""
    s = np.atleast_2d(s)
    n, obs_dim = s.shape
    a, a_cache = approx.forward_cache(actor, s)
    x = np.concatenate([s, a], axis=1)
    q, q_cache = approx.forward_cache(critic, x)
    _, gx = approx.backward(critic, q_cache, np.full((n, 1), -q_scale / n))
    upstream = gx[:, obs_dim:]
    loss = -q_scale * float(np.mean(q))
    if bc_actions is not None and bc_weight != 0.0:
        diff = a - bc_actions
        loss += bc_weight * float(np.mean(np.sum(diff * diff, axis=1)))
        upstream = upstream + (2.0 * bc_weight / n) * diff
    g, _ = approx.backward(actor, a_cache, upstream)
    return loss, g, float(np.mean(q))


def _soft_update_targets(agent: AgentState, tau: float) -> AgentState:
    return replace(
        agent,
        actor_target=approx.soft_update(agent.actor_target, agent.actor, tau),
        critic1_target=approx.soft_update(agent.critic1_target, agent.critic1, tau),
        critic2_target=approx.soft_update(agent.critic2_target, agent.critic2, tau),
    )


def _actor_step(agent: AgentState, h: Td3Hyper, batch: Batch, bc_weight: float, q_scale_fn=None) -> AgentState:
    if agent.updates % h.policy_delay != 0:
        return agent
    bc_actions = batch.a if bc_weight else None
    q_scale = 1.0
    if q_scale_fn is not None:
        q_scale = q_scale_fn(agent, batch)
    loss, g, mean_q = actor_objective_grad(agent.actor, agent.critic1, batch.s, bc_actions, bc_weight, q_scale)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite actor loss {loss}")
    actor, opt = approx.adam_step(agent.actor, g, agent.actor_opt)
    agent = replace(agent, actor=actor, actor_opt=opt, actor_updates=agent.actor_updates + 1,
                    last={**agent.last, "actor_loss": loss, "mean_q": mean_q})
    return _soft_update_targets(agent, h.tau)


def actor_update_td3(agent: AgentState, h: Td3Hyper, batch: Batch) -> AgentState:
    """Ascend mean Q1(s, pi(s)), then soft-update all targets.

    No-op unless ``agent.updates`` is a multiple of ``policy_delay``.
    """
    return _actor_step(agent, h, batch, 0.0)


def _bc_q_scale(h: Td3Hyper):
    def scale(agent, batch):
        q = q_value(agent.critic1, batch.s, approx.forward(agent.actor, batch.s))
        return h.bc_alpha / max(float(np.mean(np.abs(q))), 1e-6)
    return scale


def actor_update_td3bc(agent: AgentState, h: Td3Hyper, batch: Batch, bc_weight: float | None = None) -> AgentState:
    """TD3+BC actor step: ascend mean[lam * Q1(s, pi(s)) - bc_weight * ||pi(s) - a||^2].

    ``lam`` is 1 unless ``h.bc_normalize`` is set, in which case it is
    ``bc_alpha / mean|Q|`` computed on the batch and held constant.
    """
    w = h.bc_weight if bc_weight is None else bc_weight
    return _actor_step(agent, h, batch, w, _bc_q_scale(h) if h.bc_normalize else None)


def select_action(agent: AgentState, h: Td3Hyper, obs, explore: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    a = approx.forward(agent.actor, obs)
    if explore and h.exploration_noise > 0.0:
        a = np.clip(a + rng.normal(0.0, h.exploration_noise, size=a.shape), -1.0, 1.0)
    return a


def save_agent(agent: AgentState, h: Td3Hyper, directory) -> None:
    """Write the six parameter sets plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, params in agent.param_sets().items():
        approx.save_params(params, d / f"{name}.mlp")
        files[name] = f"{name}.mlp"
    hyper = asdict(h)
    hyper["hidden_dims"] = list(h.hidden_dims)
    manifest = {
        "format": "robustft-agent/1",
        "params": files,
        "hyper": hyper,
        "updates": agent.updates,
        "actor_updates": agent.actor_updates,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_agent(directory) -> tuple[AgentState, Td3Hyper]:
    """Inverse of ``save_agent``. Optimizer moments start fresh."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad manifest: {exc}", path=d / "manifest.json") from exc
    if manifest.get("format") != "robustft-agent/1":
        raise ParseError("unknown agent manifest format", path=d / "manifest.json")
    h = Td3Hyper(**manifest["hyper"])
    sets = {name: approx.load_params(d / manifest["params"][name]) for name in PARAM_SETS}
    agent = AgentState(
        **sets,
        actor_opt=approx.init_adam(sets["actor"], h.actor_lr),
        critic1_opt=approx.init_adam(sets["critic1"], h.critic_lr),
        critic2_opt=approx.init_adam(sets["critic2"], h.critic_lr),
        updates=manifest.get("updates", 0),
        actor_updates=manifest.get("actor_updates", 0),
    )
    return agent, h

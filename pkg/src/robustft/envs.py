"""Deterministic toy locomotion environments.

Both environments share the reward shape

    r = w_v * v_fwd - w_a * ||a||^2 + alive_bonus

where ``a`` is the executed action after clipping to [-1, 1] and ``v_fwd`` is
the forward velocity *after* the step.

PointWalker
    Drag-limited planar point mass, two actuators (x and y thrust). The goal
    heading is the diagonal (1, 1)/sqrt(2), so both actuators contribute to
    forward progress. Thrust imbalance between the actuators tips the body:
    a hidden tilt follows ``a_x - a_y`` through a slow first-order filter and
    the episode fails once ``|tilt| > tilt_max``. Physical state
    ``[x, y, vx, vy, tilt]``; observation ``[v_fwd]`` only, so an imbalance
    cannot be seen and corrected -- robustness has to come from thrusting
    less. With the default weights the best steady thrust is interior
    (about 0.6 per axis) and symmetric, so the clean optimum never tilts,
    while a persistent asymmetric perturbation of that thrust does.

        pos' = pos + dt * vel
        vel' = (1 - drag) * vel + gain * a
        tilt' = tilt + tilt_rate * ((a_x - a_y) - tilt)

PointHopper
    One forward degree of freedom plus a posture height. Action 0 is the
    stride (drives forward speed, compresses the leg); actions 1 and 2 are
    lift joints. Physical state ``[x, v, h]``; observation ``[v]`` only -- the
    posture height is hidden, so the policy cannot servo it back above the
    failure line once a persistent perturbation starts pulling it down.

        v' = (1 - drag) * v + gain * a0
        h_target = h_nominal + lift * (a1 + a2) / 2 - stride * |a0|
        h' = h + height_rate * (h_target - h)

    The episode terminates (failure) when ``h' < h_min``. Full lift with the
    largest stride that keeps ``h_target >= h_min`` is optimal unperturbed,
    which puts the clean optimum right at the failure boundary. The slow
    posture filter (``height_rate``) averages out per-step action noise but
    not a bias that persists for the whole episode.

All step functions accept a leading batch dimension; the single-state
``reset``/``step`` API wraps the batched core.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from robustft.errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    horizon: int = 200
    w_v: float = 1.0
    w_a: float = 0.5
    alive_bonus: float = 1.0
    dt: float = 1.0
    drag: float = 0.1
    gain: float = 0.0849
    init_pos_bound: float = 0.1
    # PointWalker only
    tilt_rate: float = 0.1
    tilt_max: float = 0.3
    # PointHopper only
    h_nominal: float = 1.0
    h_min: float = 0.7
    lift: float = 0.825
    stride: float = 1.6
    height_rate: float = 0.1
    init_height_noise: float = 0.005
    # scripted expert
    expert_gain: float = 1.0
    expert_stride: float = 0.6

    def __post_init__(self):
        if self.horizon < 1 or self.action_dim < 1 or self.obs_dim < 1:
            raise ConfigError(f"invalid env spec {self}")
        if self.name not in _DYNAMICS:
            raise ConfigError(f"unknown environment {self.name!r}; known: {sorted(_DYNAMICS)}")

    @property
    def max_speed(self) -> float:
        """Upper bound on forward speed reachable under any admissible action."""
        if self.name == "PointWalker":
            # |vx| + |vy| <= 2 * gain / drag, projected on the diagonal.
            return np.sqrt(2.0) * self.gain / self.drag
        return self.gain / self.drag

    @property
    def return_bound(self) -> float:
        return self.horizon * (self.w_v * self.max_speed + self.alive_bonus)


@dataclass(frozen=True)
class EnvState:
    phys: np.ndarray
    t: int = 0


def _walker_reset(spec: EnvSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    phys = np.zeros((n, 5))
    phys[:, :2] = rng.uniform(-spec.init_pos_bound, spec.init_pos_bound, size=(n, 2))
    return phys


def _walker_obs(spec: EnvSpec, phys: np.ndarray) -> np.ndarray:
    return ((phys[:, 2] + phys[:, 3]) / np.sqrt(2.0))[:, None]


def _walker_step(spec: EnvSpec, phys: np.ndarray, a: np.ndarray):
    pos, vel = phys[:, :2], phys[:, 2:4]
    new = np.empty_like(phys)
    new[:, :2] = pos + spec.dt * vel
    new[:, 2:4] = (1.0 - spec.drag) * vel + spec.gain * a
    new[:, 4] = phys[:, 4] + spec.tilt_rate * ((a[:, 0] - a[:, 1]) - phys[:, 4])
    v_fwd = (new[:, 2] + new[:, 3]) / np.sqrt(2.0)
    return new, v_fwd, _walker_failed(spec, new)


def _walker_failed(spec: EnvSpec, phys: np.ndarray) -> np.ndarray:
    return np.abs(phys[:, 4]) > spec.tilt_max


def _hopper_reset(spec: EnvSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    phys = np.zeros((n, 3))
    phys[:, 0] = rng.uniform(-spec.init_pos_bound, spec.init_pos_bound, size=n)
    phys[:, 2] = spec.h_nominal + rng.uniform(-spec.init_height_noise, spec.init_height_noise, size=n)
    return phys


def _hopper_obs(spec: EnvSpec, phys: np.ndarray) -> np.ndarray:
    return phys[:, 1:2].copy()


def hopper_height_target(spec: EnvSpec, a: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    return spec.h_nominal + spec.lift * (a[:, 1] + a[:, 2]) / 2.0 - spec.stride * np.abs(a[:, 0])


def _hopper_step(spec: EnvSpec, phys: np.ndarray, a: np.ndarray):
    x, v, h = phys[:, 0], phys[:, 1], phys[:, 2]
    new = np.empty_like(phys)
    new[:, 0] = x + spec.dt * v
    new[:, 1] = (1.0 - spec.drag) * v + spec.gain * a[:, 0]
    new[:, 2] = h + spec.height_rate * (hopper_height_target(spec, a) - h)
    return new, new[:, 1], _hopper_failed(spec, new)


def _hopper_failed(spec: EnvSpec, phys: np.ndarray) -> np.ndarray:
    return phys[:, 2] < spec.h_min


_DYNAMICS = {
    "PointWalker": (_walker_reset, _walker_obs, _walker_step),
    "PointHopper": (_hopper_reset, _hopper_obs, _hopper_step),
}
_FAILED = {"PointWalker": _walker_failed, "PointHopper": _hopper_failed}

REGISTRY: dict[str, EnvSpec] = {}


def register(spec: EnvSpec) -> EnvSpec:
    REGISTRY[spec.name] = spec
    return spec


register(EnvSpec(name="PointWalker", obs_dim=1, action_dim=2, w_a=0.375, gain=0.0849))
register(EnvSpec(name="PointHopper", obs_dim=1, action_dim=3, w_a=0.001, gain=0.15))


def make(name: str, **overrides) -> EnvSpec:
    try:
        spec = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; known: {sorted(REGISTRY)}") from None
    return replace(spec, **overrides) if overrides else spec


def reward_fn(spec: EnvSpec, v_fwd, a_exec) -> np.ndarray:
    a_exec = np.atleast_2d(a_exec)
    return spec.w_v * np.asarray(v_fwd) - spec.w_a * np.sum(a_exec * a_exec, axis=1) + spec.alive_bonus


# -- batched core -----------------------------------------------------------------


def reset_batch(spec: EnvSpec, seeds) -> tuple[np.ndarray, np.ndarray]:
    """Reset one environment per seed. Returns ``(phys, obs)`` with a batch axis."""
    reset, obs_fn, _ = _DYNAMICS[spec.name]
    phys = np.concatenate([reset(spec, np.random.default_rng(int(s)), 1) for s in seeds])
    return phys, obs_fn(spec, phys)


def step_batch(spec: EnvSpec, phys: np.ndarray, actions: np.ndarray):
    """Advance a batch of states. Returns ``(phys', obs', reward, failed)``.

    Actions are clipped to [-1, 1] before the dynamics; the reward uses the
    clipped action. Horizon bookkeeping is left to the caller.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape != (len(phys), spec.action_dim):
        raise ShapeError(f"expected actions of shape ({len(phys)}, {spec.action_dim}), got {actions.shape}")
    if not np.all(np.isfinite(actions)):
        raise NumericError("non-finite action")
    a = np.clip(actions, -1.0, 1.0)
    _, obs_fn, dyn = _DYNAMICS[spec.name]
    new, v_fwd, failed = dyn(spec, phys, a)
    return new, obs_fn(spec, new), reward_fn(spec, v_fwd, a), failed


# -- single-state API -------------------------------------------------------------


def reset(spec: EnvSpec, seed: int) -> tuple[EnvState, np.ndarray]:
    phys, obs = reset_batch(spec, [seed])
    return EnvState(phys[0], 0), obs[0]


def step(spec: EnvSpec, state: EnvState, action) -> tuple[EnvState, np.ndarray, float, bool]:
    """One transition. ``done`` is true on failure or when the horizon is reached."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (spec.action_dim,):
        raise ShapeError(f"expected action of length {spec.action_dim}, got shape {action.shape}")
    phys, obs, reward, failed = step_batch(spec, state.phys[None, :], action[None, :])
    t = state.t + 1
    done = bool(failed[0]) or t >= spec.horizon
    return EnvState(phys[0], t), obs[0], float(reward[0]), done


def failed(spec: EnvSpec, state: EnvState) -> bool:
    return bool(_FAILED[spec.name](spec, state.phys[None, :])[0])


# -- reference policies -----------------------------------------------------------


def scripted_expert(spec: EnvSpec, obs) -> np.ndarray:
    """Deterministic near-optimal controller for unperturbed dynamics.

    PointWalker: symmetric feed-forward optimal thrust plus proportional
    feedback on forward speed toward the optimal cruise (saturates at rest).
    PointHopper: full lift and a fixed stride just inside the failure margin.
    Accepts a single observation or a batch.
    """
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    o = np.atleast_2d(obs)
    if spec.name == "PointWalker":
        a_star, v_star = walker_optimum(spec)
        per_axis = o[:, :1] / np.sqrt(2.0)
        act = np.clip(a_star + spec.expert_gain * (v_star - per_axis), -1.0, 1.0)
        act = np.repeat(act, 2, axis=1)
    elif spec.name == "PointHopper":
        act = np.tile([spec.expert_stride, 1.0, 1.0], (len(o), 1))
    else:
        raise ConfigError(f"no scripted expert for {spec.name!r}")
    return act[0] if single else act


def walker_optimum(spec: EnvSpec) -> tuple[float, float]:
    """Per-axis steady thrust maximising w_v * v_fwd - w_a * a^2, and its speed."""
    per_axis = spec.w_v * (spec.gain / spec.drag) / np.sqrt(2.0)
    a_star = float(np.clip(per_axis / (2.0 * spec.w_a), 0.0, 1.0))
    return a_star, a_star * spec.gain / spec.drag


def random_policy(spec: EnvSpec, obs, rng: np.random.Generator) -> np.ndarray:
    o = np.atleast_2d(obs)
    act = rng.uniform(-1.0, 1.0, size=(len(o), spec.action_dim))
    return act[0] if np.asarray(obs).ndim == 1 else act

"""Offline pretraining, perturbed fine-tuning and robustness evaluation."""

from __future__ import annotations

import csv
import json
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from robustft import curriculum as cur
from robustft import envs, perturb, td3
from robustft.errors import ConfigError, ParseError
from robustft.perturb import DeParams, PerturbMode
from robustft.replay import OfflineDataset, ReplayBuffer, Transition, init_with_offline
from robustft.rollout import rollout
from robustft.td3 import AgentState, Td3Hyper

CONDITIONS = ("normal", "random", "adversarial")
METRIC_COLUMNS = ("env_step", "eval_condition", "R_n_raw", "R_n_normalized", "q", "wall_time")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose (env, agent_init, explore, ...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class RunConfig:
    env: str = "PointWalker"
    seed: int = 0
    pretrain_steps: int = 100_000
    finetune_steps: int = 100_000
    eval_interval: int = 5_000
    eval_episodes: int = 10
    report_episodes: int = 100
    r_off: float = 0.1
    perturb_mode: PerturbMode = PerturbMode.ADVERSARIAL
    eps: float = 0.3
    curriculum: cur.CurriculumMode = cur.CurriculumMode.FIXED
    q: float = 0.5
    q_init: float = 0.0
    q_max: float = 1.0
    eta: float = 1.0
    beta: float = 0.9
    buffer_capacity: int = 1_000_000
    learning_starts: int = 256
    dataset_size: int = 100_000
    collect_noise: float = 0.1
    normalizer_episodes: int = 1000
    pool_size: int = 10
    log_wall_time: bool = True
    td3: Td3Hyper = field(default_factory=Td3Hyper)
    finetune_actor_lr: float | None = None  # actor step size for fine-tuning; None keeps td3.actor_lr
    de: DeParams = field(default_factory=DeParams)
    env_overrides: dict = field(default_factory=dict)
    out_dir: str = "runs"

    def __post_init__(self):
        self.perturb_mode = PerturbMode.parse(self.perturb_mode)
        self.curriculum = cur.CurriculumMode.parse(self.curriculum)
        if self.eval_episodes < 1 or self.report_episodes < 1:
            raise ConfigError("evaluation episode counts must be >= 1")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if self.finetune_steps < 0 or self.pretrain_steps < 0:
            raise ConfigError("step budgets must be non-negative")
        if self.finetune_steps % self.eval_interval != 0:
            raise ConfigError(f"eval_interval {self.eval_interval} must divide finetune_steps {self.finetune_steps}")
        for name in ("r_off", "q", "q_init", "q_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        envs.make(self.env, **self.env_overrides)

    @property
    def env_spec(self) -> envs.EnvSpec:
        return envs.make(self.env, **self.env_overrides)

    @property
    def finetune_td3(self) -> Td3Hyper:
        if self.finetune_actor_lr is None:
            return self.td3
        return replace(self.td3, actor_lr=self.finetune_actor_lr)

    @property
    def intervals(self) -> int:
        return max(self.finetune_steps // self.eval_interval, 1)

    def make_curriculum(self) -> cur.CurriculumState:
        if self.curriculum is cur.CurriculumMode.LINEAR:
            return cur.linear(self.q_init, self.q_max, self.intervals)
        if self.curriculum is cur.CurriculumMode.ADAPTIVE:
            return cur.adaptive(self.q_init, self.eta, self.beta)
        return cur.fixed(self.q)


# -- scores -----------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreNormalizer:
    env: str
    random_ref: float
    expert_ref: float

    def __post_init__(self):
        if not self.expert_ref > self.random_ref:
            raise ConfigError(f"degenerate normalizer: expert_ref={self.expert_ref} <= random_ref={self.random_ref}")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"env": self.env, "random_ref": self.random_ref, "expert_ref": self.expert_ref}, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ScoreNormalizer":
        try:
            d = json.loads(Path(path).read_text())
            return cls(d["env"], float(d["random_ref"]), float(d["expert_ref"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ParseError(f"bad normalizer file: {exc}", path=path) from exc


def normalize(raw, normalizer: ScoreNormalizer):
    """100 * (raw - random_ref) / (expert_ref - random_ref)."""
    return 100.0 * (np.asarray(raw, dtype=np.float64) - normalizer.random_ref) / (normalizer.expert_ref - normalizer.random_ref)


def compute_normalizer(spec: envs.EnvSpec, episodes: int = 1000, seed: int = 0) -> ScoreNormalizer:
    """Reference returns of the uniform-random policy and the scripted expert."""
    rng = substream(seed, "normalizer")
    seeds = rng.integers(0, 2**31, size=episodes)
    zeros = np.zeros((episodes, spec.action_dim))
    act_rng = substream(seed, "normalizer-actions")
    rand = rollout(spec, lambda o: envs.random_policy(spec, o, act_rng), zeros, 0.0, rng, seeds)
    expert = rollout(spec, lambda o: envs.scripted_expert(spec, o), zeros, 0.0, rng, seeds)
    return ScoreNormalizer(spec.name, float(rand.returns.mean()), float(expert.returns.mean()))


# -- data -------------------------------------------------------------------------


def collect_dataset(spec: envs.EnvSpec, size: int, noise: float, seed: int) -> OfflineDataset:
    """Roll out the scripted expert (plus Gaussian action noise) for ``size`` transitions."""
    rng = substream(seed, "collect")
    items = []
    while len(items) < size:
        state, obs = envs.reset(spec, int(rng.integers(0, 2**31)))
        done = False
        while not done and len(items) < size:
            a = envs.scripted_expert(spec, obs)
            if noise > 0:
                a = np.clip(a + rng.normal(0.0, noise, size=a.shape), -1.0, 1.0)
            state, obs_next, r, done = envs.step(spec, state, a)
            fail = envs.failed(spec, state)
            items.append(Transition(obs, a, r, obs_next, fail, done and not fail))
            obs = obs_next
    meta = {"env": spec.name, "policy": "scripted_expert", "noise": noise, "seed": seed}
    return OfflineDataset.from_transitions(items, meta)


# -- training ---------------------------------------------------------------------


def pretrain_offline(dataset: OfflineDataset, cfg: RunConfig, on_eval=None) -> AgentState:
    """TD3+BC on the dataset only: critic step every update, delayed BC actor step.

    ``on_eval(step, agent)`` is called every ``cfg.eval_interval`` gradient steps.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot pretrain on an empty dataset")
    dataset.check_env(cfg.env)
    spec = cfg.env_spec
    h = cfg.td3
    agent = td3.make_agent(spec.obs_dim, spec.action_dim, h, substream(cfg.seed, "agent_init"))
    rng = substream(cfg.seed, "pretrain")
    for step in range(1, cfg.pretrain_steps + 1):
        batch = dataset.sample(h.batch_size, rng)
        agent = td3.critic_update(agent, h, batch, rng)
        agent = td3.actor_update_td3bc(agent, h, batch)
        if on_eval is not None and step % cfg.eval_interval == 0:
            on_eval(step, agent)
    return agent


@dataclass
class EpisodeResult:
    agent: AgentState
    episode_return: float
    steps: int
    perturbed_steps: int
    failed: bool


@dataclass
class Streams:
    """Named random substreams used by the training loop."""

    reset: np.random.Generator
    explore: np.random.Generator
    perturb: np.random.Generator
    delta: np.random.Generator
    update: np.random.Generator
    evaluate: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, prefix: str = "") -> "Streams":
        return cls(*(substream(seed, prefix + name) for name in ("reset", "explore", "perturb", "delta", "update", "evaluate")))


def episode_loop(
    agent: AgentState,
    h: Td3Hyper,
    spec: envs.EnvSpec,
    delta,
    q: float,
    streams: Streams,
    train: bool,
    buffer: ReplayBuffer | None = None,
    learning_starts: int = 0,
    max_steps: int | None = None,
) -> EpisodeResult:
    """Run one episode, perturbing each step's action with probability ``q``.

    When training, the buffer receives the policy's pre-perturbation action
    together with the reward and next state produced by the executed action,
    and every env step is followed by a critic update plus the delayed actor
    update.
    """
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"q must lie in [0, 1], got {q}")
    if train and buffer is None:
        raise ConfigError("training episodes need a replay buffer")
    delta = np.asarray(delta, dtype=np.float64)
    state, obs = envs.reset(spec, int(streams.reset.integers(0, 2**31)))
    total, steps, hits, done, fail = 0.0, 0, 0, False, False
    limit = spec.horizon if max_steps is None else min(spec.horizon, max_steps)
    while not done and steps < limit:
        a = td3.select_action(agent, h, obs, explore=train, rng=streams.explore)
        hit = streams.perturb.random() < q
        a_exec = perturb.apply(a, delta) if hit else a
        state, obs_next, r, done = envs.step(spec, state, a_exec)
        fail = envs.failed(spec, state)
        steps += 1
        hits += hit
        total += r
        if train:
            buffer.push(Transition(obs, a, r, obs_next, fail, (done or steps >= limit) and not fail))
            if len(buffer) >= learning_starts:
                batch = buffer.sample(h.batch_size, streams.update)
                agent = td3.critic_update(agent, h, batch, streams.update)
                agent = td3.actor_update_td3(agent, h, batch)
        obs = obs_next
    return EpisodeResult(agent, total, steps, hits, fail)


def policy_evaluation(
    actor,
    spec: envs.EnvSpec,
    q: float,
    mode: PerturbMode,
    eps: float,
    pool,
    episodes: int,
    rng: np.random.Generator,
) -> float:
    """Mean raw return over ``episodes`` rollouts without training.

    A fresh perturbation is drawn per episode and applied with probability
    ``q`` at every step.
    """
    return float(evaluation_returns(actor, spec, q, mode, eps, pool, episodes, rng).mean())


def evaluation_returns(actor, spec, q, mode, eps, pool, episodes, rng) -> np.ndarray:
    if episodes < 1:
        raise ConfigError("need at least one evaluation episode")
    if isinstance(actor, AgentState):
        actor = actor.actor
    deltas = np.array([perturb.make_delta(mode, eps, spec.action_dim, pool, rng) for _ in range(episodes)])
    seeds = rng.integers(0, 2**31, size=episodes)
    return rollout(spec, actor, deltas, q, rng, seeds).returns


@dataclass
class ConditionStats:
    mean: float
    std: float
    episodes: int
    normalized: list[float]
    raw: list[float]

    @classmethod
    def from_raw(cls, raw, normalizer: ScoreNormalizer) -> "ConditionStats":
        raw = np.asarray(raw, dtype=np.float64)
        norm = normalize(raw, normalizer)
        return cls(float(norm.mean()), float(norm.std()), len(raw), norm.tolist(), raw.tolist())


@dataclass
class EvalReport:
    conditions: dict[str, ConditionStats]
    runs: int = 1

    def means(self) -> dict[str, float]:
        return {k: v.mean for k, v in self.conditions.items()}

    @classmethod
    def merge(cls, reports) -> "EvalReport":
        """Pool episodes across independent runs."""
        reports = list(reports)
        merged = {}
        for cond in reports[0].conditions:
            raw = [x for r in reports for x in r.conditions[cond].raw]
            norm = np.array([x for r in reports for x in r.conditions[cond].normalized])
            merged[cond] = ConditionStats(float(norm.mean()), float(norm.std()), len(norm), norm.tolist(), raw)
        return cls(merged, sum(r.runs for r in reports))

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "conditions": {k: {"mean": v.mean, "std": v.std, "episodes": v.episodes} for k, v in self.conditions.items()},
        }


def robustness_eval(actor, spec: envs.EnvSpec, pool, eps: float, normalizer: ScoreNormalizer,
                    episodes: int = 100, rng: np.random.Generator | None = None) -> EvalReport:
    """Normal / random / adversarial evaluation, perturbations applied on every step."""
    if pool is None or len(pool) == 0:
        raise ConfigError("robustness evaluation needs a non-empty adversarial pool")
    rng = np.random.default_rng(0) if rng is None else rng
    out = {}
    for cond in CONDITIONS:
        raw = evaluation_returns(actor, spec, 1.0, PerturbMode(cond), eps, pool, episodes, rng)
        out[cond] = ConditionStats.from_raw(raw, normalizer)
    return EvalReport(out)


# -- fine-tuning ------------------------------------------------------------------


@dataclass
class FinetuneResult:
    agent: AgentState
    q_trajectory: list[float]
    metrics: list[dict]
    env_steps: int
    perturbed_steps: int
    episodes: int
    buffer: ReplayBuffer | None = None


class MetricsLog:
    def __init__(self, log_wall_time: bool = True):
        self.rows: list[dict] = []
        self.log_wall_time = log_wall_time
        self.t0 = time.perf_counter()

    def add(self, env_step, condition, raw, norm, q):
        wall = round(time.perf_counter() - self.t0, 3) if self.log_wall_time else 0.0
        self.rows.append({"env_step": env_step, "eval_condition": condition, "R_n_raw": raw,
                          "R_n_normalized": norm, "q": q, "wall_time": wall})

    def write(self, path) -> None:
        write_metrics(self.rows, path)


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def finetune(
    agent: AgentState,
    cfg: RunConfig,
    dataset: OfflineDataset | None,
    pool,
    normalizer: ScoreNormalizer,
    schedule: cur.CurriculumState | None = None,
    log_conditions: tuple[str, ...] = CONDITIONS,
    keep_buffer: bool = False,
    on_eval=None,
) -> FinetuneResult:
    """Shared loop behind fixed-q and curriculum fine-tuning.

    Each episode draws a fresh perturbation for ``cfg.perturb_mode`` and runs
    with the schedule's current q. After every ``cfg.eval_interval`` env
    steps the policy is scored in ``log_conditions`` (q = 1) and, for
    curricula, at the current q; that score (normalized / 100) drives the
    adaptive update. ``on_eval(env_step, agent)`` runs after each evaluation
    (used for checkpointing).
    """
    spec = cfg.env_spec
    h = cfg.finetune_td3
    if cfg.perturb_mode is PerturbMode.ADVERSARIAL and (pool is None or len(pool) == 0):
        raise ConfigError("adversarial fine-tuning needs a non-empty perturbation pool")
    if dataset is not None:
        dataset.check_env(cfg.env)
    schedule = cfg.make_curriculum() if schedule is None else schedule
    streams = Streams.from_seed(cfg.seed, "finetune/")
    agent = td3.reset_optimizers(agent, h)
    buffer = ReplayBuffer(spec.obs_dim, spec.action_dim, min(cfg.buffer_capacity, cfg.finetune_steps + (len(dataset) if dataset is not None else 0) + 1))
    if dataset is not None and cfg.r_off > 0:
        init_with_offline(buffer, dataset, cfg.r_off, streams.delta)
    log = MetricsLog(cfg.log_wall_time)
    q_traj = [cur.current_q(schedule)]
    steps = hits = episodes = 0
    next_eval = cfg.eval_interval
    learning_starts = max(cfg.learning_starts, 1)
    while steps < cfg.finetune_steps:
        delta = perturb.make_delta(cfg.perturb_mode, cfg.eps, spec.action_dim, pool, streams.delta)
        res = episode_loop(agent, h, spec, delta, cur.current_q(schedule), streams, True, buffer,
                           learning_starts, cfg.finetune_steps - steps)
        agent = res.agent
        steps += res.steps
        hits += res.perturbed_steps
        episodes += 1
        while steps >= next_eval:
            schedule = _evaluate_and_update(agent, cfg, spec, pool, normalizer, schedule, log, log_conditions, next_eval, streams)
            q_traj.append(cur.current_q(schedule))
            if on_eval is not None:
                on_eval(next_eval, agent)
            next_eval += cfg.eval_interval
    return FinetuneResult(agent, q_traj, log.rows, steps, hits, episodes, buffer if keep_buffer else None)


def _evaluate_and_update(agent, cfg, spec, pool, normalizer, schedule, log, log_conditions, env_step, streams):
    q_now = cur.current_q(schedule)
    for cond in log_conditions:
        mode = PerturbMode(cond)
        if mode is PerturbMode.ADVERSARIAL and (pool is None or len(pool) == 0):
            continue
        raw = policy_evaluation(agent, spec, 1.0, mode, cfg.eps, pool, cfg.eval_episodes, streams.evaluate)
        log.add(env_step, cond, raw, float(normalize(raw, normalizer)), q_now)
    if schedule.mode is cur.CurriculumMode.FIXED:
        return cur.update(schedule)
    raw = policy_evaluation(agent, spec, q_now, cfg.perturb_mode, cfg.eps, pool, cfg.eval_episodes, streams.evaluate)
    norm = float(normalize(raw, normalizer))
    log.add(env_step, "train_q", raw, norm, q_now)
    return cur.update(schedule, norm / 100.0)


def finetune_fixed(agent, cfg: RunConfig, dataset, pool, normalizer, **kw) -> FinetuneResult:
    """Fixed perturbation probability ``cfg.q`` throughout."""
    return finetune(agent, cfg, dataset, pool, normalizer, cur.fixed(cfg.q), **kw)


def finetune_curriculum(agent, cfg: RunConfig, dataset, pool, normalizer, **kw) -> FinetuneResult:
    if cfg.curriculum not in (cur.CurriculumMode.LINEAR, cur.CurriculumMode.ADAPTIVE):
        raise ConfigError("finetune_curriculum needs a linear or adaptive curriculum")
    return finetune(agent, cfg, dataset, pool, normalizer, cfg.make_curriculum(), **kw)

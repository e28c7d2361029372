"""Multiplicative action perturbations and the DE adversary.

A perturbation ``delta`` lives in the box [-eps, eps]^N_a and acts on an
action as ``clip(a + delta * a, -1, 1)``. Three modes produce it once per
episode: normal (zero), random (uniform in the box) and adversarial (drawn
from a pool precomputed by differential evolution against a frozen policy).

Pool file format (``save_pool`` / ``load_pool``), UTF-8 text::

    robustft-pool/1
    eps=<float>
    action_dim=<int>
    count=<K>
    <K lines of action_dim comma-separated floats>
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from robustft.errors import ConfigError, ParseError, ShapeError


class PerturbMode(str, enum.Enum):
    NORMAL = "normal"
    RANDOM = "random"
    ADVERSARIAL = "adversarial"

    @classmethod
    def parse(cls, value) -> "PerturbMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown perturbation mode {value!r}") from None


@dataclass(frozen=True)
class DeParams:
    population_size: int = 20
    generations: int = 30
    differential_weight: float = 0.5
    crossover_rate: float = 0.9
    fitness_episodes: int = 2
    fitness_seeds: tuple[int, ...] = (1001, 1002)

    def __post_init__(self):
        object.__setattr__(self, "fitness_seeds", tuple(int(s) for s in self.fitness_seeds))
        if self.population_size < 4:
            raise ConfigError("DE rand/1 needs a population of at least 4")
        if self.generations < 0 or self.fitness_episodes < 1:
            raise ConfigError("generations must be >= 0 and fitness_episodes >= 1")
        if not 0.0 < self.differential_weight < 2.0 or not 0.0 <= self.crossover_rate <= 1.0:
            raise ConfigError("need F in (0, 2) and CR in [0, 1]")
        if len(self.fitness_seeds) < self.fitness_episodes:
            raise ConfigError("need one fitness seed per fitness episode")


@dataclass
class DeResult:
    best: np.ndarray
    best_fitness: float
    history: list[float] = field(default_factory=list)  # best-so-far after init and each generation
    evaluations: int = 0


def apply(a, delta) -> np.ndarray:
    """Executed action ``clip(a + delta * a, -1, 1)``; broadcasts over a batch axis."""
    a = np.asarray(a, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if a.shape[-1] != delta.shape[-1]:
        raise ShapeError(f"action length {a.shape[-1]} != perturbation length {delta.shape[-1]}")
    return np.clip(a + delta * a, -1.0, 1.0)


def sample_random(eps: float, action_dim: int, rng: np.random.Generator, size=None) -> np.ndarray:
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    shape = (action_dim,) if size is None else (size, action_dim)
    return rng.uniform(-eps, eps, size=shape)


def make_delta(mode: PerturbMode, eps: float, action_dim: int, pool, rng: np.random.Generator) -> np.ndarray:
    """Per-episode perturbation for the given mode."""
    mode = PerturbMode.parse(mode)
    if mode is PerturbMode.NORMAL:
        return np.zeros(action_dim)
    if mode is PerturbMode.RANDOM:
        return sample_random(eps, action_dim, rng)
    if pool is None or len(pool) == 0:
        raise ConfigError("adversarial mode needs a non-empty perturbation pool")
    return np.array(pool[rng.integers(len(pool))], dtype=np.float64)


def differential_evolution(fitness, dim: int, bound: float, de: DeParams, rng: np.random.Generator) -> DeResult:
    """Minimise ``fitness`` over the box [-bound, bound]^dim with DE/rand/1/bin.

    ``fitness`` maps an (n, dim) array of candidates to n values. Selection is
    synchronous: a whole generation of trials is evaluated before any
    replacement, and a trial replaces its parent when it is no worse.
    """
    n = de.population_size
    pop = rng.uniform(-bound, bound, size=(n, dim))
    fit = np.asarray(fitness(pop), dtype=np.float64)
    evals = n
    history = [float(fit.min())]
    idx = np.arange(n)
    for _ in range(de.generations):
        trials = np.empty_like(pop)
        for i in range(n):
            r1, r2, r3 = rng.choice(idx[idx != i], size=3, replace=False)
            mutant = pop[r1] + de.differential_weight * (pop[r2] - pop[r3])
            cross = rng.random(dim) < de.crossover_rate
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        np.clip(trials, -bound, bound, out=trials)
        trial_fit = np.asarray(fitness(trials), dtype=np.float64)
        evals += n
        better = trial_fit <= fit
        pop[better] = trials[better]
        fit[better] = trial_fit[better]
        history.append(float(fit.min()))
    k = int(np.argmin(fit))
    return DeResult(pop[k].copy(), float(fit[k]), history, evals)


def perturbed_fitness(spec, actor, de: DeParams):
    """Mean return of ``actor`` with each candidate applied on every step."""
    from robustft.rollout import rollout

    seeds = np.array(de.fitness_seeds[: de.fitness_episodes])

    def fitness(deltas):
        deltas = np.atleast_2d(deltas)
        rep = np.repeat(deltas, len(seeds), axis=0)
        res = rollout(spec, actor, rep, q=1.0, rng=np.random.default_rng(0), reset_seeds=np.tile(seeds, len(deltas)))
        return res.returns.reshape(len(deltas), len(seeds)).mean(axis=1)

    return fitness


def generate_adversarial_set(actor, spec, eps: float, de: DeParams, pool_size: int, rng: np.random.Generator, log=None):
    """Run ``pool_size`` independent DE searches and return their best vectors.

    ``log``, if given, receives one ``DeResult`` per run.
    """
    if pool_size < 1:
        raise ConfigError("pool_size must be >= 1")
    if actor.spec.output_dim != spec.action_dim or actor.spec.input_dim != spec.obs_dim:
        raise ConfigError("policy dimensions do not match the environment")
    fitness = perturbed_fitness(spec, actor, de)
    pool = []
    for _ in range(pool_size):
        res = differential_evolution(fitness, spec.action_dim, eps, de, rng)
        pool.append(res.best)
        if log is not None:
            log.append(res)
    return pool


def save_pool(pool, eps: float, path) -> None:
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    lines = ["robustft-pool/1", f"eps={eps!r}", f"action_dim={pool.shape[1]}", f"count={len(pool)}"]
    lines += [",".join(repr(float(v)) for v in row) for row in pool]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pool(path) -> tuple[list[np.ndarray], float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "robustft-pool/1":
        raise ParseError("not a perturbation pool file", path=path, line=1)
    try:
        eps = float(lines[1].removeprefix("eps="))
        dim = int(lines[2].removeprefix("action_dim="))
        count = int(lines[3].removeprefix("count="))
    except (IndexError, ValueError) as exc:
        raise ParseError(f"bad pool header: {exc}", path=path) from exc
    if len(lines) - 4 != count:
        raise ParseError(f"header declares {count} vectors, found {len(lines) - 4}", path=path, line=len(lines))
    pool = []
    for lineno, line in enumerate(lines[4:], start=5):
        try:
            row = np.array([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=lineno) from exc
        if row.shape != (dim,):
            raise ParseError(f"expected {dim} values", path=path, line=lineno)
        pool.append(row)
    return pool, eps

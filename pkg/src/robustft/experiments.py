"""Multi-seed experiment drivers shared by ``scripts/`` and the acceptance suite.

Each driver takes a prepared setup (dataset + normalizer built once from the
master seed) and per-seed artifacts (pretrained agent + adversarial pool),
then fine-tunes and evaluates under the three perturbation conditions.
Per-seed results are kept so callers can average however they need.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from robustft import curriculum as cur
from robustft import perturb, td3
from robustft.pipeline import (
    CONDITIONS,
    EvalReport,
    RunConfig,
    ScoreNormalizer,
    collect_dataset,
    compute_normalizer,
    finetune_curriculum,
    finetune_fixed,
    pretrain_offline,
    robustness_eval,
    substream,
)
from robustft.replay import OfflineDataset
from robustft.td3 import AgentState


@dataclass
class Prepared:
    cfg: RunConfig
    dataset: OfflineDataset
    normalizer: ScoreNormalizer


@dataclass
class SeedArtifacts:
    seed: int
    agent: AgentState
    pool: list[np.ndarray]


def prepare(cfg: RunConfig) -> Prepared:
    """Collect the offline dataset and normalizer references for ``cfg.seed``."""
    spec = cfg.env_spec
    dataset = collect_dataset(spec, cfg.dataset_size, cfg.collect_noise, cfg.seed)
    normalizer = compute_normalizer(spec, cfg.normalizer_episodes, cfg.seed)
    return Prepared(cfg, dataset, normalizer)


def _cache_key(cfg: RunConfig, seed: int) -> str:
    parts = (cfg.env, sorted(cfg.env_overrides.items()), cfg.pretrain_steps, cfg.td3, cfg.dataset_size,
             cfg.collect_noise, cfg.seed, seed)
    return hashlib.sha1(repr(parts).encode()).hexdigest()[:16]


def pretrain_seed(prep: Prepared, seed: int, cache_dir=None) -> SeedArtifacts:
    """Offline-pretrained agent for ``seed`` plus its DE pool.

    With ``cache_dir``, the agent is stored under a key derived from every
    setting that affects pretraining and reloaded on later calls.
    """
    cfg = replace(prep.cfg, seed=seed)
    agent = None
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{cfg.env}-{_cache_key(prep.cfg, seed)}"
        if (path / "manifest.json").exists():
            agent, _ = td3.load_agent(path)
    if agent is None:
        agent = pretrain_offline(prep.dataset, cfg)
        if path is not None:
            td3.save_agent(agent, cfg.td3, path)
    pool = perturb.generate_adversarial_set(agent.actor, cfg.env_spec, cfg.eps, cfg.de, cfg.pool_size,
                                            substream(seed, "de"))
    return SeedArtifacts(seed, agent, pool)


def evaluate(prep: Prepared, art: SeedArtifacts, agent: AgentState) -> EvalReport:
    cfg = prep.cfg
    return robustness_eval(agent.actor, cfg.env_spec, art.pool, cfg.eps, prep.normalizer,
                           cfg.report_episodes, substream(art.seed, "eval"))


def mean_scores(reports: list[EvalReport]) -> dict[str, float]:
    """Average over seeds of each seed's mean normalized score."""
    return {c: float(np.mean([r.conditions[c].mean for r in reports])) for c in CONDITIONS}


def trend_table(prep: Prepared, arts: list[SeedArtifacts], modes=CONDITIONS) -> dict[str, list[EvalReport]]:
    """Offline-only agent plus one fixed-q fine-tuning run per training condition."""
    table: dict[str, list[EvalReport]] = {"offline": [], **{m: [] for m in modes}}
    for art in arts:
        table["offline"].append(evaluate(prep, art, art.agent))
        for mode in modes:
            cfg = replace(prep.cfg, seed=art.seed, perturb_mode=mode)
            res = finetune_fixed(art.agent, cfg, prep.dataset, art.pool, prep.normalizer, log_conditions=())
            table[mode].append(evaluate(prep, art, res.agent))
    return table


@dataclass
class CurriculumComparison:
    adaptive: list[EvalReport] = field(default_factory=list)
    linear: list[EvalReport] = field(default_factory=list)
    adaptive_q: list[list[float]] = field(default_factory=list)
    linear_q: list[list[float]] = field(default_factory=list)
    q_max: list[float] = field(default_factory=list)


def held_exposure(q_trajectory) -> float:
    """Time-average of q: the value held during each interval (the last entry is never trained on)."""
    return float(np.mean(q_trajectory[:-1])) if len(q_trajectory) > 1 else float(q_trajectory[0])


def curriculum_comparison(prep: Prepared, arts: list[SeedArtifacts]) -> CurriculumComparison:
    """Adaptive run, then a linear run whose q_max gives the same average exposure (per seed)."""
    out = CurriculumComparison()
    for art in arts:
        cfg = replace(prep.cfg, seed=art.seed, curriculum=cur.CurriculumMode.ADAPTIVE)
        ada = finetune_curriculum(art.agent, cfg, prep.dataset, art.pool, prep.normalizer, log_conditions=())
        q_max = cur.matched_q_max(cfg.q_init, held_exposure(ada.q_trajectory), cfg.intervals)
        q_max = min(max(q_max, cfg.q_init), 1.0)
        lin_cfg = replace(cfg, curriculum=cur.CurriculumMode.LINEAR, q_max=q_max)
        lin = finetune_curriculum(art.agent, lin_cfg, prep.dataset, art.pool, prep.normalizer, log_conditions=())
        out.adaptive.append(evaluate(prep, art, ada.agent))
        out.linear.append(evaluate(prep, art, lin.agent))
        out.adaptive_q.append(ada.q_trajectory)
        out.linear_q.append(lin.q_trajectory)
        out.q_max.append(q_max)
    return out


def qmax_sweep(prep: Prepared, arts: list[SeedArtifacts], q_maxes) -> dict[float, list[EvalReport]]:
    """Linear curricula from ``cfg.q_init`` to each q_max."""
    out: dict[float, list[EvalReport]] = {q: [] for q in q_maxes}
    for art in arts:
        for q_max in q_maxes:
            cfg = replace(prep.cfg, seed=art.seed, curriculum=cur.CurriculumMode.LINEAR, q_max=q_max)
            res = finetune_curriculum(art.agent, cfg, prep.dataset, art.pool, prep.normalizer, log_conditions=())
            out[q_max].append(evaluate(prep, art, res.agent))
    return out


def count_inversions(values, increasing: bool) -> int:
    """Adjacent pairs that move against the expected direction."""
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    return int(np.sum(diffs < 0) if increasing else np.sum(diffs > 0))

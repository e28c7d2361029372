"""Command-line entry point: ``python3 -m robustft.cli <command> [flags]``.

Commands
    collect-data   scripted-expert dataset + normalizer reference file
    pretrain       offline TD3+BC, one checkpoint per seed
    gen-perturb    DE adversarial pool against each seed's pretrained actor
    finetune       fixed-q or curriculum fine-tuning per seed
    eval           three-condition robustness report across seeds
    sweep          linear (q_max) or adaptive (beta, eta) grid

Config files are INI-style with sections ``[run]`` (RunConfig fields),
``[td3]``, ``[de]``, ``[env]`` (environment overrides) and ``[sweep]``.
Any key can also be overridden with ``--set section.key=value``.

Output layout under ``--out``::

    data/dataset.jsonl, data/normalizer.json
    seed_<s>/pretrain/agent/, seed_<s>/pretrain/metrics.csv
    seed_<s>/pool.txt, seed_<s>/de_log.csv
    seed_<s>/finetune/<label>/agent/, metrics.csv, q_trajectory.csv
    report.json, report.csv
    sweep/<cell>/seed_<s>/..., sweep/report.csv, sweep/report.json

Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import enum
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from robustft import curriculum as cur
from robustft import envs, perturb, pipeline, replay, td3
from robustft.errors import ConfigError, NumericError, ParseError, ShapeError, StateError
from robustft.perturb import DeParams, PerturbMode
from robustft.pipeline import CONDITIONS, RunConfig
from robustft.td3 import Td3Hyper

log = logging.getLogger("robustft")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SWEEP_DEFAULT_GRID = (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)


@dataclass
class SweepGrid:
    mode: cur.CurriculumMode = cur.CurriculumMode.LINEAR
    q_max: tuple[float, ...] = SWEEP_DEFAULT_GRID
    beta: tuple[float, ...] = SWEEP_DEFAULT_GRID
    eta: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        self.mode = cur.CurriculumMode.parse(self.mode)
        if self.mode is cur.CurriculumMode.FIXED:
            raise ConfigError("sweep mode must be linear or adaptive")

    def cells(self) -> list[dict]:
        if self.mode is cur.CurriculumMode.LINEAR:
            if not self.q_max:
                raise ConfigError("empty q_max grid")
            return [{"q_max": q} for q in self.q_max]
        if not self.beta or not self.eta:
            raise ConfigError("empty beta/eta grid")
        return [{"beta": b, "eta": e} for b in self.beta for e in self.eta]


@dataclass
class CliConfig:
    run: RunConfig
    command: str = ""
    runs: int = 5
    workers: int = 1
    sweep: SweepGrid = field(default_factory=SweepGrid)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def seeds(self) -> list[int]:
        return [self.run.seed + i for i in range(self.runs)]


# -- config parsing ---------------------------------------------------------------


def _coerce(text: str, default, key: str):
    text = text.strip()
    try:
        if default is None:  # optional float
            return None if text.lower() in ("", "none") else float(text)
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
        if isinstance(default, enum.Enum):
            return type(default).parse(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t for t in text.replace(" ", "").split(",") if t]
            kind = type(default[0]) if default else float
            return tuple(kind(t) for t in items)
        return text
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def _apply(obj, values: dict[str, str], section: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    out = {}
    for key, text in values.items():
        if key not in names:
            raise ConfigError(f"unknown key [{section}] {key}")
        out[key] = _coerce(text, getattr(obj, key), f"{section}.{key}")
    try:
        return replace(obj, **out)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides=(), seed=None, runs=None, out=None, workers=None) -> CliConfig:
    """Build a CliConfig from an optional INI file plus ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ParseError(f"bad config file: {exc}", path=path) from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
    known = {"run", "td3", "de", "env", "sweep", "cli"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    def section(name):
        return dict(parser.items(name)) if parser.has_section(name) else {}

    h = _apply(Td3Hyper(), section("td3"), "td3")
    de = _apply(DeParams(), section("de"), "de")
    run_vals = section("run")
    if seed is not None:
        run_vals["seed"] = str(seed)
    if out is not None:
        run_vals["out_dir"] = str(out)
    base = RunConfig(env=run_vals.get("env", "PointWalker"))
    run = _apply(replace(base, td3=h, de=de), run_vals, "run")
    env_overrides = {}
    env_defaults = envs.make(run.env)
    for key, text in section("env").items():
        if key not in {f.name for f in dataclasses.fields(env_defaults)} or key == "name":
            raise ConfigError(f"unknown key [env] {key}")
        env_overrides[key] = _coerce(text, getattr(env_defaults, key), f"env.{key}")
    if env_overrides:
        run = replace(run, env_overrides=env_overrides)
    sweep = _apply(SweepGrid(), section("sweep"), "sweep")
    cli_vals = section("cli")
    cfg = CliConfig(run, runs=int(cli_vals.get("runs", 5)), workers=int(cli_vals.get("workers", 1)), sweep=sweep)
    if runs is not None:
        cfg = replace(cfg, runs=runs)
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    return cfg


# -- paths ------------------------------------------------------------------------


def out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir)


def dataset_path(cfg: RunConfig) -> Path:
    return out_dir(cfg) / "data" / "dataset.jsonl"


def normalizer_path(cfg: RunConfig) -> Path:
    return out_dir(cfg) / "data" / "normalizer.json"


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return out_dir(cfg) / f"seed_{seed}"


def pretrain_dir(cfg: RunConfig, seed: int) -> Path:
    return seed_dir(cfg, seed) / "pretrain"


def pool_path(cfg: RunConfig, seed: int) -> Path:
    return seed_dir(cfg, seed) / "pool.txt"


def regime_label(cfg: RunConfig) -> str:
    if cfg.curriculum is cur.CurriculumMode.FIXED:
        return cfg.perturb_mode.value
    return f"{cfg.curriculum.value}-{cfg.perturb_mode.value}"


def finetune_dir(cfg: RunConfig, seed: int, root: Path | None = None) -> Path:
    base = seed_dir(cfg, seed) if root is None else root / f"seed_{seed}"
    return base / "finetune" / regime_label(cfg)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path} (run the earlier pipeline stage first)")
    return path


def _load_inputs(cfg: RunConfig):
    dataset = replay.load_dataset(_require(dataset_path(cfg), "dataset"))
    dataset.check_env(cfg.env)
    normalizer = pipeline.ScoreNormalizer.load(_require(normalizer_path(cfg), "normalizer"))
    if normalizer.env != cfg.env:
        raise ConfigError(f"normalizer is for {normalizer.env!r}, config env is {cfg.env!r}")
    return dataset, normalizer


def _load_pool(cfg: RunConfig, seed: int, required: bool):
    path = pool_path(cfg, seed)
    if not path.exists():
        if required:
            _require(path, "perturbation pool")
        return None
    pool, eps = perturb.load_pool(path)
    if pool and len(pool[0]) != cfg.env_spec.action_dim:
        raise ConfigError(f"pool dimension {len(pool[0])} does not match {cfg.env}")
    return pool


def _load_checkpoint(path: Path, cfg: RunConfig):
    agent, _ = td3.load_agent(_require(path / "manifest.json", "checkpoint").parent)
    spec = cfg.env_spec
    if agent.obs_dim != spec.obs_dim or agent.action_dim != spec.action_dim:
        raise ConfigError(f"checkpoint {path} does not match environment {cfg.env}")
    return agent


# -- commands ---------------------------------------------------------------------


def cmd_collect_data(cfg: CliConfig) -> Path:
    run = cfg.run
    spec = run.env_spec
    log.info("collecting %d transitions on %s (noise %.3g)", run.dataset_size, run.env, run.collect_noise)
    dataset = pipeline.collect_dataset(spec, run.dataset_size, run.collect_noise, run.seed)
    path = dataset_path(run)
    path.parent.mkdir(parents=True, exist_ok=True)
    replay.save_dataset(dataset, path)
    normalizer = pipeline.compute_normalizer(spec, run.normalizer_episodes, run.seed)
    normalizer.save(normalizer_path(run))
    log.info("normalizer: random %.3f expert %.3f", normalizer.random_ref, normalizer.expert_ref)
    return path


def _pretrain_one(run: RunConfig, seed: int) -> Path:
    run = replace(run, seed=seed)
    dataset, normalizer = _load_inputs(run)
    spec = run.env_spec
    d = pretrain_dir(run, seed)
    d.mkdir(parents=True, exist_ok=True)
    rows = pipeline.MetricsLog(run.log_wall_time)
    rng = pipeline.substream(seed, "pretrain-eval")

    def on_eval(step, agent):
        raw = pipeline.policy_evaluation(agent, spec, 0.0, PerturbMode.NORMAL, run.eps, None, run.eval_episodes, rng)
        rows.add(step, "normal", raw, float(pipeline.normalize(raw, normalizer)), 0.0)
        log.info("seed %d pretrain step %d: normal %.1f", seed, step, rows.rows[-1]["R_n_normalized"])

    agent = pipeline.pretrain_offline(dataset, run, on_eval)
    td3.save_agent(agent, run.td3, d / "agent")
    rows.write(d / "metrics.csv")
    return d


def _map(cfg: CliConfig, fn, items):
    """Run ``fn(cfg.run, item)`` for each item, in a bounded pool when workers > 1."""
    items = list(items)
    if cfg.workers == 1 or len(items) == 1:
        return [fn(cfg.run, item) for item in items]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(fn, [cfg.run] * len(items), items))


def cmd_pretrain(cfg: CliConfig) -> list[Path]:
    _require(dataset_path(cfg.run), "dataset")
    return _map(cfg, _pretrain_one, cfg.seeds())


def _gen_perturb_one(run: RunConfig, seed: int) -> Path:
    run = replace(run, seed=seed)
    agent = _load_checkpoint(pretrain_dir(run, seed) / "agent", run)
    results = []
    pool = perturb.generate_adversarial_set(agent.actor, run.env_spec, run.eps, run.de, run.pool_size,
                                            pipeline.substream(seed, "de"), log=results)
    path = pool_path(run, seed)
    perturb.save_pool(pool, run.eps, path)
    with open(seed_dir(run, seed) / "de_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["member", "generation", "best_fitness"])
        for k, res in enumerate(results):
            for g, fit in enumerate(res.history):
                w.writerow([k, g, repr(fit)])
    log.info("seed %d: pool of %d (best fitness %.2f)", seed, len(pool), min(r.best_fitness for r in results))
    return path


def cmd_gen_perturb(cfg: CliConfig) -> list[Path]:
    return _map(cfg, _gen_perturb_one, cfg.seeds())


def _finetune_one(run: RunConfig, seed: int, root: Path | None = None) -> Path:
    run = replace(run, seed=seed)
    dataset, normalizer = _load_inputs(run)
    agent = _load_checkpoint(pretrain_dir(run, seed) / "agent", run)
    pool = _load_pool(run, seed, required=run.perturb_mode is PerturbMode.ADVERSARIAL)
    d = finetune_dir(run, seed, root)
    d.mkdir(parents=True, exist_ok=True)

    def checkpoint(step, a):
        td3.save_agent(a, run.finetune_td3, d / "agent")

    res = pipeline.finetune(agent, run, dataset, pool, normalizer, on_eval=checkpoint)
    td3.save_agent(res.agent, run.finetune_td3, d / "agent")
    pipeline.write_metrics(res.metrics, d / "metrics.csv")
    with open(d / "q_trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "q"])
        for n, q in enumerate(res.q_trajectory):
            w.writerow([n, repr(q)])
    log.info("seed %d: fine-tuned %s for %d env steps (%d perturbed)", seed, regime_label(run), res.env_steps, res.perturbed_steps)
    return d


def cmd_finetune(cfg: CliConfig) -> list[Path]:
    return _map(cfg, _finetune_one, cfg.seeds())


def _eval_one(run: RunConfig, seed: int, agent_dir: Path) -> pipeline.EvalReport:
    run = replace(run, seed=seed)
    normalizer = pipeline.ScoreNormalizer.load(_require(normalizer_path(run), "normalizer"))
    agent = _load_checkpoint(agent_dir, run)
    pool = _load_pool(run, seed, required=True)
    return pipeline.robustness_eval(agent.actor, run.env_spec, pool, run.eps, normalizer,
                                    run.report_episodes, pipeline.substream(seed, "eval"))


def _regimes(run: RunConfig, seed: int) -> dict[str, Path]:
    found = {}
    if (pretrain_dir(run, seed) / "agent" / "manifest.json").exists():
        found["offline"] = pretrain_dir(run, seed) / "agent"
    ft = seed_dir(run, seed) / "finetune"
    if ft.is_dir():
        for d in sorted(ft.iterdir()):
            if (d / "agent" / "manifest.json").exists():
                found[d.name] = d / "agent"
    return found


def write_report(reports: dict[str, pipeline.EvalReport], path_base: Path) -> None:
    """Table-shaped report: one row per evaluation condition, one column per regime."""
    data = {label: rep.to_dict() for label, rep in reports.items()}
    path_base.with_suffix(".json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    with open(path_base.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        labels = list(reports)
        w.writerow(["condition"] + labels)
        for cond in CONDITIONS:
            w.writerow([cond] + [f"{reports[l].conditions[cond].mean:.1f}±{reports[l].conditions[cond].std:.1f}" for l in labels])


def cmd_eval(cfg: CliConfig) -> Path:
    run = cfg.run
    per_regime: dict[str, list] = {}
    for seed in cfg.seeds():
        regimes = _regimes(run, seed)
        if not regimes:
            raise ConfigError(f"no checkpoints under {seed_dir(run, seed)}")
        for label, agent_dir in regimes.items():
            per_regime.setdefault(label, []).append(_eval_one(run, seed, agent_dir))
    reports = {label: pipeline.EvalReport.merge(reps) for label, reps in per_regime.items()}
    base = out_dir(run) / "report"
    write_report(reports, base)
    for label, rep in reports.items():
        log.info("%-24s %s", label, "  ".join(f"{c} {rep.conditions[c].mean:6.1f}" for c in CONDITIONS))
    return base.with_suffix(".json")


def _cell_name(cell: dict) -> str:
    return "_".join(f"{k}={v:g}" for k, v in cell.items())


def _sweep_cell(run: RunConfig, job) -> dict:
    cell, seed, root = job
    run = replace(run, **cell)
    d = _finetune_one(run, seed, root)
    rep = _eval_one(run, seed, d / "agent")
    return {"cell": cell, "seed": seed, "report": rep}


def cmd_sweep(cfg: CliConfig) -> Path:
    run = replace(cfg.run, curriculum=cfg.sweep.mode)
    cells = cfg.sweep.cells()
    root = out_dir(run) / "sweep"
    jobs = [({**cell}, seed, root / _cell_name(cell)) for cell in cells for seed in cfg.seeds()]
    results = _map(replace(cfg, run=run), _sweep_cell, jobs)
    rows, summary = [], {}
    for cell in cells:
        reps = [r["report"] for r in results if r["cell"] == cell]
        merged = pipeline.EvalReport.merge(reps)
        means = merged.means()
        means["average"] = float(np.mean([means[c] for c in CONDITIONS]))
        name = _cell_name(cell)
        summary[name] = {"cell": cell, "runs": merged.runs, **means,
                         **{f"{c}_std": merged.conditions[c].std for c in CONDITIONS}}
        rows.append([name] + [f"{means[c]!r}" for c in (*CONDITIONS, "average")])
    best = max(summary, key=lambda k: summary[k]["average"])
    (root / "report.json").write_text(json.dumps({"cells": summary, "selected": best}, indent=2, sort_keys=True) + "\n")
    with open(root / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", *CONDITIONS, "average"])
        w.writerows(rows)
    log.info("sweep: %d cells x %d seeds; selected %s", len(cells), cfg.runs, best)
    return root / "report.json"


COMMANDS = {
    "collect-data": cmd_collect_data,
    "pretrain": cmd_pretrain,
    "gen-perturb": cmd_gen_perturb,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustft", description="Offline-to-online fine-tuning under action perturbations.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--seed", type=int, help="master seed (run i uses seed + i)")
    p.add_argument("--runs", type=int, help="number of independent seeds")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes for seeds/cells")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.runs, args.out, args.workers)
        cfg = replace(cfg, command=args.command)
        COMMANDS[args.command](cfg)
    except (ConfigError, ShapeError, StateError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ParseError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

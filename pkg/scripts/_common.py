"""Argument handling shared by the experiment scripts."""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from robustft import cli, experiments
from robustft.pipeline import CONDITIONS


def parser(description: str, default_config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    root = Path(__file__).resolve().parent.parent
    p.add_argument("--config", type=Path, default=root / "configs" / default_config)
    p.add_argument("--runs", type=int, help="number of seeds (default from config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--cache", type=Path, help="directory for cached pretrained agents")
    p.add_argument("--out", type=Path, help="write a JSON summary here")
    return p


def setup(args):
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(message)s")
    cfg = cli.load_config(args.config, args.overrides, runs=args.runs)
    t0 = time.perf_counter()
    prep = experiments.prepare(cfg.run)
    arts = []
    for seed in cfg.seeds():
        arts.append(experiments.pretrain_seed(prep, seed, args.cache))
        logging.info("seed %d pretrained (%.0fs)", seed, time.perf_counter() - t0)
    return cfg, prep, arts


def row(label: str, scores: dict) -> str:
    return f"{label:<22}" + "".join(f"{scores[c]:>13.1f}" for c in CONDITIONS)


def header() -> str:
    return f"{'':<22}" + "".join(f"{c:>13}" for c in CONDITIONS)


def dump(path, data) -> None:
    if path is not None:
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

#!/usr/bin/env python3
"""Adaptive vs linear curriculum at equal average perturbation exposure."""

import sys

import numpy as np
from _common import dump, header, parser, row, setup

from robustft import experiments


def main(argv=None):
    args = parser(__doc__.splitlines()[0], "hopper_curriculum.ini").parse_args(argv)
    cfg, prep, arts = setup(args)
    res = experiments.curriculum_comparison(prep, arts)
    ada, lin = experiments.mean_scores(res.adaptive), experiments.mean_scores(res.linear)
    print(f"{cfg.run.env}, {len(arts)} seeds, q_init {cfg.run.q_init}")
    print(header())
    print(row("adaptive", ada))
    print(row("linear (matched)", lin))
    for seed, qa, qm in zip(cfg.seeds(), res.adaptive_q, res.q_max):
        print(f"seed {seed}: adaptive q {np.round(qa, 2).tolist()}  linear q_max {qm:.3f}")
    dump(args.out, {"adaptive": ada, "linear": lin, "adaptive_q": res.adaptive_q,
                    "linear_q": res.linear_q, "q_max": res.q_max})
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Offline-only vs fixed-q fine-tuning under each perturbation condition.

Prints a conditions x regimes table of normalized scores (mean over seeds).
"""

import sys

from _common import dump, header, parser, row, setup

from robustft import experiments


def main(argv=None):
    args = parser(__doc__.splitlines()[0], "hopper_fixed_q.ini").parse_args(argv)
    cfg, prep, arts = setup(args)
    table = experiments.trend_table(prep, arts)
    summary = {label: experiments.mean_scores(reps) for label, reps in table.items()}
    print(f"{cfg.run.env}, {len(arts)} seeds, evaluation conditions as columns")
    print(header())
    for label, scores in summary.items():
        print(row("offline" if label == "offline" else f"FT-{label}", scores))
    dump(args.out, {"regimes": summary, "per_seed": {k: [r.means() for r in v] for k, v in table.items()}})
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Linear-curriculum sweep over q_max, showing the nominal/robust trade-off."""

import sys

from _common import dump, header, parser, row, setup

from robustft import experiments


def main(argv=None):
    args = parser(__doc__.splitlines()[0], "walker_sweep.ini").parse_args(argv)
    cfg, prep, arts = setup(args)
    q_maxes = cfg.sweep.q_max
    res = experiments.qmax_sweep(prep, arts, q_maxes)
    summary = {q: experiments.mean_scores(reps) for q, reps in res.items()}
    offline = experiments.mean_scores([experiments.evaluate(prep, a, a.agent) for a in arts])
    print(f"{cfg.run.env}, {len(arts)} seeds")
    print(header())
    print(row("offline", offline))
    for q, scores in summary.items():
        print(row(f"q_max={q:g}", scores))
    dump(args.out, {"offline": offline, "q_max": {str(q): s for q, s in summary.items()}})
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Train every semantics configuration on a task over several seeds.

Prints one CSV row per run and a per-kind median at the end.

    python scripts/compare_semantics.py --task clustering --seeds 10 --steps 300
    python scripts/compare_semantics.py --task digitadd --kinds logltn logltn-max --seeds 5
"""

import argparse
import statistics
import sys
import time

from logltn import experiments
from logltn.semantics import Kind


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--task", choices=("clustering", "digitadd"), default="clustering")
    p.add_argument("--kinds", nargs="+", choices=[k.value for k in Kind],
                   default=["logltn", "logltn-max", "logltn-sum"])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--steps", type=int, help="default: the task preset")
    args = p.parse_args(argv)

    metric = "ari" if args.task == "clustering" else "digit_accuracy,sum_accuracy"
    print(f"kind,seed,{metric},seconds")
    scores = {}
    for kind in args.kinds:
        for seed in range(args.seeds):
            start = time.perf_counter()
            if args.task == "clustering":
                result = (experiments.run_clustering_seed(kind, seed, args.steps),)
            else:
                result = experiments.run_digitadd_seed(kind, seed, args.steps)
            scores.setdefault(kind, []).append(result[0])
            cells = ",".join(f"{v:.4f}" for v in result)
            print(f"{kind},{seed},{cells},{time.perf_counter() - start:.1f}", flush=True)
    for kind, vals in scores.items():
        print(f"# median {kind}: {statistics.median(vals):.4f}", file=sys.stderr)


if __name__ == "__main__":
    main()

"""DyMoE accuracy on the acceptance synthetic as the memory fraction p varies.

    python scripts/memory_sweep.py --ps 0.01 0.05 0.2 --seeds 0 1 2 3 4
"""

import argparse
from pathlib import Path

import numpy as np

from dymoe.experiments import ACCEPTANCE_SYNTH, acceptance_config, run_method, summarize, synth
from dymoe.metrics import write_metrics


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/memory_sweep")
    parser.add_argument("--ps", type=float, nargs="+", default=[0.01, 0.05, 0.2])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = parser.parse_args()

    for p in args.ps:
        aas = []
        for seed in args.seeds:
            cfg = acceptance_config(seed, p=p)
            res = run_method("dymoe", synth(ACCEPTANCE_SYNTH, seed), cfg)
            out = Path(args.out) / f"p{p}_seed{seed}"
            out.mkdir(parents=True, exist_ok=True)
            write_metrics(out / "metrics.json", res.metrics, res.wall_times,
                          {"method": "dymoe", "seed": seed, "k": cfg.k, "p": p, "mode": cfg.mode})
            aas.append(summarize(res)["AA"])
        print(f"p={p}: median AA {np.median(aas):.3f} over {len(aas)} seeds", flush=True)


if __name__ == "__main__":
    main()

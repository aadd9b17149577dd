"""Accuracy and per-epoch cost as the active-expert budget k varies.

Trains DyMoE on the eight-block stretched synthetic for each k and seed,
then times sparse against dense training epochs from the final checkpoint
of the first seed.

    python scripts/k_sweep.py --ks 1 2 3 --seeds 0 1 2
"""

import argparse
from pathlib import Path

import numpy as np

from dymoe.experiments import STRETCHED_SYNTH, acceptance_config, epoch_time_ratio, run_method, summarize, synth
from dymoe.metrics import write_metrics


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/k_sweep")
    parser.add_argument("--ks", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    for k in args.ks:
        aas, blob = [], None
        for seed in args.seeds:
            seq = synth(STRETCHED_SYNTH, seed)
            cfg = acceptance_config(seed, k=k)
            res = run_method("dymoe", seq, cfg)
            out = Path(args.out) / f"k{k}_seed{seed}"
            out.mkdir(parents=True, exist_ok=True)
            write_metrics(out / "metrics.json", res.metrics, res.wall_times,
                          {"method": "dymoe", "seed": seed, "k": k, "p": cfg.p, "mode": cfg.mode})
            aas.append(summarize(res)["AA"])
            if blob is None:
                blob = res.checkpoints[-1]
        timing = epoch_time_ratio(synth(STRETCHED_SYNTH, args.seeds[0]), blob, acceptance_config(args.seeds[0], k=k))
        print(f"k={k}: median AA {np.median(aas):.3f}; epoch sparse {timing['sparse']:.2f}s "
              f"dense {timing['dense']:.2f}s ratio {timing['ratio']:.2f}", flush=True)


if __name__ == "__main__":
    main()

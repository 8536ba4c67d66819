"""BNN+GLc on bimodal-1D: is model disagreement lower inside the training interval?"""
import argparse
import os

import numpy as np

from misfit.training import TrainConfig, train
from misfit.uncertainty import uncertainty_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--model", default="glc")
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--out-dir", default=None, help="write one curve CSV per seed here")
    args = ap.parse_args()
    wins = {"U_V": 0, "U_W": 0}
    for seed in range(args.seeds):
        model = train(TrainConfig(dataset="bimodal1d", model=args.model, bayes=True, seed=seed, epochs=args.epochs))
        curve = uncertainty_curve(model, seed=seed)
        parts = []
        for m in wins:
            inside, outside = curve.region_means(m)
            wins[m] += inside < outside
            parts.append(f"{m} in={inside:.4g} out={outside:.4g}")
        h_in, h_out = curve.region_means("H")
        print(f"seed={seed} " + " ".join(parts) + f" H in={h_in:.3f} out={h_out:.3f} ({model.wall_time:.0f}s)", flush=True)
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            curve.to_csv(os.path.join(args.out_dir, f"bnn_{args.model}_seed{seed}.csv"))
    print(f"in-distribution < out-of-distribution: U_V {wins['U_V']}/{args.seeds}, U_W {wins['U_W']}/{args.seeds}")


if __name__ == "__main__":
    main()

"""Train GL heads on the bimodal problems and compare learned moments with the ground truth."""
import argparse

import numpy as np

from misfit.datasets import GroundTruth
from misfit.training import CONVERGED_GL, TrainConfig, moment_match_check, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    default = CONVERGED_GL["gl"]["epochs"]
    ap.add_argument("--epochs-1d", type=int, default=default)
    ap.add_argument("--epochs-2d", type=int, default=default)
    args = ap.parse_args()
    probes = np.linspace(-3.5, 3.5, 71)
    for dataset, epochs in (("bimodal1d", args.epochs_1d), ("bimodal2d", args.epochs_2d)):
        gt = GroundTruth(dataset)
        for seed in range(args.seeds):
            model = train(TrainConfig(dataset=dataset, model="gl", seed=seed, epochs=epochs))
            rep = moment_match_check(model, gt, probes)
            _, cov = model.moments(probes)
            print(
                f"{dataset} seed={seed} mean_err={rep.mean_rel_err:.4f} cov_err={rep.cov_rel_err:.4f} "
                f"avg_cov={np.round(cov.mean(axis=0), 1).tolist()} ({model.wall_time:.0f}s)",
                flush=True,
            )


if __name__ == "__main__":
    main()

"""Paired comparison: full pipeline, its ablations and the single-stage baselines.

Runs every variant on the same corrupted split per seed and prints mean test
accuracy at the best validation epoch.
"""
import argparse

import numpy as np

from upllrs import data, separation, trainer
from upllrs.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--separation", type=float, default=6.0)
    ap.add_argument("--mu", type=float, default=0.5)
    ap.add_argument("--eta", type=float, default=0.1)
    args = ap.parse_args()

    names = ["full", "augmented", "no_unreliable", "no_rs", "baseline_cce", "baseline_mae"]
    table = []
    for seed in range(args.seeds):
        raw = data.synth_gaussians(args.n, 10, args.dim, args.separation, seed)
        ds = data.LabeledDataset(data.standardize(raw.features), raw.labels, 10)
        split = data.synthesize(ds, args.mu, args.eta, seed)
        tr = split.train
        sep = separation.run_recursive_separation(tr, split.val, separation.SeparationConfig(seed=seed))
        rel, unl = tr.subset(sep.reliable_indices), tr.features[sep.unreliable_indices]
        none = unl[:0]
        runs = {
            "full": ("general", rel, unl), "augmented": ("augmented", rel, unl),
            "no_unreliable": ("general", rel, none), "no_rs": ("general", tr, none),
            "baseline_cce": ("baseline_cce", tr, none), "baseline_mae": ("baseline_mae", tr, none),
        }
        row = [trainer.train(TrainConfig(mode=m, seed=seed), r, u, split.val, split.test)
               .summary["test_acc_at_best_val"] for m, r, u in (runs[k] for k in names)]
        table.append(row)
        print(f"seed {seed}: " + "  ".join(f"{k}={v:.4f}" for k, v in zip(names, row)), flush=True)
    means = np.mean(table, axis=0)
    print("mean:   " + "  ".join(f"{k}={v:.4f}" for k, v in zip(names, means)))


if __name__ == "__main__":
    main()

"""Held-out prediction: CRPS of the fitted model against the pure-nugget
(D = tau2 I) model on hidden sites.

Run:  python scripts/run_prediction_study.py --trials 3 --grid 30 --m 20
"""
import csv
import os

from fsbgl.simlab import StudyConfig, run_holdout_study

from _common import parser, setup


def main():
    p = parser(__doc__.split("\n\n")[0], trials=3, workers=False)
    p.add_argument("--grid", type=int, default=30, help="sites per side")
    p.add_argument("--m", type=int, default=20, help="replicates")
    p.add_argument("--fraction", type=float, default=0.1, help="share of sites hidden")
    args = p.parse_args()
    setup(args)
    cfg = StudyConfig(grid_side=args.grid, m_values=(args.m,), trials=args.trials,
                      master_seed=args.seed)
    records, means = run_holdout_study(cfg, args.fraction)
    with open(os.path.join(args.out, "prediction_study.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "family", "mean_crps", "median_crps", "rmse", "lam"])
        for r in records:
            for fam, s in r.scores.items():
                w.writerow([r.trial, fam, repr(s.mean_crps), repr(s.median_crps),
                            repr(s.rmse), repr(r.lams[fam])])
    for fam, v in means.items():
        print(f"{fam:16s} mean CRPS {v:.4f}")
    fams = list(means)
    print(f"ratio {means[fams[0]] / means[fams[1]]:.3f}")


if __name__ == "__main__":
    main()

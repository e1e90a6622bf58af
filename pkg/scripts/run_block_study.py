"""Recovery study with a block-diagonal Q: medians of Q and parameter errors
at m = 10 and m = 100 replicates.

Run:  python scripts/run_block_study.py --trials 10 --workers 8
"""
import os

from fsbgl.simlab import StudyConfig, run_study

from _common import parser, setup, show


def main():
    args = parser(__doc__.split("\n\n")[0], trials=10).parse_args()
    setup(args)
    cfg = StudyConfig(trials=args.trials, workers=args.workers, master_seed=args.seed)
    study = run_study(cfg)
    study.to_csv(os.path.join(args.out, "block_study.csv"))
    study.trials_csv(os.path.join(args.out, "block_trials.csv"))
    show(study)


if __name__ == "__main__":
    main()

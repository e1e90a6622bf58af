"""Recovery studies for hub-and-spoke and random-graph precision matrices.

Run:  python scripts/run_graph_studies.py --trials 10 --workers 8
"""
import os

from fsbgl.simlab import PrecisionGraphSpec, StudyConfig, run_study

from _common import parser, setup, show


def main():
    p = parser(__doc__.split("\n\n")[0], trials=10)
    p.add_argument("--m", type=int, nargs="+", default=[10, 100])
    args = p.parse_args()
    setup(args)
    for kind in ("hub_and_spoke", "random_graph"):
        cfg = StudyConfig(graph=PrecisionGraphSpec(kind), trials=args.trials,
                          m_values=tuple(args.m), workers=args.workers, master_seed=args.seed)
        study = run_study(cfg)
        study.to_csv(os.path.join(args.out, f"{kind}_study.csv"))
        study.trials_csv(os.path.join(args.out, f"{kind}_trials.csv"))
        print(f"# {kind}")
        show(study)


if __name__ == "__main__":
    main()

"""Shared argument handling for the study scripts."""

import argparse
import logging
import os


def parser(description, trials, workers=True):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--trials", type=int, default=trials)
    if workers:
        p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=20240101, help="master seed")
    p.add_argument("--out", default="results", help="output folder")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup(args):
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    os.makedirs(args.out, exist_ok=True)


def show(study):
    for row in study.table():
        print("  ".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row))

#!/usr/bin/env python3
"""Run the synthetic zero-shot benchmark and print the recall table.

Same engine as `xmodal synth-bench`, kept as a script so the knobs are
easy to edit for experiments (concept count, noise, architecture).
"""

import argparse
import sys

from xmodal.synthetic import SynthConfig, report_tsv, run_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--loss", choices=("m3l", "patr", "both"), default="both")
    parser.add_argument("--concepts", type=int, default=500)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--train-captions", type=int, default=8)
    args = parser.parse_args()

    cfg = SynthConfig(
        seed=args.seed,
        n_concepts=args.concepts,
        noise_sigma=args.noise,
        train_captions_per_concept=args.train_captions,
    )
    losses = ("m3l", "patr") if args.loss == "both" else (args.loss,)
    sys.stdout.write(report_tsv(run_benchmark(cfg, losses=losses)))
    return 0


if __name__ == "__main__":
    sys.exit(main())

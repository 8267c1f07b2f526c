#!/usr/bin/env python3
"""Generate a synthetic register corpus with mock fixtures and ground truth."""

import argparse
from pathlib import Path

from patentpipe.synthetic import generate_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("data/synthetic"))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--volumes", type=int, default=3)
    parser.add_argument("--entries-per-volume", type=int, default=110)
    parser.add_argument("--split-fraction", type=float, default=0.10)
    args = parser.parse_args()

    corpus = generate_corpus(
        args.out,
        seed=args.seed,
        volume_count=args.volumes,
        entries_per_volume=args.entries_per_volume,
        split_fraction=args.split_fraction,
    )
    total = sum(len(v.truth) for v in corpus.volumes)
    print(f"corpus at {corpus.root}")
    print(f"  volumes:   {len(corpus.volumes)}")
    print(f"  entries:   {total}")
    print(f"  fixtures:  {corpus.fixtures_path}")
    print(f"  reference: {corpus.perfect_csv}")
    for volume in corpus.volumes:
        print(f"  manifest:  {volume.manifest_path}")


if __name__ == "__main__":
    main()

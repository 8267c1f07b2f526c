#!/usr/bin/env python3
"""End-to-end demo: synthesize a corpus, run every stage, benchmark, and cost it.

Leaves a fully populated output directory behind, ready for
`patentpipe review-serve --out <out> --manifest <...>`.
"""

import argparse
import json
from pathlib import Path

from patentpipe.cli import main as cli


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=Path("data/demo"))
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    from patentpipe.synthetic import generate_corpus

    corpus = generate_corpus(args.workdir / "corpus", seed=args.seed)
    out = args.workdir / "out"

    manifest_args = []
    for path in corpus.manifest_paths:
        manifest_args += ["--manifest", str(path)]

    assert cli(["run", *manifest_args, "--out", str(out), "--fixtures", str(corpus.fixtures_path)]) == 0
    assert cli([
        "bench",
        "--candidate", str(out / "merged.csv"),
        "--perfect", str(corpus.perfect_csv),
        "--out", str(out),
    ]) == 0

    prices = args.workdir / "prices.json"
    prices.write_text(json.dumps({
        "pro": {"input_per_1m": 1.25, "output_per_1m": 10.00},
        "lite": {"input_per_1m": 0.10, "output_per_1m": 0.40},
    }))
    assert cli(["cost", "--prices", str(prices), "--out", str(out)]) == 0

    report = json.loads((out / "reports" / "benchmark.json").read_text())
    print("\n== benchmark ==")
    print(json.dumps(report["matching"], indent=2))
    print("cer by volume:", report["cer_by_volume"])
    print("\n== cost ==")
    print((out / "reports" / "cost.txt").read_text())
    print("review queue:")
    flag_files = sorted((out / "flags").glob("*.jsonl"))
    open_flags = sum(1 for f in flag_files for line in f.read_text().splitlines() if '"create"' in line)
    print(f"  {open_flags} flags across {len(flag_files)} volumes")
    serve = ["patentpipe", "review-serve", "--out", str(out)]
    for path in corpus.manifest_paths:
        serve += ["--manifest", str(path)]
    print("serve the review UI with:\n  " + " ".join(serve))


if __name__ == "__main__":
    main()

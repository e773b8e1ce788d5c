#!/usr/bin/env python3
"""End-to-end demo: stage 1 filtering, stage 2 beam search, and the stats
report, all with scripted backends (no network, fully deterministic).

Usage: python3 scripts/demo_pipeline.py [--out /tmp/oracle-forge-demo]
"""

import argparse
import os
import sys

sys.path.insert(0, "src")

from oracle_forge import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="/tmp/oracle-forge-demo")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = os.path.join(args.out, "config.yaml")
    os.makedirs(args.out, exist_ok=True)
    with open(cfg, "w", encoding="utf-8") as fh:
        fh.write(
            "backend: scripted-noisy\n"
            "corruption: {p_bad_rule: 0.3, p_bad_fact: 0.1}\n"
            "corpus: {kind: chain, count: 30, hops: 4}\n"
        )

    stage1_out = os.path.join(args.out, "stage1")
    stage2_out = os.path.join(args.out, "stage2")
    seed = str(args.seed)

    print("== stage 1 (clean oracle responses, strict filter) ==")
    code = cli.main(
        ["stage1", "--config", cfg, "--backend", "scripted-oracle",
         "--out", stage1_out, "--seed", seed]
    )
    if code:
        return code

    print("\n== stage 2 (noisy backend, engine-guided beam search) ==")
    code = cli.main(["stage2", "--config", cfg, "--out", stage2_out, "--seed", seed])
    if code:
        return code

    print("\n== stats ==")
    return cli.main(["stats", os.path.join(stage2_out, "audit.jsonl")])


if __name__ == "__main__":
    sys.exit(main())

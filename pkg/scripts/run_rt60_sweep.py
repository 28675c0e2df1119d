#!/usr/bin/env python3
"""Angular error vs reverberation time (diffuse late-field surrogate).

Sweeps the surrogate t60 over single-source scenes at 20 dB SNR for the
three localizers with reference steering vectors.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from shamans.cli import main as cli_main


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/rt60_sweep")
    parser.add_argument("--count", type=int, default=30)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--t60s", default="0,0.15,0.3,0.6")
    parser.add_argument("--duration", type=float, default=1.0)
    args = parser.parse_args(argv)

    config = {
        "seed": args.seed,
        "scene": {"source_indices": [0], "snr_db": 20.0,
                  "duration_s": args.duration,
                  "source_kind": {"kind": "sas", "alpha": 1.5, "scale": 1.0}},
    }
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(config, fh)
        cfg_path = fh.name
    rc = cli_main([
        "sweep", "--config", cfg_path, "--axis", "t60_s", "--values", args.t60s,
        "--count", str(args.count), "--methods", "shamans,music-1,srp-phat",
        "--sv-models", "ref", "--out", args.out,
    ])
    Path(cfg_path).unlink()
    if rc == 0:
        print(f"summary: {Path(args.out) / 'summary.csv'}")
    return rc


if __name__ == "__main__":
    sys.exit(run())

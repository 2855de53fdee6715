"""
Sweeping stride and tau from a config file
==========================================

The command-line tool reads a JSON experiment, runs every method on every
head and writes CSV/JSON reports. ``sweep`` expands each method over a grid
of strides and thresholds.
"""

import csv
import json
import tempfile
from pathlib import Path

from sparsegrid.cli import main

config = {
    "schema": 1,
    "workload": {"seq_len": 512, "head_dim": 32, "num_heads": 4, "pattern": "scatter", "seed": 2},
    "methods": [{"strategy": "head-rr", "block_size": 32, "label": "rr"},
                {"strategy": "anti-diagonal", "block_size": 32, "label": "antidiag"}],
    "grid": {"stride": [4, 8, 16, 32], "tau": [0.7, 0.9]},
}

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "sweep.json").write_text(json.dumps(config))
    code = main(["sweep", str(tmp / "sweep.json"), "--out", str(tmp / "out")])
    print("exit code", code)
    with open(tmp / "out" / "sweep.csv", newline="") as f:
        for row in csv.DictReader(f):
            print(f"{row['strategy']:8s} S={row['stride']:>2} tau={row['tau']:<4} "
                  f"sparsity={float(row['sparsity']):.3f} recall={float(row['recall']):.3f} "
                  f"search_ops={float(row['search_ops']):.0f}")

"""Leak AUC vs. utility trade-off for the noise protections.

Runs the iso and Marvell sweep configs and prints one report table each.

    python scripts/tradeoff.py [--out runs/tradeoff] [--seeds 0,1,2]
"""
import argparse
import os

from splitshield.harness.config import load_config
from splitshield.harness.experiment import REPORT_COLUMNS, report_table, run_sweep, write_rows

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/tradeoff")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--attack", default="norm", choices=["norm", "hint"])
    args = ap.parse_args()
    seeds = "[" + args.seeds + "]"
    for name in ("iso_sweep", "marvell_sweep"):
        cfg = load_config(os.path.join(ROOT, "configs", f"{name}.toml"), [f"sweep.seeds={seeds}"])
        rows = run_sweep(cfg, os.path.join(args.out, name))
        table = report_table([{k: str(v) for k, v in r.items()} for r in rows], args.attack)
        print(f"# {name} ({cfg.sweep.param}), leak = {args.attack} attack, median over seeds {args.seeds}")
        print(write_rows([{c: r[c] for c in REPORT_COLUMNS} for r in table]), end="")


if __name__ == "__main__":
    main()

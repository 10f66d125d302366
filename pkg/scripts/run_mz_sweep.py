"""Dyadic sweep of the weighted sampling ratio, all three space variants.

Thin front end over the `cubaflow mz` subcommand; writes one CSV/JSON pair
per variant into --out (default current directory).
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from cubaflow.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=float, default=8.0)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--nmax", type=int, default=4096)
    ap.add_argument("--out", default=".")
    args = ap.parse_args()

    worst = 0
    for variant in ("diffusion", "algebraic-value", "algebraic-gradient"):
        print(f"--- {variant}")
        code = cli_main([
            "mz", "--manifold", "circle", "--space", variant,
            "--L", f"{args.L:g}", "--trials", str(args.trials),
            "--nmax", str(args.nmax), "--out", args.out,
        ])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())

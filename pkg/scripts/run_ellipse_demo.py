"""Fit the first arc-length Fourier mode of an ellipse by ambient polynomials.

Prints the residual curve for a list of axis ratios.  Equal axes collapse
to Chebyshev identities (exact fits); unequal axes leave a nonzero floor
at every degree, shrinking geometrically.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from cubaflow import Manifold, circumference, enumerate_basis, restriction_fit_residual


def curve(a: float, b: float, max_deg: int) -> list[float]:
    m = Manifold("ellipse", a, b)
    space = enumerate_basis(m, 1.0)
    f1 = lambda ch: space.evaluate(ch)[:, 0]
    return restriction_fit_residual(m, f1, max_deg)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", default="1:1,2:1,4:1")
    ap.add_argument("--max-deg", type=int, default=12)
    args = ap.parse_args()

    header = "axes      arc-len    " + "".join(f"deg{d:<2d}     " for d in range(1, args.max_deg + 1))
    print(header)
    for token in args.ratios.split(","):
        a, b = (float(t) for t in token.split(":"))
        ell = circumference(a, b)
        row = "".join(f"{r:.3e}  " for r in curve(a, b, args.max_deg))
        print(f"{a:g}:{b:<6g}  {ell:8.5f}  {row}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

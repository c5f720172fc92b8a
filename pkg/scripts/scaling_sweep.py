"""Nest scaling statistics across critical orders.

For each order: the solved parameter, the first level from which the
scaling laws hold, the largest recent ratio of successive closest-return
distances, the tightest inequality margin at the deepest three levels, the
fixed-point bound for this order (when finite) and the empirical gap
constants C1 <= C2 for the three scale-free gaps.

    python scripts/scaling_sweep.py --ells 2 4 8 16 32 64 --depth 15
"""
import argparse
import csv
import sys

from fibwalk.combinatorics import solve_parameter
from fibwalk.nest import (
    UnboundedError, gap_constants, lambda_threshold, rho_infinity, rho_upper_bound, scaling_report,
)
from fibwalk.real import to_decimal


def row(ell, depth, n_min):
    f = solve_parameter(ell, depth).fibmap()
    rep = scaling_report(f, depth)
    margins = {name: min(r.margin for r in rep.deepest(name)) for name in rep.row_names()}
    tight = min(margins, key=margins.get)
    try:
        bound = to_decimal(rho_upper_bound(ell), 5)
    except UnboundedError:
        bound = "unbounded"
    out = {
        "ell": ell,
        "lambda_star": f"{float(f.lam):.17f}",
        "scaling_from_level": lambda_threshold(rep),
        "rho_recent_max": f"{float(rho_infinity(rep)):.4f}",
        "tightest_row": tight,
        "tightest_margin": f"{float(margins[tight]):.4f}",
        "rho_bound": bound,
    }
    for gap, pair in gap_constants(rep, n_min).items():
        out[f"C1_{gap}"] = f"{float(pair['C1']):.4f}"
        out[f"C2_{gap}"] = f"{float(pair['C2']):.4f}"
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ells", type=int, nargs="+", default=[2, 4, 8, 16, 32])
    ap.add_argument("--depth", type=int, default=15)
    ap.add_argument("--gap-from", type=int, default=4, help="first level used for C1, C2")
    ap.add_argument("--out", help="CSV path; stdout when absent")
    args = ap.parse_args()

    rows = []
    for ell in args.ells:
        rows.append(row(ell, args.depth, args.gap_from))
        print(f"ell={ell} done", file=sys.stderr)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(out, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        out.close()


if __name__ == "__main__":
    main()

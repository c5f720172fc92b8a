"""Empirical transition laws fed back into the scaling-condition checker.

For each order, tallies one induced step from Lebesgue-uniform points of
level r, pairs the frequencies with the measured annulus lengths, fits
constants and reports every inequality's verdict and worst margin.  Whether
the inequalities hold is a finding, not an expectation.

    python scripts/nu_margins.py --ells 8 16 32 --depth 15 --level 6 --samples 4000
"""
import argparse
import json

from fibwalk.combinatorics import solve_parameter
from fibwalk.induced import build_annuli, constants_for, empirical_pair, estimate_transitions
from fibwalk.nest import build_nest
from fibwalk.real import short_decimal
from fibwalk.walk import validate_scaling


def margins(ell, depth, level, samples, seed):
    f = solve_parameter(ell, depth).fibmap()
    part = build_annuli(build_nest(f, depth))
    trans = estimate_transitions(f, part, level, samples, seed)
    pair = empirical_pair(part, trans)
    consts = constants_for(pair)
    checks = validate_scaling(pair, consts)
    return {
        "ell": ell,
        "level": level,
        "samples": samples,
        "nu_hat": [round(p, 6) for p in trans.nu_hat()],
        "mean_jump": round(trans.mean_jump(), 4),
        "constants": {"rho_minus": short_decimal(consts.rho_minus), "rho_plus": short_decimal(consts.rho_plus),
                      "Omega1": short_decimal(consts.Omega1), "Omega2": short_decimal(consts.Omega2),
                      "C": short_decimal(consts.C), "in_model_range": consts.in_model_range},
        "checks": {name: rep.to_json() for name, rep in checks.items()},
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ells", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--depth", type=int, default=15)
    ap.add_argument("--level", type=int, default=6)
    ap.add_argument("--samples", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=6)
    ap.add_argument("--out", help="JSON path; stdout when absent")
    args = ap.parse_args()

    doc = [margins(ell, args.depth, args.level, args.samples, args.seed) for ell in args.ells]
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")


if __name__ == "__main__":
    main()

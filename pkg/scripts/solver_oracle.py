"""Independent check of the Fibonacci parameter, without kneading bisection.

For each k the map has superstable parameters where c is periodic with
period S_k and the earlier closest returns are S_0 .. S_{k-1}.  A coarse
sign-change scan over [0.75, 1] finds them at a small k; each later level is
found by scanning a window around the previous one.  All surviving chains
converge to the Fibonacci parameter from both sides, so their spread brackets it.

Uses mpmath only, so it shares no arithmetic with the package.  Takes about
two minutes for ell=2 down to a 1e-18 bracket.

    python scripts/solver_oracle.py --ell 2 --tol 1e-18
"""
import argparse
import time

import mpmath as mp

HALF = mp.mpf(1) / 2


def cutting_times(K):
    S = [1, 2]
    while len(S) < K + 1:
        S.append(S[-1] + S[-2])
    return S


def return_depth(lam, ell, S, N):
    """How many leading closest-return times of c agree with S (orbit up to N)."""
    x, best, k = HALF, None, 0
    for n in range(1, N + 1):
        x = lam * (1 - abs(2 * x - 1) ** ell)
        d = abs(x - HALF)
        if best is None or d < best:
            best = d
            if k < len(S) and S[k] == n:
                k += 1
            else:
                return k
    return k


def displacement(lam, ell, n):
    x = HALF
    for _ in range(n):
        x = lam * (1 - abs(2 * x - 1) ** ell)
    return x - HALF


def scan(ell, k, S, lo, hi, grid):
    n = S[k]
    pts = [lo + (hi - lo) * i / grid for i in range(grid + 1)]
    vals = [displacement(p, ell, n) for p in pts]
    roots = []
    for a, b, ga, gb in zip(pts, pts[1:], vals, vals[1:]):
        if ga * gb < 0:
            r = mp.findroot(lambda L: displacement(L, ell, n), (a, b),
                            solver="anderson", verify=False)
            if return_depth(r, ell, S[:k], S[k] - 1) == k:
                roots.append(r)
    return roots


def dedupe(xs):
    out = []
    for x in sorted(xs):
        if not out or abs(x - out[-1]) > mp.mpf(2) ** (-mp.mp.prec // 2):
            out.append(x)
    return out


def oracle(ell, tol, k_start=5, grid=400, prec=256, verbose=True):
    """(lo, hi): the outermost surviving chains once their spread is below tol."""
    global HALF
    mp.mp.prec = prec
    HALF = mp.mpf(1) / 2
    tol = mp.mpf(tol)
    S = cutting_times(60)
    live = [(r, mp.mpf("1e-3")) for r in scan(ell, k_start, S, mp.mpf("0.75"), mp.mpf(1), 4000)]
    k = k_start
    while True:
        k += 1
        found = []
        for centre, width in live:
            for r in scan(ell, k, S, centre - width, centre + width, grid):
                found.append((r, 8 * abs(r - centre)))
        live = [min((p for p in found if p[0] == r), key=lambda p: p[1]) for r in dedupe(r for r, _ in found)]
        if not live:
            raise RuntimeError(f"no superstable parameter survives at k={k}")
        spread = live[-1][0] - live[0][0]
        if verbose:
            print(f"k={k} chains={len(live)} spread={mp.nstr(spread, 3)}", flush=True)
        if len(live) > 1 and spread < tol:
            return live[0][0], live[-1][0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ell", type=int, default=2)
    ap.add_argument("--tol", default="1e-18")
    ap.add_argument("--prec", type=int, default=256)
    ap.add_argument("--compare-depth", type=int, default=12)
    args = ap.parse_args()
    t = time.time()
    lo, hi = oracle(args.ell, args.tol, prec=args.prec)
    print("bracket", mp.nstr(lo, 25), mp.nstr(hi, 25), f"({time.time() - t:.0f} s)")
    from fibwalk.combinatorics import solve_parameter

    lam = mp.mpf(str(solve_parameter(args.ell, args.compare_depth).lambda_star))
    print("solver ", mp.nstr(lam, 25), "distance to midpoint", mp.nstr(abs(lam - (lo + hi) / 2), 3),
          "spread", mp.nstr(hi - lo, 3))


if __name__ == "__main__":
    main()

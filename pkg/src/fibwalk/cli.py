"""Command-line front end.

Every command prints one JSON document with sorted keys: the echoed config,
the result, and an ``ok`` flag.  Reals are decimal strings.  Exit codes:
0 ok, 1 inequality failure, 2 not found, 3 precision cap, 64 usage.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from gmpy2 import mpfr

from . import combinatorics, distortion, induced, nest, walk
from .fibmap import FibMap
from .real import DEFAULT_BITS, PrecisionExhausted, precision_cap, short_decimal, to_decimal, working

EXIT_OK, EXIT_FAIL, EXIT_NOT_FOUND, EXIT_PRECISION, EXIT_USAGE = 0, 1, 2, 3, 64
SCHEMA_VERSION = "1"

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def check(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return check


def _depth(text):
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("depth must be at least 2")
    return value


# --- map sources ----------------------------------------------------------------


def _add_map_args(p, min_depth=2):
    p.add_argument("--ell", required=True, help="critical order")
    p.add_argument("--depth", type=_depth, required=True, help="combinatorial depth K")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--lambda", dest="lam", help="parameter as a decimal string; solved when absent")
    src.add_argument("--solution", type=Path, help="JSON written by the solve command")
    p.add_argument("--bits", type=int, default=DEFAULT_BITS)
    p.add_argument("--precision-cap", type=int, default=None)
    p.set_defaults(min_depth=min_depth)


def _load_map(args) -> FibMap:
    if args.depth < args.min_depth:
        raise UsageError(f"{args.command} needs depth at least {args.min_depth}")
    if args.solution:
        doc = json.loads(args.solution.read_text())
        res = doc.get("result", doc)
        bits = int(res["precision_bits"])
        return FibMap.make(res["lambda_star"], res["ell"], bits)
    if args.lam:
        return FibMap.make(args.lam, args.ell, args.bits)
    sol = combinatorics.solve_parameter(args.ell, args.depth, args.bits, _cap(args))
    return sol.fibmap()


def _cap(args):
    return args.precision_cap if args.precision_cap else precision_cap()


# --- commands ---------------------------------------------------------------------


def cmd_solve(args):
    sol = combinatorics.solve_parameter(args.ell, args.depth, args.bits, _cap(args))
    return sol.to_json(), sol.verdict.ok


def cmd_combinatorics(args):
    f = _load_map(args)
    verdict = combinatorics.is_fibonacci_to_depth(f, args.depth)
    S = combinatorics.fibonacci_times(args.depth)
    recs = combinatorics.closest_returns(f, S[-1])
    return {
        "lambda": to_decimal(f.lam),
        "verdict": verdict.to_json(),
        "closest_returns": [
            {"time": r.time, "distance": to_decimal(r.distance, 64), "side": r.side} for r in recs
        ],
    }, verdict.ok


def cmd_scaling_report(args):
    f = _load_map(args)
    report = nest.scaling_report(f, args.depth)
    doc = nest.report_json(report)
    hard = [r for name in report.row_names() for r in report.deepest(name)]
    lam_ok = doc["lambda_threshold"] is not None and doc["lambda_threshold"] <= args.depth - 3
    ok = lam_ok and all(r.passed for r in hard)
    if args.format == "csv":
        return nest.report_csv(report), ok
    return doc, ok


def cmd_distortion_report(args):
    f = _load_map(args)
    batch = distortion.distortion_batch(f, args.samples, args.seed, args.n_max, args.koebe_samples)
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["n", "B_value", "sum_lengths", "max_length"],
                                lineterminator="\n")
        writer.writeheader()
        for rec in batch.records:
            writer.writerow(rec.row())
        return buf.getvalue(), batch.passed
    return {"summary": batch.summary(), "records": [r.row() for r in batch.records]}, batch.passed


def _read_config(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _pair_from(cfg: dict) -> tuple[walk.SequencePair, walk.ScalingConstants]:
    try:
        pair = walk.SequencePair(
            tuple(Fraction(x) for x in cfg["a"]),
            tuple(Fraction(x) for x in cfg["nu"]),
            a_tail=Fraction(cfg["a_tail"]) if cfg.get("a_tail") is not None else None,
            nu_tail=Fraction(cfg["nu_tail"]) if cfg.get("nu_tail") is not None else None,
        )
        c = cfg["constants"]
        consts = walk.ScalingConstants(
            Fraction(c["rho_minus"]), Fraction(c["rho_plus"]),
            Fraction(c.get("Omega1", 1)), Fraction(c.get("Omega2", 1)),
            Fraction(c.get("C", 2)), int(c.get("d", 0)), int(c.get("k0", 2)),
            Fraction(c["a0"]) if c.get("a0") is not None else None,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad scaling config: {exc}") from exc
    return pair, consts


def cmd_validate_scaling(args):
    pair, consts = _pair_from(_read_config(args.config))
    reports = walk.validate_scaling(pair, consts)
    doc = {name: r.to_json() for name, r in reports.items()}
    doc["K_plus"] = to_decimal(consts.K_plus, 64)
    doc["in_model_range"] = consts.in_model_range
    ok = walk.scaling_ok(reports)
    if ok:
        derived = walk.derived_bounds(pair, consts, require_valid=False)
        doc["derived"] = {k: v.to_json() for k, v in derived.items() if k != "K_plus"}
        ok = all(v.ok for k, v in derived.items() if k != "K_plus")
    return doc, ok


def _law_from(cfg: dict) -> walk.IncrementLaw:
    try:
        return walk.IncrementLaw.make([Fraction(x) for x in cfg["nu"]], Fraction(cfg.get("tail_ratio", 0)))
    except walk.InvalidLawError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad law: {exc}") from exc


def _fraction_decimal(q: Fraction) -> str:
    with working(128):
        return to_decimal(mpfr(q.numerator) / q.denominator, 64)


def cmd_walk_sim(args):
    cfg = _read_config(args.config)
    missing = {"nu", "k0", "r0", "s", "horizon", "n_walkers", "seed"} - set(cfg)
    if missing:
        raise UsageError(f"walk config lacks {sorted(missing)}")
    law = _law_from(cfg)
    ens = walk.simulate_walk(law, int(cfg["k0"]), int(cfg["r0"]), int(cfg["s"]), int(cfg["horizon"]),
                             int(cfg["n_walkers"]), int(cfg["seed"]), threads=args.threads)
    m1, m2 = law.moments()
    doc = ens.summary()
    doc.update({
        "config": cfg,
        "m1": _fraction_decimal(m1),
        "m2": _fraction_decimal(m2),
        "drift": str(ens.drift),
        "chow_threshold": walk.chow_threshold(law, int(cfg["k0"])),
    })
    if args.walkers_csv:
        with open(args.walkers_csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["walker", "phi_final", "tau", "late_slope", "hr_statistic"])
            for i in range(ens.n_walkers):
                writer.writerow([i, int(ens.phi_final[i]), int(ens.tau[i]),
                                 short_decimal(ens.late_slope[i]), short_decimal(ens.hr_statistic[i])])
    # the simulation itself has no hard assertion beyond the Doob identity
    return doc, ens.doob_ok


def _partition(args):
    f = _load_map(args)
    levels = nest.build_nest(f, args.depth)
    return f, induced.build_annuli(levels)


def cmd_estimate_nu(args):
    f, part = _partition(args)
    trans = induced.estimate_transitions(f, part, args.level, args.samples, args.seed, args.warmup)
    doc = trans.to_json()
    doc.update({
        "ell": to_decimal(f.ell),
        "K": part.K,
        "seed": args.seed,
        "a": [to_decimal(x, 64) for x in part.lengths()],
        "annulus_ratios": [to_decimal(x, 64) for x in part.annulus_ratios()],
    })
    if args.level - trans.k0 - 1 >= 1 and trans.tallied:
        pair = induced.empirical_pair(part, trans)
        try:
            consts = walk.fit_constants(pair)
            doc["scaling"] = {k: v.to_json() for k, v in walk.validate_scaling(pair, consts).items()}
        except walk.ScalingFailure as exc:
            doc["scaling"] = {"error": str(exc)}
    # induced_step raises on a k_to < k_from - 2 violation, so reaching here is success
    return doc, True


def cmd_basin_mc(args):
    f, part = _partition(args)
    rep = induced.montecarlo_basin(f, part, args.samples, args.horizon, args.seed, args.r0,
                                   args.start_level)
    doc = rep.summary()
    doc["a"] = [to_decimal(x, 64) for x in part.lengths()]
    return doc, True


COMMANDS = {
    "solve": cmd_solve,
    "combinatorics": cmd_combinatorics,
    "scaling-report": cmd_scaling_report,
    "distortion-report": cmd_distortion_report,
    "validate-scaling": cmd_validate_scaling,
    "walk-sim": cmd_walk_sim,
    "estimate-nu": cmd_estimate_nu,
    "basin-mc": cmd_basin_mc,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fibwalk", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=_positive(int), default=1)
    parser.add_argument("--output", type=Path, help="write here instead of stdout")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="find the Fibonacci parameter")
    p.add_argument("--ell", required=True)
    p.add_argument("--depth", type=_depth, required=True)
    p.add_argument("--bits", type=int, default=DEFAULT_BITS)
    p.add_argument("--precision-cap", type=int, default=None)

    p = sub.add_parser("combinatorics", help="closest returns and the Fibonacci verdict")
    _add_map_args(p)

    p = sub.add_parser("scaling-report", help="nest geometry and scaling inequalities")
    _add_map_args(p, min_depth=10)
    p.add_argument("--format", choices=["json", "csv"], default="json")

    p = sub.add_parser("distortion-report", help="random cross-ratio, two-interval and Koebe checks")
    _add_map_args(p)
    p.add_argument("--samples", type=_positive(int), default=1000)
    p.add_argument("--koebe-samples", type=_positive(int), default=10)
    p.add_argument("--n-max", type=_positive(int), default=40)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")

    p = sub.add_parser("validate-scaling", help="check a sequence pair against the scaling condition")
    p.add_argument("--config", type=Path, required=True)

    p = sub.add_parser("walk-sim", help="simulate the level random walk")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--walkers-csv", type=Path)

    p = sub.add_parser("estimate-nu", help="empirical transition law from one annulus")
    _add_map_args(p, min_depth=4)
    p.add_argument("--level", type=_positive(int), required=True)
    p.add_argument("--samples", type=_positive(int), default=1000)
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("basin-mc", help="Monte Carlo of the induced level process")
    _add_map_args(p, min_depth=10)
    p.add_argument("--samples", type=_positive(int), default=200)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--r0", type=int, default=3)
    p.add_argument("--start-level", type=_positive(int))
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("pipeline", help="run a manifest of commands in order")
    p.add_argument("--manifest", type=Path, required=True)
    return parser


def _echo(args) -> dict:
    skip = {"output", "min_depth", "log_level"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or value is None:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _render(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def run(args) -> tuple[int, str]:
    """(exit code, text) for one parsed command."""
    try:
        result, ok = COMMANDS[args.command](args)
    except UsageError as exc:
        return EXIT_USAGE, _render({"command": args.command, "error": str(exc), "ok": False})
    except combinatorics.NotFoundError as exc:
        return EXIT_NOT_FOUND, _render({"command": args.command, "error": str(exc), "ok": False})
    except PrecisionExhausted as exc:
        return EXIT_PRECISION, _render({"command": args.command, "error": str(exc), "ok": False})
    except (walk.InvalidLawError, walk.TailUndeclaredError, walk.DivergentTailError,
            walk.ScalingFailure, ValueError) as exc:
        return EXIT_USAGE, _render({"command": args.command, "error": str(exc), "ok": False})
    except (induced.InducedStepViolation, nest.BranchIdentificationError) as exc:
        return EXIT_FAIL, _render({"command": args.command, "error": str(exc), "ok": False})
    if isinstance(result, str):
        return (EXIT_OK if ok else EXIT_FAIL), result
    doc = {
        "command": args.command,
        "config": _echo(args),
        "ok": bool(ok),
        "result": result,
        "schema_version": SCHEMA_VERSION,
    }
    return (EXIT_OK if ok else EXIT_FAIL), _render(doc)


def run_pipeline(parser, manifest: Path) -> tuple[int, str]:
    """A manifest is {"steps": [{"name": ..., "argv": [...]}, ...]}; argv may use {name} for earlier outputs."""
    try:
        doc = json.loads(manifest.read_text())
        steps = doc["steps"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        return EXIT_USAGE, _render({"command": "pipeline", "error": str(exc), "ok": False})
    base = manifest.parent
    outputs, results, worst = {}, [], EXIT_OK
    for step in steps:
        name = step["name"]
        argv = [a.format(**outputs) for a in step["argv"]]
        args = parser.parse_args(argv)
        code, text = run(args)
        out = base / step.get("output", f"{name}.json")
        out.write_text(text)
        outputs[name] = str(out)
        results.append({"name": name, "exit_code": code, "output": str(out)})
        worst = max(worst, code)
        if code not in (EXIT_OK, EXIT_FAIL):
            break
    return worst, _render({"command": "pipeline", "ok": worst == EXIT_OK, "steps": results})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    if args.command == "pipeline":
        code, text = run_pipeline(parser, args.manifest)
    else:
        code, text = run(args)
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())

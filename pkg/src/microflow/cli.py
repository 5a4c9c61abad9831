"""Command-line front end.

    microflow run --scenario steps-distinct --out runs/demo
    microflow sweep --axis N --values 1 2 5 10 20
    microflow compare --scenarios steps-distinct triangle-capped
    microflow validate-model

Scenarios are builtin names or JSON files.  Exit codes: 0 success,
2 configuration error (bad scenario, unknown axis/format), 3 runtime
fault (the partial trace is still written when --out is given).
"""

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .harness import (
    HarnessFault,
    compare,
    render_comparison,
    render_validation,
    rmse,
    run_and_write,
    run_scenario,
    sweep,
    validate_model,
)
from .scenarios import ConfigError, builtin_names, resolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="microflow",
        description="closed-loop flow-control simulation bench",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario RNG seed")
    parser.add_argument("--format", default="csv", choices=("csv",),
                        help="trace output format")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--scenario", required=True,
                       help=f"builtin ({', '.join(builtin_names())}) "
                            f"or JSON file")
    p_run.add_argument("--out", default=None,
                       help="directory for trace.csv + meta.json")

    p_sweep = sub.add_parser("sweep", help="sweep one tuning axis")
    p_sweep.add_argument("--axis", required=True,
                         help="N (horizon), alpha, or beta")
    p_sweep.add_argument("--values", nargs="+", type=float, default=None)
    p_sweep.add_argument("--scenario", default="steps-distinct")
    p_sweep.add_argument("--out", default=None)

    p_cmp = sub.add_parser("compare",
                           help="run scenarios under MPC and PI")
    p_cmp.add_argument("--scenarios", nargs="+", required=True)
    p_cmp.add_argument("--out", default=None)

    p_val = sub.add_parser("validate-model",
                           help="reduced model vs nonlinear plant")
    p_val.add_argument("--out", default=None)

    return parser


def _fmt3(values, unit):
    cells = " ".join("nan" if v is None or np.isnan(v) else f"{v:.4g}"
                     for v in values)
    return f"{cells} {unit}"


def _print_metrics(trace):
    m = rmse(trace)
    counts = ", ".join(f"{k}={v}" for k, v in sorted(
        trace.status_counts().items()))
    print(f"scenario {trace.scenario.name} ({trace.scenario.controller}): "
          f"{len(trace)} steps in {trace.wall_time:.2f} s")
    print(f"  rmse:      {_fmt3(m.rmse, 'ul/s')}")
    print(f"  response:  {_fmt3(m.response_time, 's')}")
    print(f"  overshoot: {_fmt3(m.overshoot, '%')}")
    print(f"  violations: {m.violations}")
    print(f"  statuses:  {counts}")


def _with_seed(scenario, seed):
    if seed is None:
        return scenario
    return replace(scenario, rng_seed=int(seed))


def _cmd_run(args):
    scenario = _with_seed(resolve(args.scenario), args.seed)
    if args.out is not None:
        trace = run_and_write(scenario, args.out, fmt=args.format)
        print(f"wrote {args.out}/trace.csv and {args.out}/meta.json")
    else:
        trace = run_scenario(scenario)
    _print_metrics(trace)
    return EXIT_OK


def _cmd_sweep(args):
    base = _with_seed(resolve(args.scenario), args.seed)
    rows = sweep(base, args.axis, args.values, out_dir=args.out)
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK


def _cmd_compare(args):
    scenarios = [_with_seed(resolve(name), args.seed)
                 for name in args.scenarios]
    rows = compare(scenarios, out_dir=args.out)
    print(render_comparison(rows))
    return EXIT_OK


def _cmd_validate(args):
    report = validate_model(out_dir=args.out)
    print(render_validation(report))
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "validate-model": _cmd_validate,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HarnessFault as exc:
        print(f"fault: {exc}", file=sys.stderr)
        if getattr(args, "out", None) is not None:
            print(f"partial trace written to {args.out}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())

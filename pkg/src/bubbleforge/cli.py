"""Command-line entry points.

    bubbleforge solve --domain disk --m 2 --s 12 --n 513 --out DIR
    bubbleforge sweep --s-list 8,10,12 --domain disk --m 1 --n 257 --out DIR

Exit codes: 0 all checks pass, 2 solver failure, 3 check failure,
4 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import PipelineError, RunConfig, run, sweep

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 2
EXIT_CHECK_FAILURE = 3
EXIT_CONFIG_ERROR = 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--domain", default="disk", help="disk | square | rect:W:H")
    p.add_argument("--m", type=int, default=1, help="number of spikes")
    p.add_argument("--n", type=int, default=257, help="grid nodes per axis (odd)")
    p.add_argument("--beta", type=float, default=None, help="separation exponent (default m^2+m+1)")
    p.add_argument("--h-file", dest="h_source", default="zero",
                   help='forcing: "zero", "eigenmode", or a field CSV path')
    p.add_argument("--lambda-threshold", type=float, default=0.9)
    p.add_argument("--out", dest="out_dir", default=None, help="artifact directory")
    p.add_argument("--trace", action="store_true", help="write optimizer/newton trace CSVs")
    p.add_argument("--dump-fields", action="store_true", help="write field CSV dumps")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bubbleforge", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="single (m, s) construction")
    _add_common(ps)
    ps.add_argument("--s", type=float, required=True, help="concentration parameter")

    pw = sub.add_parser("sweep", help="sweep over a list of s values")
    _add_common(pw)
    pw.add_argument("--s-list", required=True, help="comma-separated s values")
    return ap


def _config_from(args, s: float) -> RunConfig:
    return RunConfig(
        domain=args.domain,
        n=args.n,
        m=args.m,
        s=s,
        beta=args.beta,
        h_source=args.h_source,
        lambda_threshold=args.lambda_threshold,
        out_dir=args.out_dir,
        trace=args.trace,
        dump_fields=args.dump_fields,
        seed=args.seed,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            cfg = _config_from(args, args.s)
            cfg.validate()
        else:
            s_values = [float(t) for t in args.s_list.split(",") if t.strip()]
            if not s_values:
                raise ValueError("empty --s-list")
            cfg = _config_from(args, s_values[0])
            cfg.validate()
    except (ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        if args.command == "solve":
            result = run(cfg)
            results = [result]
        else:
            results = sweep(cfg, s_values)
    except PipelineError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE

    code = EXIT_OK
    for res in results:
        if isinstance(res, PipelineError):
            print(f"pipeline failure: {res}", file=sys.stderr)
            code = max(code, EXIT_SOLVER_FAILURE)
            continue
        d = res.diagnostics
        tag = f"m={res.config.m} s={res.config.s:g} n={res.config.n}"
        print(
            f"[{tag}] mass/8pim={d.mass/(8*3.141592653589793*res.config.m):.4f} "
            f"spikes={d.spike_count} newton_iters={d.newton_iterations} "
            f"residual={d.newton_residual:.2e} checks_pass={d.all_hard_checks_pass}"
        )
        if not d.all_hard_checks_pass:
            for k, v in d.checks.items():
                if not v:
                    print(f"[{tag}] FAILED check: {k}", file=sys.stderr)
            code = max(code, EXIT_CHECK_FAILURE)
    return code


if __name__ == "__main__":
    sys.exit(main())

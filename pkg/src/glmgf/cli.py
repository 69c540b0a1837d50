"""Command-line interface: glmgf {audit,sk,control,all}.

Exit codes: 0 all checks passed, 1 at least one check failed, 2 bad
configuration. Flags override config-file entries (--config PATH, JSON);
GLMGF_THREADS is the fallback for --threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import FORMATS, RunConfig, emit_report, run


def _parse_count(text: str) -> int:
    value = int(float(text))  # accepts 1e6-style counts
    if value < 1:
        raise argparse.ArgumentTypeError("count must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file; flags win")
    common.add_argument("--seed", type=int, help="64-bit RNG seed (mandatory)")
    common.add_argument("--samples", type=_parse_count, help="Monte Carlo sample count")
    common.add_argument("--threads", type=int, help="worker threads (never changes results)")
    common.add_argument("--chunk-size", type=_parse_count, help="reduction chunk size")
    common.add_argument("--out", metavar="DIR", help="directory for report.json + CSV data")
    common.add_argument("--format", choices=FORMATS, help="stdout format (default table)")
    common.add_argument("--slack-sigmas", type=float, help="statistical slack multiplier")
    common.add_argument("--abs-tol", type=float, help="absolute slack added to every check")
    common.add_argument("--lambda-grid", metavar="LO:HI:STEP")
    common.add_argument("--t-grid", metavar="LO:HI:STEP")

    parser = argparse.ArgumentParser(
        prog="glmgf",
        description="Estimate log-moment generating functions of convex Gaussian "
                    "functionals and audit their inequalities against exact oracles.")
    sub = parser.add_subparsers(dest="experiment", required=True)

    p_audit = sub.add_parser("audit", parents=[common],
                             help="run the Phi-level checks for one functional")
    p_audit.add_argument("--functional", required=True,
                         help="catalog name or kind:key=val;... spec")

    p_sk = sub.add_parser("sk", parents=[common], help="SK replica-curve checks")
    p_sk.add_argument("--N", type=int, help="number of spins (default 4)")
    p_sk.add_argument("--beta", type=float, help="inverse temperature (default 1)")
    p_sk.add_argument("--h", type=float, help="external field (default 0)")
    p_sk.add_argument("--disorder-samples", type=_parse_count,
                      help="disorder draws (default by N)")

    p_ctl = sub.add_parser("control", parents=[common],
                           help="control-representation checks")
    p_ctl.add_argument("--functional", help="dim <= 2 functional (default euclid1)")
    p_ctl.add_argument("--lambda", dest="control_lambda", type=float,
                       help="tilt parameter (default -1)")
    p_ctl.add_argument("--steps", type=_parse_count, help="time steps (default 1000)")
    p_ctl.add_argument("--dx", type=float, help="space grid step (default 0.05)")
    p_ctl.add_argument("--xmax", type=float, help="box half-width (default 8)")
    p_ctl.add_argument("--paths", type=_parse_count, help="simulated paths (default 1e5)")
    p_ctl.add_argument("--hjb-tol", type=float,
                       help="assert max HJB residual <= tol (default: report only)")

    sub.add_parser("all", parents=[common],
                   help="catalog audit + SK suite + control suite")
    return parser


_FLAG_TO_FIELD = {
    "seed": "seed", "samples": "samples", "threads": "threads",
    "chunk_size": "chunk_size", "out": "out_dir", "format": "fmt",
    "slack_sigmas": "slack_sigmas", "abs_tol": "abs_tol",
    "lambda_grid": "lambda_grid", "t_grid": "t_grid",
    "functional": "functional",
    "N": "sk_N", "beta": "sk_beta", "h": "sk_h",
    "disorder_samples": "disorder_samples",
    "control_lambda": "control_lambda", "steps": "steps", "dx": "dx",
    "xmax": "xmax", "paths": "paths", "hjb_tol": "hjb_tol",
}


def _load_config_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(experiment=args.experiment)
    file_values: dict = {}
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
        for key, value in file_values.items():
            name = _FLAG_TO_FIELD.get(key, key)
            if name == "experiment":
                continue
            if not hasattr(config, name):
                raise ValueError(f"unknown config key {key!r}")
            setattr(config, name, value)
    for flag, name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, name, value)
    if (getattr(args, "threads", None) is None and "threads" not in file_values
            and "GLMGF_THREADS" in os.environ):
        config.threads = int(os.environ["GLMGF_THREADS"])
    config.validate()
    return config


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return 0 if exc.code in (0, None) else 2
    try:
        config = build_config(args)
        report = run(config)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"glmgf: config error: {exc}", file=sys.stderr)
        return 2
    text, _ = emit_report(report, fmt=config.fmt, out_dir=config.out_dir)
    sys.stdout.write(text)
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    raise SystemExit(main())

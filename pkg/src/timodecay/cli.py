"""Command-line entry point: ``timodecay <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import ConfigurationError, TimoDecayError
from .functionals import fit_decay
from .harness import load_config, read_trace_csv, run_experiment, run_verify

log = logging.getLogger("timodecay")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timodecay", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug log output")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="single run: trace CSV, summary and manifest")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    r = sub.add_parser("refine", help="dt-halving and n-doubling ladders")
    r.add_argument("--config", required=True)
    r.add_argument("--levels", type=int, default=None)
    r.add_argument("--out", default="refine-out")

    w = sub.add_parser("sweep", help="one run per parameter value")
    w.add_argument("--config", required=True)
    w.add_argument("--param", required=True)
    w.add_argument("--values", required=True, type=_values)
    w.add_argument("--out", default="sweep-out")

    v = sub.add_parser("verify-kernels", help="memory-operator identities on random histories")
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--out", default=None)

    f = sub.add_parser("fit", help="decay fit of a recorded trace")
    f.add_argument("--trace", required=True)
    f.add_argument("--t0", type=float, required=True)
    f.add_argument("--t1", type=float, default=None)
    f.add_argument("--config", default=None, help="use this config's kernel for the zeta-weighted fit")
    return p


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "verify-kernels":
        if args.trials < 1:
            raise ConfigurationError("--trials must be positive")
        rows, _ = run_verify(args.seed, args.trials, args.out)
        passed = sum(r["pass"] for r in rows)
        print(f"verify-kernels: {passed}/{len(rows)} checks pass")
        return EXIT_OK if passed == len(rows) else EXIT_FAIL
    if args.command == "fit":
        cols = read_trace_csv(args.trace)
        if "t" not in cols or "E" not in cols:
            raise ConfigurationError("trace needs 't' and 'E' columns")
        kernel = load_config(args.config).kernel if args.config else None
        print(json.dumps(fit_decay(cols["t"], cols["E"], kernel, args.t0, args.t1).summary(), sort_keys=True))
        return EXIT_OK
    cfg = load_config(args.config)
    if args.command == "simulate":
        m = run_experiment(cfg, args.out, kind="simulate")
    elif args.command == "refine":
        m = run_experiment(cfg, args.out, kind="refine", levels=args.levels)
    else:
        m = run_experiment(cfg, args.out, kind="sweep", param=args.param, values=args.values)
    print(json.dumps({"digest": m.digest, "kind": m.kind, "outputs": m.outputs}, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TimoDecayError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

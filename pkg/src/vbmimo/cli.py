"""Command-line interface: ``sweep``, ``selftest`` and ``list-detectors``.

Exit codes: 0 success, 1 configuration error (bad flags, unknown detector,
inconsistent experiment), 2 runtime error (including a failed selftest).
A plain-text config file (one ``key=value`` per line, ``#`` comments) can be
given with ``--config``; explicit flags override file values.
"""

from __future__ import annotations

import argparse
import sys

from .detectors import DETECTOR_NAMES
from .errors import ConfigurationError
from .harness import (ExperimentSpec, run_sweep, validate_spec,
                      write_convergence_csv, write_csv, write_records)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


_SWEEP_FLAGS = {
    "m": int, "k": int, "mod": str, "channel": str, "alpha": str,
    "csir": str, "pp": float, "tp": int, "snr-db": str, "detectors": str,
    "trials": int, "seed": int, "max-iters": int, "tol": float,
    "out": str, "trace-out": str, "workers": int,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="vbmimo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run a Monte-Carlo SER sweep")
    sweep.add_argument("--config", help="key=value config file; flags override")
    sweep.add_argument("--m", type=int, default=32, help="receive antennas")
    sweep.add_argument("--k", type=int, default=32, help="users")
    sweep.add_argument("--mod", default="qpsk", help="qpsk | 16qam | 64qam | <n>psk")
    sweep.add_argument("--channel", default="iid", choices=["iid", "exp"])
    sweep.add_argument("--alpha", default=None,
                       help="exp-model correlation, e.g. 0.5+0.5j")
    sweep.add_argument("--csir", default="perfect", choices=["perfect", "pilot"])
    sweep.add_argument("--pp", type=float, default=1.0, help="pilot power")
    sweep.add_argument("--tp", type=int, default=None, help="pilot length (>= k)")
    sweep.add_argument("--snr-db", required=True,
                       help="comma-separated SNR grid in dB")
    sweep.add_argument("--detectors", default=",".join(DETECTOR_NAMES),
                       help="comma-separated detector names")
    sweep.add_argument("--trials", type=int, default=1000)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--max-iters", type=int, default=50)
    sweep.add_argument("--tol", type=float, default=1e-6,
                       help="early-stop tolerance on soft means")
    sweep.add_argument("--out", default=None, help="results CSV (default stdout)")
    sweep.add_argument("--trace-out", default=None,
                       help="per-iteration SER CSV; enables convergence traces")
    sweep.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: VBMIMO_WORKERS or CPUs)")

    st = sub.add_parser("selftest", help="run the randomized invariant suite")
    st.add_argument("--instances", type=int, default=100)
    st.add_argument("--seed", type=int, default=20240)

    sub.add_parser("list-detectors", help="print the supported detector names")
    return parser


def _load_config(path: str) -> dict[str, str]:
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigurationError(
                        f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                key = key.strip().lower()
                if key not in _SWEEP_FLAGS:
                    raise ConfigurationError(
                        f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = value.strip()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    return values


def _apply_config(parser_args: list[str]) -> list[str]:
    """Prepend config-file values as flags so explicit flags win."""
    if "--config" not in parser_args:
        return parser_args
    idx = parser_args.index("--config")
    if idx + 1 >= len(parser_args):
        raise ConfigurationError("--config requires a path")
    injected = []
    for key, value in _load_config(parser_args[idx + 1]).items():
        injected.extend([f"--{key}", value])
    # keep subcommand first, then config values, then explicit flags
    return parser_args[:1] + injected + parser_args[1:]


def _parse_alpha(text) -> complex:
    try:
        return complex(str(text).replace(" ", ""))
    except ValueError:
        raise ConfigurationError(f"cannot parse alpha {text!r}") from None


def _spec_from_args(args) -> ExperimentSpec:
    try:
        snr_grid = tuple(float(s) for s in str(args.snr_db).split(",") if s != "")
    except ValueError:
        raise ConfigurationError(f"bad --snr-db value {args.snr_db!r}") from None
    detectors = tuple(d.strip() for d in str(args.detectors).split(",") if d.strip())
    spec = ExperimentSpec(
        m=args.m, k=args.k, modulation=args.mod, channel=args.channel,
        alpha=_parse_alpha(args.alpha) if args.alpha is not None else None,
        csir=args.csir, pilot_power=args.pp, pilot_len=args.tp,
        snr_db_grid=snr_grid, detectors=detectors, trials=args.trials,
        base_seed=args.seed, max_iters=args.max_iters,
        early_stop_tol=args.tol, record_convergence=args.trace_out is not None,
    )
    validate_spec(spec)
    return spec


def _cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    result = run_sweep(spec, workers=args.workers)
    if args.out is None:
        write_records(sys.stdout, result.records)
    else:
        write_csv(result.records, args.out)
        print(f"wrote {len(result.records)} records to {args.out}")
    if args.trace_out is not None:
        write_convergence_csv(result.convergence, args.trace_out)
        print(f"wrote {len(result.convergence)} trace rows to {args.trace_out}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(instances=args.instances, seed=args.seed)
    ok = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail}")
        ok &= res.passed
    if not ok:
        print("selftest FAILED", file=sys.stderr)
        return 2
    print(f"selftest passed ({args.instances} instances)")
    return 0


def _cmd_list_detectors() -> int:
    for name in DETECTOR_NAMES:
        print(name)
    return 0


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(argv)
        args = parser.parse_args(argv)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
        return _cmd_list_detectors()
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("run 'vbmimo --help' for usage", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()

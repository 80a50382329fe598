"""Command-line entry point: ``cbaucb {synth,abr,bench,oracle} [flags]``.

A ``--config`` file holds one ``key = value`` pair per line, where ``key``
is any long flag name without the leading dashes (``noise-sd`` and
``noise_sd`` are both accepted) and ``#`` starts a comment. Boolean keys
take ``true`` or ``false``. Flags given on the command line override the
file.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
numerical error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .harness import MODES, ExperimentConfig, run_abr, run_bench, run_oracle, run_synth

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

MODE_DEFAULTS = {
    "synth": {"algos": ("cba-vb", "cba-ossvi", "linucb"), "horizon": 1000, "dims": 20, "sparsity": 5},
    "bench": {"algos": ("linucb", "cba-ossvi", "cba-vb", "cba-svi"), "horizon": 200, "dims": 20, "sparsity": 5},
    "abr": {"algos": ("cba-ossvi", "linucb", "throughput-rule"), "horizon": 100},
    "oracle": {"algos": ("cba-vb",), "horizon": 30, "dims": 3, "sparsity": 2, "noise_sd": 0.5},
}

_BOOL_FLAGS = ("per-rep", "timing", "paired")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _algos(text: str) -> tuple:
    return tuple(a.strip() for a in text.split(",") if a.strip())


def _weights(text: str) -> tuple:
    parts = [float(w) for w in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("weights need three comma-separated numbers")
    return tuple(parts)


def _gamma(text: str):
    return text if text == "harmonic" else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbaucb", description="Sparse Bayesian contextual bandit experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} experiment")
        p.add_argument("--config", type=Path, help="key = value file; flags override it")
        p.add_argument("--algo", dest="algos", type=_algos, help="comma-separated algorithms")
        p.add_argument("--horizon", type=int, help="rounds (synth/bench), segments (abr) or rows (oracle)")
        p.add_argument("--dims", type=int)
        p.add_argument("--arms", type=int)
        p.add_argument("--sparsity", type=int, help="nonzero coefficients per arm, 0 for dense")
        p.add_argument("--noise-sd", type=float)
        p.add_argument("--reps", type=int)
        p.add_argument("--seed", type=int, help="base seed; replication r uses seed + r")
        p.add_argument("--out", type=str, help="output CSV path")
        p.add_argument("--workers", type=int)
        p.add_argument("--alpha", type=float, help="CBA-UCB quantile parameter")
        p.add_argument("--linucb-alpha", type=float)
        p.add_argument("--linucb-reg", type=float)
        p.add_argument("--os-svi-gamma", type=_gamma, help="'harmonic' (1/n) or a constant in (0, 1]")
        p.add_argument("--os-svi-replicates", choices=("arm", "round"))
        p.add_argument("--vb-tol", type=float)
        p.add_argument("--vb-max-iter", type=int)
        p.add_argument("--svi-tol", type=float)
        p.add_argument("--svi-max-iter", type=int)
        p.add_argument("--weights", type=_weights, help="QoE weights w1,w2,w3")
        p.add_argument("--bandwidth-mean", type=float)
        p.add_argument("--bandwidth-sd", type=float)
        p.add_argument("--bandwidth-period", type=float)
        p.add_argument("--bandwidth-floor", type=float)
        p.add_argument("--constant-bandwidth", type=float)
        p.add_argument("--trace-file", type=str)
        p.add_argument("--throughput-features", type=int)
        p.add_argument("--gibbs-samples", type=int)
        p.add_argument("--gibbs-burn-in", type=int)
        p.add_argument("--gibbs-thin", type=int)
        for flag in _BOOL_FLAGS:
            p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    return parser


def read_config_file(path: Path) -> list[str]:
    """Translate a ``key = value`` file into equivalent command-line flags."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    argv = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key == "config":
            raise UsageError(f"{path}:{lineno}: config files cannot include other config files")
        if key in _BOOL_FLAGS:
            low = value.lower()
            if low not in ("true", "false"):
                raise UsageError(f"{path}:{lineno}: {key} takes true or false, got {value!r}")
            argv.append(f"--{key}" if low == "true" else f"--no-{key}")
        else:
            argv += [f"--{key}", value]
    return argv


def parse_config(argv) -> ExperimentConfig:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        file_argv = read_config_file(args.config)
        # file first, command line second: argparse keeps the last value
        args = parser.parse_args([args.mode, *file_argv, *argv[1:]])
    values = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "mode")}
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    settings = {**MODE_DEFAULTS[args.mode], **{k: v for k, v in values.items() if k in fields}}
    try:
        return ExperimentConfig(mode=args.mode, **settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _report(config: ExperimentConfig) -> None:
    if config.mode == "synth":
        traces = run_synth(config)
        for algo in config.algos:
            finals = [tr.final_regret for tr in traces if tr.algo == algo]
            print(f"{algo:12s} mean final regret {np.mean(finals):10.3f}  (N={len(finals)})")
    elif config.mode == "bench":
        samples = run_bench(config)
        for algo, s in samples.items():
            print(f"{algo:12s} median {np.median(s):10.1f} us  p95 {np.percentile(s, 95):10.1f} us")
    elif config.mode == "abr":
        for s in run_abr(config):
            print(f"{s['algo']:16s} rep {s['rep']} client {s['client']}: bitrate {s['mean_bitrate']:.2f} Mbps, "
                  f"switches {s['switches']}, rebuffer {100 * s['rebuffer_ratio']:.1f}%, QoE {s['cum_qoe']:.1f}")
    else:
        for row in run_oracle(config):
            print("beta[{}] true {:+.4f}  vb {:+.4f}  svi {:+.4f}  gibbs {:+.4f} (se {:.4f})".format(
                row[0], row[1], row[2], row[4], row[5], row[7]))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = parse_config(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    try:
        _report(config)
    except (ArithmeticError, ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"cbaucb: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if config.out is not None:
        print(f"wrote {config.out}")
    return EXIT_OK


__all__ = ["EXIT_OK", "EXIT_USAGE", "EXIT_RUNTIME", "MODE_DEFAULTS", "UsageError", "build_parser",
           "read_config_file", "parse_config", "main"]

"""Command-line entry point: ``cellfree-ris {validate-rate,optimize,sweep,moments}``.

Every subcommand writes CSV to --out (or stdout when --out is omitted).
"""
from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from .channel import PhaseConfig
from .harness import ALGORITHMS, SWEEP_AXES, ExperimentSpec, run_experiment
from .moments import moment_oracle, write_oracle_csv
from .scenario import SystemConfig, default_config, load_config, random_statistics


def _config(args) -> SystemConfig:
    return load_config(args.config) if args.config else default_config()


def _emit(write, out):
    """Call write(path); echo to stdout when no output path was given."""
    if out:
        write(out)
        return
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "out.csv"
        write(path)
        sys.stdout.write(path.read_text())


def _algos(text):
    algos = tuple(a.strip() for a in text.split(",") if a.strip())
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown algorithm(s) {bad}; choose from {list(ALGORITHMS)}")
    return algos


def _values(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _run(spec: ExperimentSpec, out):
    result = run_experiment(spec)
    _emit(result.write_csv, out)
    for value, algo, msg in result.failures:
        print(f"warning: {algo} at {value:g}: {msg}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_validate_rate(args):
    cfg = _config(args)
    spec = ExperimentSpec(config=cfg, sweep_axis="M", sweep_values=args.values or (2, 4, 6),
                          algos=("closed-form", "monte-carlo"), drops=args.drops or 1,
                          samples=args.samples, seed=args.seed)
    return _run(spec, args.out)


def cmd_optimize(args):
    spec = ExperimentSpec(config=_config(args), algos=args.algo or ("proposed",), drops=args.drops or 1,
                          intervals=args.intervals, samples=args.samples, seed=args.seed)
    return _run(spec, args.out)


def cmd_sweep(args):
    if not args.values:
        raise SystemExit("sweep needs --values")
    spec = ExperimentSpec(config=_config(args), sweep_axis=args.axis, sweep_values=args.values,
                          algos=args.algo or ("proposed",), drops=args.drops or 20,
                          intervals=args.intervals, samples=args.samples, seed=args.seed,
                          workers=args.workers)
    return _run(spec, args.out)


def cmd_moments(args):
    cfg = load_config(args.config) if args.config else SystemConfig(S=2, M=2, L=2, N_r=2, N_c=2, K=2)
    stats = random_statistics(cfg, args.seed)
    phases = PhaseConfig.random(cfg.L, cfg.N, args.seed)
    rows = moment_oracle(stats, phases, args.samples, args.seed)
    _emit(lambda p: write_oracle_csv(rows, p), args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cellfree-ris", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, samples=10_000):
        p.add_argument("--config", type=Path, help="flat key = value scenario file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--drops", type=int, default=None)
        p.add_argument("--samples", type=int, default=samples)
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--algo", type=_algos, default=None,
                       help=f"comma list from {', '.join(ALGORITHMS)}")

    p = sub.add_parser("validate-rate", help="closed-form vs Monte-Carlo rate over M")
    common(p)
    p.add_argument("--values", type=_values, default=None, help="M values (default 2,4,6)")
    p.set_defaults(func=cmd_validate_rate)

    p = sub.add_parser("optimize", help="run algorithms on drops of one scenario")
    common(p)
    p.add_argument("--intervals", type=int, default=10)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="sweep one parameter")
    common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=_values, default=None)
    p.add_argument("--intervals", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("moments", help="Monte-Carlo check of the moment identities")
    common(p)
    p.set_defaults(func=cmd_moments)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``tomocal simulate|reconstruct|experiment``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import harness


def _add_overrides(p):
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override a config key (repeatable)")
    for f in dataclasses.fields(harness.ExperimentConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None,
                       help=argparse.SUPPRESS)


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    for f in dataclasses.fields(harness.ExperimentConfig):
        v = getattr(args, f"cfg_{f.name}")
        if v is not None:
            out[f.name] = v
    return out


def _config(args):
    over = _overrides(args)
    if args.config:
        return harness.load_config(args.config, over)
    return harness.apply_overrides(harness.ExperimentConfig(), over)


def build_parser():
    parser = argparse.ArgumentParser(prog="tomocal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write phantom and noisy sinogram")
    p.add_argument("--config")
    p.add_argument("--out-dir", default=".")
    _add_overrides(p)

    p = sub.add_parser("reconstruct", help="run one reconstruction scheme")
    p.add_argument("--config")
    p.add_argument("--out-dir", default=".")
    _add_overrides(p)

    p = sub.add_parser("experiment", help="run a named preset")
    p.add_argument("preset", choices=harness.PRESETS)
    p.add_argument("--out-dir", default=".")
    _add_overrides(p)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            files = harness.simulate(_config(args), args.out_dir)
            for path in files.values():
                print(path)
        elif args.command == "reconstruct":
            res = harness.run_experiment(_config(args), args.out_dir)
            last = res.trace.rows[-1]
            print(f"{res.config.name}: {len(res.trace) - 1} iterations, rel_err_x={last.rel_err_x:.6g}")
            for path in res.files.values():
                print(path)
        else:
            results = harness.run_preset(args.preset, args.out_dir, _overrides(args))
            for name, res in results.items():
                last = res.trace.rows[-1]
                print(f"{name}: rel_err_x={last.rel_err_x:.6g} rel_err_d={_g(last.rel_err_d)} "
                      f"rel_err_dtheta={_g(last.rel_err_dtheta)}")
    except harness.ExperimentError as exc:
        print(f"tomocal: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError, OSError) as exc:
        print(f"tomocal: configuration failed: {exc}", file=sys.stderr)
        return 2
    return 0


def _g(v):
    return "n/a" if v is None else f"{v:.6g}"


if __name__ == "__main__":
    sys.exit(main())

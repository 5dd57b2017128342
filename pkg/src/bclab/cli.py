"""Command-line entry point: ``bclab run | report | list-presets | validate-config``.

Exit codes: 0 when every embedded check passes, 1 when any fails, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PRESETS, apply_overrides, parse, parse_set, preset_config, preset_descriptions, render
from .errors import BCLabError, ConfigurationError, ReportError
from .experiments import report, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load_config(args):
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
        c = parse(text)
        if args.preset and args.preset != c.preset:
            raise ConfigurationError(f"config file is for preset {c.preset!r}, not {args.preset!r}")
    else:
        c = preset_config(args.preset)
    return apply_overrides(c, parse_set(args.set or []))


def cmd_run(args):
    c = _load_config(args)
    manifest = run_experiment(c, workers=args.workers, output=args.output)
    out = Path(args.output or c.output)
    print(f"wrote {len(manifest['files'])} files to {out} in {manifest['wall_clock_seconds']:.1f}s")
    lines, checks = report(out, bundle=out / "plots")
    for ln in lines:
        print(ln)
    return EXIT_OK if all(ch.passed for ch in checks) else EXIT_FAIL


def cmd_report(args):
    lines, checks = report(args.directory, bundle=args.bundle)
    for ln in lines:
        print(ln)
    return EXIT_OK if all(ch.passed for ch in checks) else EXIT_FAIL


def cmd_list(args):
    for name, text in preset_descriptions().items():
        print(f"{name:20s} {text}")
    return EXIT_OK


def cmd_validate(args):
    c = parse(Path(args.config).read_text())
    if parse(render(c)) != c:
        raise ConfigurationError("config does not survive a render/parse round trip")
    print(f"ok: preset {c.preset}, hash {c.digest()[:16]}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="bclab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset and report its checks")
    run.add_argument("preset", nargs="?", choices=PRESETS)
    run.add_argument("--config", help="config file (sectioned key = value)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.add_argument("--output", help="output directory (default: the config's)")
    run.add_argument("--workers", type=int, help="worker threads (default: $BCLAB_WORKERS or CPU count)")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="recompute checks for a finished run")
    rep.add_argument("directory")
    rep.add_argument("--bundle", help="write plot-ready CSVs here")
    rep.set_defaults(func=cmd_report)

    ls = sub.add_parser("list-presets", help="describe the presets")
    ls.set_defaults(func=cmd_list)

    val = sub.add_parser("validate-config", help="parse and check a config file")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and not args.preset and not args.config:
        print("error: give a preset or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except BCLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

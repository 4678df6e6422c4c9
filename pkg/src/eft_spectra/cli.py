"""Command-line entry point ``eft-spectra``.

Usage::

    eft-spectra <mode> --config cfg.json [--out DIR] [--seed N] [--jobs N]
    eft-spectra validate --config cfg.json

Exit status: 0 success, 2 invalid config, 3 numerical or search failure,
4 I/O or parse failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, EftError, ParseError
from .experiments import MODES, run, validate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("eft_spectra")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eft-spectra", description="Chebyshev-moment QKSD and SPE experiments.")
    p.add_argument("mode", choices=[*MODES, "validate"])
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config value)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent sweep points")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _read(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    path = Path(args.config)
    try:
        config = _read(path)
        if args.mode == "validate":
            problems = validate(config)
            for msg in problems:
                print(f"violation: {msg}")
            if not problems:
                print("config ok")
            return EXIT_CONFIG if problems else EXIT_OK
        if isinstance(config, dict):
            config.setdefault("mode", args.mode)
            if config["mode"] != args.mode:
                raise ConfigError([f"config mode {config['mode']!r} does not match command {args.mode!r}"])
        report = run(config, args.out, args.seed, max(1, args.jobs), base=path.parent)
    except ConfigError as exc:
        for msg in exc.violations:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EftError, ArithmeticError, ValueError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(report.config.get("output_dir", "."))
    for name in report.files:
        print(out / name)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

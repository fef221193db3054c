"""Command line entry point: ``grushin-lab COMMAND [--config PATH] [--seed INT] [--out DIR] [--threads INT]``.

Exit codes: 0 success (negative scientific verdicts included), 2 config error,
3 numerical failure, 4 I/O failure. On failure a machine-readable
``error.json`` is written to the output directory when possible.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import SCHEMA_VERSION, ConfigError, parse_config
from .experiments import COMMANDS, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("grushin_lab")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grushin-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, default=None, help="YAML experiment config (defaults if omitted)")
    p.add_argument("--seed", type=int, default=None, help="master seed; overrides ensemble.seed")
    p.add_argument("--out", type=Path, default=None, help="output directory; overrides output.directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _report(out: Path | None, kind: str, message: str, code: int, details=None) -> int:
    payload = {"schema_version": SCHEMA_VERSION, "error": kind, "message": message, "exit_code": code}
    if details:
        payload["details"] = details
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        return _report(out, "config", "invalid configuration", EXIT_CONFIG, exc.violations)
    except OSError as exc:
        return _report(out, "io", str(exc), EXIT_IO)
    out = out or Path(cfg.output.directory)
    if args.threads < 1:
        return _report(out, "config", "--threads must be >= 1", EXIT_CONFIG)
    try:
        manifest = run(cfg, args.command, out, seed=args.seed, threads=args.threads)
    except OSError as exc:
        return _report(out, "io", str(exc), EXIT_IO)
    except ConfigError as exc:
        return _report(out, "config", "invalid configuration", EXIT_CONFIG, exc.violations)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return _report(out, "numerical", f"{type(exc).__name__}: {exc}", EXIT_NUMERIC)
    log.info("wrote %d file(s) to %s", len(manifest["files"]), out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

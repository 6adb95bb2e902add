"""irt-precision: command-line entry point.

Reliability of IRT-based EAP scores with standard errors: fit, score,
reliability, oracle and simulate subcommands.

Run with: python main.py <command> [options]   (or the `irt-precision` script)

Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.
Failures are written to stderr as a JSON error card.
"""

from dotenv import load_dotenv

load_dotenv()  # Load .env BEFORE any app imports that read os.environ

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.commands import fit, oracle, reliability, score, simulate
from app.core.audit import log_event
from app.core.errors import EXIT_INPUT, InputValidationError, IrtPrecisionError
from app.core.schemas import ErrorCard, RunConfig
from app.core.settings import resolve_log_level, resolve_threads

log = logging.getLogger("irt_precision")

COMMANDS = (fit, score, reliability, oracle, simulate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irt-precision",
        description="Reliability of IRT scores with standard errors and confidence intervals.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command in COMMANDS:
        command.register(subparsers)

    # ─── Flags shared by every subcommand ────────────────────────────────────
    for sub in subparsers.choices.values():
        sub.add_argument("-v", "--verbose", action="count", default=0,
                         help="-v for INFO, -vv for DEBUG (default from IRT_PRECISION_LOG_LEVEL)")
        sub.add_argument("--threads", type=int, default=None,
                         help="worker processes (default from IRT_PRECISION_THREADS, else 1)")
    return parser


def configure_logging(verbosity: int) -> None:
    logging.basicConfig(
        level=resolve_log_level(verbosity),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def build_config(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.model_fields and v is not None}
    fields["threads"] = resolve_threads(args.threads)
    try:
        return RunConfig(**fields)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        message = str(first.get("msg", "invalid arguments")).removeprefix("Value error, ")
        raise InputValidationError(f"{where + ': ' if where else ''}{message}")


def _input_summary(args: argparse.Namespace) -> str:
    parts = [args.command]
    for name in ("data", "fit", "params", "design", "kind", "mode"):
        value = getattr(args, name, None)
        if value is not None:
            parts.append(f"{name}={value}")
    return "|".join(parts)


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed usage; --help exits 0, errors exit 2.
        return EXIT_INPUT if exc.code not in (0, None) else 0

    configure_logging(args.verbose)
    try:
        config = build_config(args)
        outcome = args.handler(config)
    except IrtPrecisionError as exc:
        card = ErrorCard(
            reason=exc.reason,
            violation_type=exc.violation_type,
            exit_code=exc.exit_code,
            context={k: _plain(v) for k, v in exc.context.items()},
        )
        print(card.model_dump_json(), file=sys.stderr)
        log_event(
            command=args.command,
            input_summary=_input_summary(args),
            output_type=f"error:{exc.violation_type}",
            exit_code=exc.exit_code,
            outputs=[str(exc.context["out"])] if "out" in exc.context else None,
        )
        return exc.exit_code

    print(outcome.model_dump_json())
    log_event(
        command=args.command,
        input_summary=_input_summary(args),
        output_type=outcome.output_type,
        exit_code=outcome.exit_code,
        outputs=outcome.outputs,
    )
    return outcome.exit_code


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(parse_and_dispatch(argv))


if __name__ == "__main__":
    main()

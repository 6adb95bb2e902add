"""Subcommands. Each module exposes `register(subparsers)` and `run(config)`.

`run` takes a validated RunConfig, writes its output files and returns a
CommandOutcome; failures are raised as IrtPrecisionError subclasses and turned
into error cards by main.parse_and_dispatch.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Optional

from app.core.schemas import GridSpec, RunConfig
from app.engines.quadrature import QuadratureGrid, build_grid, grid_from_spec

log = logging.getLogger(__name__)


def add_grid_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("quadrature")
    group.add_argument("--quad-points", dest="quad_points", type=int, default=None,
                       help="number of rectangular nodes (default 61)")
    group.add_argument("--quad-lo", dest="quad_lo", type=float, default=None,
                       help="lowest node (default -6)")
    group.add_argument("--quad-hi", dest="quad_hi", type=float, default=None,
                       help="highest node (default 6)")


def add_path_argument(parser: argparse.ArgumentParser, flag: str, help: str,
                      default: Optional[str] = None) -> None:
    parser.add_argument(f"--{flag}", dest=flag, type=Path,
                        default=Path(default) if default else None, help=help)


def resolve_grid(config: RunConfig, stored: Optional[GridSpec] = None) -> QuadratureGrid:
    """Grid from the flags; with a stored grid (from a fit file) the stored
    one wins, since the information matrix was computed on it."""
    requested = (config.quad_points, config.quad_lo, config.quad_hi)
    if stored is None:
        defaults = GridSpec()
        return build_grid(
            config.quad_points if config.quad_points is not None else defaults.q_count,
            config.quad_lo if config.quad_lo is not None else defaults.lo,
            config.quad_hi if config.quad_hi is not None else defaults.hi,
        )
    if any(v is not None for v in requested):
        log.warning("Quadrature flags ignored; using the grid stored in the fit file "
                    "(%d points on [%g, %g])", stored.q_count, stored.lo, stored.hi)
    return grid_from_spec(stored)

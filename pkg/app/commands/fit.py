"""fit: estimate item parameters from a response CSV.

    irt-precision fit --data responses.csv --out fit.json [--model 2pl|grm]

A fit that does not converge is still written; the command then exits 3.
"""

from __future__ import annotations

import argparse
import logging

import numpy as np

from app.commands import add_grid_arguments, add_path_argument, resolve_grid
from app.core.errors import CategoryRangeError, NonConvergenceError
from app.core.loaders import load_item_params, load_responses, write_json
from app.core.schemas import CommandOutcome, RunConfig
from app.core.settings import EM_MAX_ITER, EM_TOLERANCE
from app.engines.estimation import fit_em

log = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("fit", help="fit GRM/2PL item parameters by MML-EM")
    add_path_argument(p, "data", "response CSV (header row, integer categories from 0)")
    add_path_argument(p, "params", "optional starting values (item parameter JSON)")
    add_path_argument(p, "out", "where to write the fit record", default="fit.json")
    p.add_argument("--model", choices=["2pl", "grm"], default="grm")
    p.add_argument("--tol", type=float, default=EM_TOLERANCE, help="max |change| convergence tolerance")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=EM_MAX_ITER)
    p.add_argument("--info-method", dest="info_method", choices=["crossprod", "louis"],
                   default="crossprod")
    add_grid_arguments(p)
    p.set_defaults(handler=run)


def run(config: RunConfig) -> CommandOutcome:
    init = load_item_params(config.params) if config.params else None
    names, y = load_responses(config.data, params=init)
    if init is None and config.model == "2pl":
        bad = np.argwhere(y > 1)
        if bad.size:
            r, c = (int(v) for v in bad[0])
            raise CategoryRangeError(
                f"Category {int(y[r, c])} at row {r + 1}, column '{names[c]}' is not "
                "binary; the 2PL model needs responses 0/1.",
                row=r + 1,
                column=names[c],
            )
    n_categories = np.full(y.shape[1], 2) if config.model == "2pl" else None

    grid = resolve_grid(config)
    fit = fit_em(y, init=init, grid=grid, tol=config.tol, max_iter=config.max_iter,
                 n_categories=n_categories, names=names, info_method=config.info_method)
    write_json(config.out, fit.to_record(grid))

    if not fit.converged:
        raise NonConvergenceError(
            f"EM did not converge in {config.max_iter} iterations "
            f"(last max change {fit.max_change:.2e}); fit written to {config.out}.",
            iterations=fit.iterations,
            out=str(config.out),
        )
    return CommandOutcome(
        command="fit",
        output_type="fit_record",
        outputs=[str(config.out)],
        summary=f"n={fit.n} m={fit.params.n_items} loglik={fit.log_likelihood:.4f} "
                f"iterations={fit.iterations}",
    )

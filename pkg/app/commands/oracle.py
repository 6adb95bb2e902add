"""oracle: population reliability at known item parameters.

    irt-precision oracle --params true.json --kind both --mode enumerate|mc --draws 1000000
"""

from __future__ import annotations

import argparse

import numpy as np

from app.commands import add_grid_arguments, add_path_argument, resolve_grid
from app.core.audit import utc_timestamp
from app.core.loaders import load_item_params, write_json
from app.core.schemas import CommandOutcome, OracleDocument, RunConfig
from app.core.settings import ENUM_CAP, MC_DRAWS
from app.engines.reliability import pattern_count, population_oracles


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("oracle", help="population reliability at known parameters")
    add_path_argument(p, "params", "item parameter JSON")
    add_path_argument(p, "out", "oracle JSON", default="oracle.json")
    p.add_argument("--kind", choices=["prmse", "ctt", "both"], default="both")
    p.add_argument("--mode", choices=["enumerate", "mc"], default="enumerate")
    p.add_argument("--draws", type=int, default=MC_DRAWS, help="Monte Carlo respondents")
    p.add_argument("--seed", type=int, default=0)
    add_grid_arguments(p)
    p.set_defaults(handler=run)


def run(config: RunConfig) -> CommandOutcome:
    params = load_item_params(config.params)
    grid = resolve_grid(config)
    mode = "monte_carlo" if config.mode == "mc" else "enumerate"
    rng = np.random.Generator(np.random.Philox(config.seed))
    values = population_oracles(params, grid, config.kinds, mode=mode, mc_draws=config.draws,
                                rng=rng, cap=ENUM_CAP)

    notes = {"patterns": str(pattern_count(params))}
    for kind, value in values.items():
        if value is None:
            notes[kind] = "undefined: the test carries no information about the latent variable"
    document = OracleDocument(
        created_at=utc_timestamp(),
        mode=mode,
        draws=config.draws if mode == "monte_carlo" else None,
        n_quad=grid.q_count,
        values=values,
        notes=notes,
    )
    write_json(config.out, document)
    summary = " ".join(f"{k}={v:.4f}" if v is not None else f"{k}=undefined" for k, v in values.items())
    return CommandOutcome(command="oracle", output_type="population_reliability",
                          outputs=[str(config.out)], summary=summary)

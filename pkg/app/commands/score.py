"""score: EAP scores and posterior variances for every respondent.

    irt-precision score --fit fit.json --data responses.csv --out scores.csv
"""

from __future__ import annotations

import argparse

import numpy as np
import pandas as pd

from app.commands import add_grid_arguments, add_path_argument, resolve_grid
from app.core.loaders import load_fit, load_responses, write_frame
from app.core.schemas import CommandOutcome, RunConfig
from app.engines.scoring import posterior_batch


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("score", help="EAP scores from a fitted model")
    add_path_argument(p, "fit", "fit record written by 'fit'")
    add_path_argument(p, "data", "response CSV")
    add_path_argument(p, "out", "score CSV", default="scores.csv")
    add_grid_arguments(p)
    p.set_defaults(handler=run)


def run(config: RunConfig) -> CommandOutcome:
    record = load_fit(config.fit)
    _, y = load_responses(config.data, params=record.params)
    grid = resolve_grid(config, stored=record.grid)
    batch = posterior_batch(y, record.params, grid)
    frame = pd.DataFrame({
        "row": np.arange(1, y.shape[0] + 1),
        "eap": batch.eap,
        "post_var": batch.post_var,
        "post_sd": np.sqrt(batch.post_var),
    })
    write_frame(config.out, frame)
    return CommandOutcome(
        command="score",
        output_type="scores",
        outputs=[str(config.out)],
        summary=f"n={y.shape[0]} mean_eap={batch.eap.mean():.4f}",
    )

"""reliability: PRMSE and/or CTT reliability of EAP scores with SEs and CIs.

    irt-precision reliability --fit fit.json --data responses.csv --kind both \
        --alpha 0.05 --out report.json

--model-implied adds the plug-in population value at the fitted parameters;
--half-width adds the sample size needed for an interval that narrow.
"""

from __future__ import annotations

import argparse
import logging
from typing import List

from app.commands import add_grid_arguments, add_path_argument, resolve_grid
from app.core.audit import utc_timestamp
from app.core.loaders import load_fit, load_responses, write_json
from app.core.schemas import CommandOutcome, ReliabilityDocument, ReliabilityReport, RunConfig
from app.core.settings import DEFAULT_ALPHA
from app.engines.estimation import FitResult
from app.engines.reliability import model_implied_reliability, reliability_with_se, required_sample_size

log = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("reliability", help="reliability coefficients with standard errors")
    add_path_argument(p, "fit", "fit record written by 'fit'")
    add_path_argument(p, "data", "response CSV the fit was estimated on")
    add_path_argument(p, "out", "report JSON", default="report.json")
    p.add_argument("--kind", choices=["prmse", "ctt", "both"], default="both")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--jacobian", choices=["explicit", "total"], default="explicit")
    p.add_argument("--model-implied", dest="model_implied", action="store_true",
                   help="also report the plug-in population coefficient (enumeration)")
    p.add_argument("--half-width", dest="half_width", type=float, default=None,
                   help="target CI half-width for sample-size planning")
    add_grid_arguments(p)
    p.set_defaults(handler=run)


def run(config: RunConfig) -> CommandOutcome:
    record = load_fit(config.fit)
    _, y = load_responses(config.data, params=record.params)
    if y.shape[0] != record.n:
        log.warning("Fit was estimated on %d rows, data has %d", record.n, y.shape[0])
    fit = FitResult.from_record(record)
    grid = resolve_grid(config, stored=record.grid)

    reports: List[ReliabilityReport] = []
    for kind in config.kinds:
        report = reliability_with_se(y, fit, grid, kind, config.alpha, jacobian=config.jacobian)
        if config.half_width is not None:
            report.planned_n = required_sample_size(report, config.half_width)
        reports.append(report)
        if config.model_implied:
            reports.append(model_implied_reliability(fit, grid, kind, config.alpha))

    write_json(config.out, ReliabilityDocument(created_at=utc_timestamp(), reports=reports))
    summary = " ".join(f"{r.kind}[{r.jacobian}]={r.point:.4f}(se {r.se:.4f})" for r in reports)
    return CommandOutcome(command="reliability", output_type="reliability_report",
                          outputs=[str(config.out)], summary=summary)

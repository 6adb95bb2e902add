"""File loaders and writers: item parameters, response CSVs, fit records, designs.

Every reader validates before anything is computed and turns malformed input
into InputValidationError (or CategoryRangeError naming row and column).
Bundled simulation designs live under data/designs; example parameters under data/params.

Usage:
    from app.core.loaders import load_item_params, load_responses

    params = load_item_params(Path("true.json"))
    names, responses = load_responses(Path("responses.csv"), params=params)
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from app.core.errors import CategoryRangeError, InputValidationError
from app.core.schemas import FitRecord, ItemParams, SimDesign

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent.parent / "data"

_M = TypeVar("_M", bound=BaseModel)

_bundled_designs: Dict[str, Any] = {}


def _read_model(path: Path, model: Type[_M], what: str) -> _M:
    try:
        raw = path.read_text()
    except OSError as exc:
        raise InputValidationError(f"Cannot read {what} file '{path}': {exc.strerror}.")
    try:
        return model.model_validate_json(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise InputValidationError(
            f"Invalid {what} file '{path}': {where or 'document'}: {first.get('msg')}.",
            path=str(path),
        )


def load_item_params(path: Path) -> ItemParams:
    """Read {"items": [{"a": float, "c": [descending floats]}, ...]}."""
    return _read_model(path, ItemParams, "parameter")


def load_fit(path: Path) -> FitRecord:
    return _read_model(path, FitRecord, "fit")


def load_design(path: Path) -> SimDesign:
    return _read_model(path, SimDesign, "design")


def _load_bundled_designs() -> Dict[str, Any]:
    """Index data/designs/*.json by file stem. Cached after first call."""
    global _bundled_designs
    if not _bundled_designs:
        for p in sorted((DATA_DIR / "designs").glob("*.json")):
            with open(p, "r") as f:
                _bundled_designs[p.stem] = json.load(f)
    return _bundled_designs


def bundled_design(name: str) -> SimDesign:
    """Return one of the shipped designs (e.g. "full_2pl") as a SimDesign."""
    designs = _load_bundled_designs()
    if name not in designs:
        raise InputValidationError(
            f"No bundled design named '{name}'. Available: {', '.join(sorted(designs))}."
        )
    return SimDesign.model_validate(designs[name])


# ─── Response matrices ───────────────────────────────────────────────────────


def load_responses(
    path: Path,
    params: Optional[ItemParams] = None,
) -> Tuple[List[str], np.ndarray]:
    """Read a header-plus-integers CSV into (item names, n x m int matrix).

    Missing cells are rejected, never imputed. With `params`, the column count
    and every category are checked against the items' category ranges.
    Rows are reported 1-based, counting data rows after the header.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputValidationError(f"Cannot parse response file '{path}': {exc}.")

    names = [str(c).strip() for c in df.columns]
    if not names or len(df) == 0:
        raise InputValidationError(f"Response file '{path}' has no data rows.")

    text = df.apply(lambda col: col.str.strip())
    missing = (text == "") | text.apply(lambda col: col.str.upper().isin(["NA", "NAN"]))
    if missing.to_numpy().any():
        r, c = np.argwhere(missing.to_numpy())[0]
        raise InputValidationError(
            f"Missing response at row {r + 1}, column '{names[c]}'; "
            "missing responses are not supported.",
            row=int(r) + 1,
            column=names[c],
        )

    numbers = text.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(numbers) | (numbers != np.round(numbers))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise InputValidationError(
            f"Non-integer response '{text.iat[r, c]}' at row {r + 1}, column '{names[c]}'.",
            row=int(r) + 1,
            column=names[c],
        )
    values = numbers.astype(np.int64)

    if params is not None:
        check_categories(values, params, names)
    else:
        negative = np.argwhere(values < 0)
        if negative.size:
            r, c = negative[0]
            raise CategoryRangeError(
                f"Negative category {values[r, c]} at row {r + 1}, column '{names[c]}'.",
                row=int(r) + 1,
                column=names[c],
            )
    log.info("Loaded %d x %d responses from %s", values.shape[0], values.shape[1], path)
    return names, values


def check_categories(values: np.ndarray, params: ItemParams, names: List[str]) -> None:
    if values.shape[1] != params.n_items:
        raise InputValidationError(
            f"Response file has {values.shape[1]} columns but the model has "
            f"{params.n_items} items."
        )
    limits = params.n_categories
    bad = np.argwhere((values < 0) | (values >= limits[None, :]))
    if bad.size:
        r, c = bad[0]
        raise CategoryRangeError(
            f"Category {values[r, c]} at row {r + 1}, column '{names[c]}' is outside "
            f"0..{limits[c] - 1} for that item.",
            row=int(r) + 1,
            column=names[c],
        )


# ─── Writers ─────────────────────────────────────────────────────────────────


def write_json(path: Path, document: BaseModel) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2) + "\n")


def write_frame(path: Path, frame: pd.DataFrame) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")

"""Run audit trail.

One entry per CLI invocation, success or failure, with a fixed key set:
timestamp, command, input_summary, output_type, exit_code, outputs.
Entries are kept in memory and, when IRT_PRECISION_AUDIT_FILE is set,
appended to that file as JSON lines. Auditing never changes a command's
result: a failing write is logged and dropped.
"""

from __future__ import annotations

import datetime
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

log = logging.getLogger(__name__)

AUDIT_FILE_ENV = "IRT_PRECISION_AUDIT_FILE"

_audit_log: List[Dict[str, Any]] = []


def get_audit_log() -> List[Dict[str, Any]]:
    return _audit_log


def utc_timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _append_to_file(entry: Dict[str, Any]) -> None:
    target = os.environ.get(AUDIT_FILE_ENV)
    if not target:
        return
    try:
        with Path(target).open("a") as f:
            f.write(json.dumps(entry) + "\n")
    except OSError as exc:
        log.warning("Audit entry not written to %s: %s", target, exc)


def log_event(
    command: str,
    input_summary: str,
    output_type: str,
    exit_code: int,
    outputs: Optional[List[str]] = None,
) -> Dict[str, Any]:
    entry: Dict[str, Any] = {
        "timestamp": utc_timestamp(),
        "command": command,
        "input_summary": input_summary,
        "output_type": output_type,
        "exit_code": exit_code,
        "outputs": list(outputs or []),
    }
    _audit_log.append(entry)
    _append_to_file(entry)
    return entry

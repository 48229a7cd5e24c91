"""CSV and JSON rendering of convergence reports."""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np

from src.study import ConvergenceReport
from src.utils import ensure_directories

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('eps', 'h1_gap', 'avg_grad_error', 'bl_corrected_error', 'bound_rhs', 'bound_ok')
FORMATS = ('csv', 'json')


def _csv_cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    return f"{float(value):.12g}"


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def emit_report(report: ConvergenceReport, fmt: str = 'csv') -> str:
    """
    Render a report.

    Args:
        report: Sweep result
        fmt: 'csv' (the six summary columns, 12 significant digits) or
            'json' (every report field)

    Returns:
        Report text with '\\n' line endings
    """
    if fmt == 'json':
        return json.dumps(report.to_dict(), indent=2, default=_json_default) + '\n'
    if fmt != 'csv':
        raise ValueError(f"Unknown report format {fmt!r}; expected one of {FORMATS}")

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([_csv_cell(row.get(column)) for column in CSV_COLUMNS])
    return buffer.getvalue()


def save_report(report: ConvergenceReport, path: str, fmt: Optional[str] = None) -> Path:
    """Write the report; the format defaults to the file suffix, then CSV."""
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip('.').lower() if path.suffix.lstrip('.').lower() in FORMATS else 'csv'
    ensure_directories(path.parent)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(emit_report(report, fmt))
    logger.info(f"Saved {fmt.upper()} report with {len(report.rows)} rows to {path}")
    return path

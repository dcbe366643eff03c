"""CSV and JSON artifact serialization.

Panels travel as CSV with variable names in the first row and the time index
in the first column; an empty cell or the literal ``NA`` marks a missing
value. Numbers are written with 17 significant digits so every float
round-trips exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import ModelOrder, Theta

__all__ = [
    "read_panel_csv",
    "write_panel_csv",
    "write_matrix_csv",
    "write_convergence_csv",
    "theta_to_dict",
    "theta_from_dict",
    "write_json",
    "read_json",
]

NA = "NA"


def format_value(x: float) -> str:
    return format(float(x), ".17g")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def read_panel_csv(path):
    """Parse a panel CSV into ``(values, names, time_labels)``.

    ``values`` is ``n x T`` with NaN in missing cells. Raises ``ValueError``
    with row and column diagnostics on malformed content.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise ValueError(f"{path}: expected a header row with a time column and variables")
    names = [c.strip() for c in rows[0][1:]]
    n = len(names)
    time_labels = []
    columns: list[list[float]] = [[] for _ in range(n)]
    for row_no, row in enumerate(rows[1:], start=2):
        if len(row) != n + 1:
            raise ValueError(
                f"{path}: row {row_no} has {len(row)} fields, expected {n + 1}"
            )
        time_labels.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "" or cell.upper() == NA:
                columns[j].append(np.nan)
                continue
            try:
                columns[j].append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_no}, column {names[j]!r}: "
                    f"cannot parse {cell!r} as a number"
                ) from None
    values = np.array(columns, dtype=float)
    return values, names, time_labels


def write_panel_csv(path, values, mask=None, names=None, time_labels=None) -> None:
    """Write an ``n x T`` matrix as a panel CSV (NA where masked)."""
    values = np.asarray(values, dtype=float)
    n, T = values.shape
    if names is None:
        names = [f"var_{i + 1}" for i in range(n)]
    if time_labels is None:
        time_labels = [str(t + 1) for t in range(T)]
    if mask is None:
        mask = np.isfinite(values)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", *names])
        for t in range(T):
            row = [time_labels[t]]
            for i in range(n):
                row.append(format_value(values[i, t]) if mask[i, t] else NA)
            writer.writerow(row)


def write_matrix_csv(path, values, names, time_labels) -> None:
    """Write a fully observed matrix using the panel convention."""
    write_panel_csv(path, values, mask=np.ones_like(np.asarray(values), dtype=bool),
                    names=names, time_labels=time_labels)


def write_convergence_csv(path, logpost_path) -> None:
    """Iteration trace: log posterior and the relative-change statistic."""
    lp = np.asarray(logpost_path, dtype=float)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "logpost", "rel_change"])
        for k, value in enumerate(lp):
            if k == 0:
                rel = NA
            else:
                denom = 0.5 * (abs(lp[k]) + abs(lp[k - 1]))
                rel = format_value((lp[k] - lp[k - 1]) / denom if denom else 0.0)
            writer.writerow([k, format_value(value), rel])


def theta_to_dict(theta: Theta, order: ModelOrder) -> dict:
    return {
        "order": {"n": order.n, "r": order.r, "p": order.p, "q": order.q, "s": order.s},
        "Lambda": theta.Lambda.tolist(),
        "Phi": theta.Phi.tolist(),
        "psi": theta.psi.tolist(),
        "omega": theta.omega.tolist(),
    }


def theta_from_dict(payload: dict) -> tuple[Theta, ModelOrder]:
    o = payload["order"]
    order = ModelOrder(n=int(o["n"]), r=int(o["r"]), p=int(o["p"]), q=int(o["q"]))
    theta = Theta(
        Lambda=np.array(payload["Lambda"], dtype=float),
        Phi=np.array(payload["Phi"], dtype=float),
        psi=np.array(payload["psi"], dtype=float),
        omega=np.array(payload["omega"], dtype=float),
    )
    theta.check_order(order)
    return theta, order

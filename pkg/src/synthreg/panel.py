"""Panel data model, CSV ingestion, and the differencing transforms.

A panel holds one treated series ``treated`` (length T) and a control matrix
``controls`` of shape (T, N): row t is the vector of control outcomes at
period t.  Periods are 1-based in every user-facing surface (CSV ``t`` column,
reports) and 0-based in arrays.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Panel",
    "TransformedPanel",
    "PanelError",
    "PanelParseError",
    "PanelStructureError",
    "EmptyPanelError",
    "InsufficientHistoryError",
    "load_panel",
    "write_panel",
    "format_float",
    "historical_diff",
    "running_demean",
    "first_diff",
    "levels",
]

BOUND_SLACK = 1e-12


class PanelError(ValueError):
    pass


class PanelParseError(PanelError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class PanelStructureError(PanelError):
    pass


class EmptyPanelError(PanelError):
    pass


class InsufficientHistoryError(PanelError):
    pass


@dataclass(frozen=True, eq=False)
class Panel:
    """Bounded outcome panel.

    ``bound`` is the sup-norm normalization of the panel.  When omitted it is
    inferred as ``max(1, max |entry|)``; panels whose entries exceed 1 are
    accepted and reported through :attr:`exceeds_unit_bound`.
    """

    treated: np.ndarray
    controls: np.ndarray
    bound: float = None  # type: ignore[assignment]

    def __post_init__(self):
        treated = np.array(self.treated, dtype=np.float64, copy=True).reshape(-1)
        controls = np.array(self.controls, dtype=np.float64, copy=True)
        if controls.ndim == 1:
            controls = controls.reshape(-1, 1)
        if controls.ndim != 2:
            raise PanelStructureError(f"controls must be 2-d, got shape {controls.shape}")
        if treated.size == 0 or controls.shape[1] == 0:
            raise EmptyPanelError("panel needs T >= 1 periods and N >= 1 controls")
        if controls.shape[0] != treated.size:
            raise PanelStructureError(
                f"treated has {treated.size} periods but controls has {controls.shape[0]}"
            )
        if not (np.all(np.isfinite(treated)) and np.all(np.isfinite(controls))):
            raise PanelError("panel entries must be finite")
        max_abs = float(max(np.max(np.abs(treated)), np.max(np.abs(controls))))
        bound = max(1.0, max_abs) if self.bound is None else float(self.bound)
        if not bound > 0:
            raise PanelError(f"bound must be positive, got {bound}")
        if max_abs > bound + BOUND_SLACK:
            raise PanelError(f"max |entry| = {max_abs} exceeds bound {bound}")
        treated.setflags(write=False)
        controls.setflags(write=False)
        object.__setattr__(self, "treated", treated)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "bound", bound)

    @property
    def T(self) -> int:
        return self.treated.size

    @property
    def N(self) -> int:
        return self.controls.shape[1]

    @property
    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.treated)), np.max(np.abs(self.controls))))

    @property
    def exceeds_unit_bound(self) -> bool:
        return self.max_abs > 1.0 + BOUND_SLACK

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray([self.T, self.N], dtype=np.int64).tobytes())
        h.update(self.treated.tobytes())
        h.update(self.controls.tobytes())
        return h.hexdigest()[:16]

    def head(self, periods: int) -> "Panel":
        """First ``periods`` periods, keeping the bound."""
        return Panel(self.treated[:periods], self.controls[:periods], self.bound)

    def with_treated(self, treated) -> "Panel":
        return Panel(treated, self.controls)

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.bound == other.bound
            and np.array_equal(self.treated, other.treated)
            and np.array_equal(self.controls, other.controls)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class TransformedPanel:
    """A panel after a causal transform.

    ``level_offsets[t]`` maps a prediction made on the transformed scale back
    to levels: ``level = level_offsets[t] + transformed_prediction``.
    """

    base: Panel
    kind: str
    values: Panel
    level_offsets: np.ndarray = field(repr=False)

    def to_levels(self, transformed_predictions) -> np.ndarray:
        return self.level_offsets + np.asarray(transformed_predictions, dtype=np.float64)


# -- CSV ---------------------------------------------------------------------


def format_float(x: float) -> str:
    """Shortest decimal string that parses back to the same float64."""
    return repr(float(x))


def load_panel(path) -> Panel:
    """Read a panel from CSV with header ``t,y0,y1,...,yN`` and one row per period."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyPanelError(f"{path}: no header")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "t" or header[1] != "y0":
        if len(header) < 3:
            raise EmptyPanelError(f"{path}: need columns t,y0 and at least one control")
        raise PanelStructureError(f"{path}: header must start with t,y0, got {header[:2]}")
    body = rows[1:]
    if not body:
        raise EmptyPanelError(f"{path}: no periods")
    data = np.empty((len(body), len(header) - 1))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise PanelStructureError(
                f"{path}: row {i} has {len(row)} cells, header has {len(header)}"
            )
        for j, cell in enumerate(row[1:]):
            try:
                value = float(cell)
            except ValueError:
                raise PanelParseError(f"{path}: cannot parse {cell!r}", i, header[j + 1]) from None
            if not math.isfinite(value):
                raise PanelParseError(f"{path}: non-finite value {cell!r}", i, header[j + 1])
            data[i - 2, j] = value
    return Panel(data[:, 0], data[:, 1:])


def write_panel(panel: Panel, path) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["t", "y0"] + [f"y{i}" for i in range(1, panel.N + 1)])
    for t in range(panel.T):
        writer.writerow(
            [str(t + 1), format_float(panel.treated[t])]
            + [format_float(v) for v in panel.controls[t]]
        )
    Path(path).write_text(out.getvalue(), encoding="utf-8")


# -- transforms --------------------------------------------------------------


def _stack(panel: Panel) -> np.ndarray:
    # column 0 is the treated unit
    return np.column_stack([panel.treated, panel.controls])


def _past_means(y: np.ndarray) -> np.ndarray:
    """Row t holds the mean of rows 0..t-1; row 0 is zero."""
    csum = np.cumsum(y, axis=0)
    out = np.zeros_like(y)
    counts = np.arange(1, y.shape[0])[:, None]
    out[1:] = csum[:-1] / counts
    return out


def _from_stack(stacked: np.ndarray, bound: float) -> Panel:
    return Panel(stacked[:, 0], stacked[:, 1:], bound)


def levels(panel: Panel) -> TransformedPanel:
    return TransformedPanel(panel, "levels", panel, np.zeros(panel.T))


def historical_diff(panel: Panel) -> TransformedPanel:
    """Difference every unit against its mean over strictly earlier periods.

    Period 1 keeps its level.  With ``bound`` b every entry lies in [-2b, 2b].
    """
    y = _stack(panel)
    means = _past_means(y)
    values = y - means
    return TransformedPanel(
        panel, "historical-diff", _from_stack(values, 2.0 * panel.bound), means[:, 0].copy()
    )


def running_demean(panel: Panel) -> TransformedPanel:
    """Subtract the running mean through period t (inclusive) from period t."""
    y = _stack(panel)
    means = np.cumsum(y, axis=0) / np.arange(1, panel.T + 1)[:, None]
    values = y - means
    values[0] = 0.0
    return TransformedPanel(
        panel, "running-demean", _from_stack(values, 2.0 * panel.bound), means[:, 0].copy()
    )


def first_diff(panel: Panel) -> TransformedPanel:
    """First differences for t >= 2; period 1 carries the level."""
    if panel.T < 2:
        raise InsufficientHistoryError("first differences need T >= 2")
    y = _stack(panel)
    values = y.copy()
    values[1:] = y[1:] - y[:-1]
    offsets = np.zeros(panel.T)
    offsets[1:] = y[:-1, 0]
    return TransformedPanel(panel, "first-diff", _from_stack(values, 2.0 * panel.bound), offsets)

"""Field grids and their CSV representation.

File layout::

    width,height,cell_size,units
    v(0,0),v(1,0),...,v(width-1,0)
    ...                                  (height rows, row-major)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gp import Domain


class FieldFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FieldGrid:
    width: int
    height: int
    cell_size: float
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.width * self.height:
            raise FieldFormatError(
                f"expected {self.width * self.height} values for a "
                f"{self.width}x{self.height} grid, got {v.size}"
            )
        if not np.isfinite(v).all():
            raise FieldFormatError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def domain(self) -> Domain:
        return Domain.grid(self.width, self.height, self.cell_size)

    def __getitem__(self, index: int) -> float:
        return float(self.values[index])


def write_field_csv(field: FieldGrid, path) -> None:
    if "," in field.units or "\n" in field.units:
        raise FieldFormatError("units label may not contain commas or newlines")
    rows = [f"{field.width},{field.height},{field.cell_size!r},{field.units}"]
    grid = field.values.reshape(field.height, field.width)
    rows += [",".join(repr(float(v)) for v in row) for row in grid]
    Path(path).write_text("\n".join(rows) + "\n")


def load_field_csv(path) -> FieldGrid:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise FieldFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 4:
        raise FieldFormatError(f"{path}: header must be 'width,height,cell_size,units'")
    try:
        width, height = int(header[0]), int(header[1])
        cell_size = float(header[2])
    except ValueError as exc:
        raise FieldFormatError(f"{path}: malformed header {lines[0]!r}") from exc
    if width <= 0 or height <= 0 or not cell_size > 0:
        raise FieldFormatError(f"{path}: non-positive grid dimensions in header")
    cells = [c for ln in lines[1:] for c in ln.split(",")]
    if len(cells) != width * height:
        raise FieldFormatError(
            f"{path}: expected {width * height} values, found {len(cells)}"
        )
    try:
        values = np.array([float(c) for c in cells])
    except ValueError as exc:
        raise FieldFormatError(f"{path}: non-numeric cell ({exc})") from exc
    return FieldGrid(width, height, cell_size, values, header[3].strip())

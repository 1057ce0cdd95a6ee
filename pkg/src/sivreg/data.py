"""Column-oriented dataset container and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParseError, TooFewRowsError

MIN_COMPLETE_ROWS = 10


@dataclass(frozen=True)
class Dataset:
    """Named numeric columns of equal length.

    Columns are stored as read-only float64 arrays; the container is
    immutable and safe to share across threads.
    """

    columns: dict[str, np.ndarray]
    n_rows: int = field(default=0)

    def __post_init__(self):
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"column {name!r} is not 1-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValueError(
                    f"column {name!r} has length {arr.shape[0]}, expected {n}")
            if not np.isfinite(arr).all():
                raise ValueError(f"column {name!r} contains NaN or Inf")
            arr = arr.copy()
            arr.flags.writeable = False
            cols[name] = arr
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "n_rows", 0 if n is None else int(n))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset (copy) in the given index order."""
        return Dataset({k: v[indices] for k, v in self.columns.items()})

    def require(self, names: list[str]) -> None:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise KeyError(f"columns not in dataset: {missing}")

    def to_csv(self, path: str | Path) -> None:
        """Write all columns with full-precision (round-trip) floats."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.names)
            cols = [self.columns[k] for k in self.names]
            for i in range(self.n_rows):
                writer.writerow([repr(float(c[i])) for c in cols])


def ingest_csv(path: str | Path, used_columns: list[str] | None = None,
               min_rows: int = MIN_COMPLETE_ROWS) -> tuple[Dataset, int]:
    """Read a CSV file into a Dataset.

    Rows with a missing or non-numeric cell in any *used* column are dropped
    listwise. Returns the dataset together with the number of dropped rows.

    Raises FileNotFoundError, ParseError (malformed numeric cell outside the
    droppable case never occurs: unparseable used cells drop the row, a short
    row raises), and TooFewRowsError if fewer than ``min_rows`` complete rows
    remain.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TooFewRowsError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise ParseError(f"{path}: duplicate column names", 1, 1)
        if used_columns is None:
            used = list(header)
        else:
            missing = [c for c in used_columns if c not in header]
            if missing:
                raise KeyError(f"{path}: columns not in header: {missing}")
            used = list(dict.fromkeys(used_columns))
        used_idx = [header.index(c) for c in used]
        rows: list[list[float]] = []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} cells, "
                                 f"got {len(row)}", line_no, len(row) + 1)
            parsed = []
            ok = True
            for j in used_idx:
                cell = row[j].strip()
                if cell == "" or cell.upper() in ("NA", "NAN", "."):
                    ok = False
                    break
                try:
                    value = float(cell)
                except ValueError:
                    ok = False
                    break
                if not math.isfinite(value):
                    ok = False
                    break
                parsed.append(value)
            if ok:
                rows.append(parsed)
            else:
                dropped += 1
    if len(rows) < min_rows:
        raise TooFewRowsError(
            f"{path}: {len(rows)} complete rows in used columns "
            f"(need >= {min_rows})")
    data = np.asarray(rows, dtype=np.float64)
    return Dataset({name: data[:, k] for k, name in enumerate(used)}), dropped

"""Comma-separated tables: residual datasets and flight logs."""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .residual import CHANNELS, INPUT_COLUMNS, ResidualDataset

FLOAT_FORMAT = "%.17g"

FLIGHT_COLUMNS = (
    ("t_s",)
    + tuple(f"r_{a}_m" for a in "xyz")
    + tuple(f"v_{a}_mps" for a in "xyz")
    + tuple(f"R{i}{j}" for i in range(1, 4) for j in range(1, 4))
    + tuple(f"Omega_{a}_radps" for a in "xyz")
    + ("F_N",)
    + tuple(f"M_{a}_Nm" for a in "xyz")
    + tuple(f"r_d_{a}_m" for a in "xyz")
)


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: np.ndarray

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise TableError(f"Table has no column '{name}'") from None

    def select(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.column(name) for name in names]) if names else self.rows[:, :0]


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path: str | Path, columns: Sequence[str], rows: np.ndarray) -> Path:
    path = Path(path)
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    buffer = io.StringIO()
    np.savetxt(
        buffer,
        rows,
        fmt=FLOAT_FORMAT,
        delimiter=",",
        header=",".join(columns),
        comments="",
    )
    _atomic_write_text(path, buffer.getvalue())
    return path


def read_table(path: str | Path) -> Table:
    path = Path(path)
    if not path.exists():
        raise TableError(f"Data file not found: {path}")
    with path.open(encoding="utf-8") as f:
        header = f.readline().strip()
        if not header:
            raise TableError(f"{path} has no header row")
        columns = tuple(name.strip() for name in header.split(","))
        try:
            rows = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as e:
            raise TableError(f"{path}: {e}") from e
    if rows.size == 0:
        rows = np.empty((0, len(columns)))
    if rows.shape[1] != len(columns):
        raise TableError(f"{path}: header names {len(columns)} columns, rows have {rows.shape[1]}")
    return Table(columns, rows)


def write_dataset(path: str | Path, dataset: ResidualDataset) -> Path:
    return write_table(path, INPUT_COLUMNS + CHANNELS, np.hstack((dataset.inputs, dataset.targets)))


def read_dataset(path: str | Path) -> ResidualDataset:
    table = read_table(path)
    if table.rows.shape[0] == 0:
        raise TableError(f"{path} holds no samples")
    return ResidualDataset(table.select(INPUT_COLUMNS), table.select(CHANNELS))


@dataclass(frozen=True)
class FlightLog:
    """Closed-loop trace sampled at the control ticks."""

    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    R: np.ndarray
    Omega: np.ndarray
    F: np.ndarray
    M: np.ndarray
    r_d: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    @classmethod
    def empty(cls) -> "FlightLog":
        z3 = np.empty((0, 3))
        return cls(np.empty(0), z3, z3, np.empty((0, 3, 3)), z3, np.empty(0), z3, z3)

    def rows(self) -> np.ndarray:
        n = len(self)
        return np.hstack(
            (
                self.t.reshape(n, 1),
                self.r,
                self.v,
                self.R.reshape(n, 9),
                self.Omega,
                self.F.reshape(n, 1),
                self.M,
                self.r_d,
            )
        )

    @classmethod
    def from_table(cls, table: Table) -> "FlightLog":
        def cols(prefix: str, suffix: str) -> np.ndarray:
            return table.select([f"{prefix}{a}{suffix}" for a in "xyz"])

        n = table.rows.shape[0]
        rotation = table.select([f"R{i}{j}" for i in range(1, 4) for j in range(1, 4)])
        return cls(
            t=table.column("t_s"),
            r=cols("r_", "_m"),
            v=cols("v_", "_mps"),
            R=rotation.reshape(n, 3, 3),
            Omega=cols("Omega_", "_radps"),
            F=table.column("F_N"),
            M=cols("M_", "_Nm"),
            r_d=cols("r_d_", "_m"),
        )


def write_flight_log(path: str | Path, log: FlightLog) -> Path:
    return write_table(path, FLIGHT_COLUMNS, log.rows())


def read_flight_log(path: str | Path) -> FlightLog:
    table = read_table(path)
    missing = [name for name in FLIGHT_COLUMNS if name not in table.columns]
    if missing:
        raise TableError(f"{path} is not a flight log (missing {', '.join(missing)})")
    return FlightLog.from_table(table)

import tempfile
import unittest
from pathlib import Path

import numpy as np

from msgp_bench.datasets import (
    FLIGHT_COLUMNS,
    FlightLog,
    TableError,
    read_dataset,
    read_flight_log,
    read_table,
    write_dataset,
    write_flight_log,
    write_table,
)
from msgp_bench.residual import CHANNELS, INPUT_COLUMNS, ResidualDataset


def _flight(n: int = 4) -> FlightLog:
    rng = np.random.default_rng(0)
    R = np.stack([np.eye(3)] * n)
    return FlightLog(
        t=np.arange(n) * 0.01,
        r=rng.normal(size=(n, 3)),
        v=rng.normal(size=(n, 3)),
        R=R,
        Omega=rng.normal(size=(n, 3)),
        F=rng.uniform(10.0, 14.0, size=n),
        M=rng.normal(size=(n, 3)),
        r_d=rng.normal(size=(n, 3)),
    )


class TestTables(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_dataset_header_and_values_survive_exactly(self) -> None:
        rng = np.random.default_rng(1)
        dataset = ResidualDataset(rng.normal(size=(5, 9)), rng.normal(size=(5, 6)) * 1e-7)
        path = write_dataset(self.tmp / "nested" / "train.csv", dataset)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        self.assertEqual(header, ",".join(INPUT_COLUMNS + CHANNELS))
        loaded = read_dataset(path)
        np.testing.assert_array_equal(loaded.inputs, dataset.inputs)
        np.testing.assert_array_equal(loaded.targets, dataset.targets)

    def test_columns_are_found_by_name(self) -> None:
        path = self.tmp / "shuffled.csv"
        columns = tuple(reversed(INPUT_COLUMNS + CHANNELS))
        rows = np.arange(2 * len(columns), dtype=float).reshape(2, -1)
        write_table(path, columns, rows)
        loaded = read_dataset(path)
        np.testing.assert_array_equal(loaded.inputs[:, 0], rows[:, columns.index(INPUT_COLUMNS[0])])

    def test_flight_log_round_trip(self) -> None:
        log = _flight()
        path = write_flight_log(self.tmp / "flight.csv", log)
        self.assertEqual(read_table(path).columns, FLIGHT_COLUMNS)
        loaded = read_flight_log(path)
        self.assertEqual(len(loaded), 4)
        np.testing.assert_array_equal(loaded.R, log.R)
        np.testing.assert_array_equal(loaded.r_d, log.r_d)
        np.testing.assert_array_equal(loaded.F, log.F)

    def test_single_row_table_keeps_two_dimensions(self) -> None:
        path = write_table(self.tmp / "one.csv", ("a", "b"), np.array([[1.0, 2.0]]))
        self.assertEqual(read_table(path).rows.shape, (1, 2))

    def test_bad_tables_raise_table_error(self) -> None:
        with self.assertRaises(TableError):
            read_table(self.tmp / "missing.csv")

        ragged = self.tmp / "ragged.csv"
        ragged.write_text("a,b,c\n1,2\n", encoding="utf-8")
        with self.assertRaises(TableError):
            read_table(ragged)

        empty = write_table(self.tmp / "empty.csv", INPUT_COLUMNS + CHANNELS, np.empty((0, 15)))
        with self.assertRaises(TableError):
            read_dataset(empty)

        with self.assertRaises(TableError):
            read_dataset(write_table(self.tmp / "partial.csv", INPUT_COLUMNS, np.zeros((2, 9))))

        with self.assertRaisesRegex(TableError, "not a flight log"):
            read_flight_log(write_table(self.tmp / "notlog.csv", ("t_s",), np.zeros((2, 1))))


if __name__ == "__main__":
    unittest.main()

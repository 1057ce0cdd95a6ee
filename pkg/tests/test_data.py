"""Dataset container and CSV ingestion."""

import numpy as np
import pytest

from sivreg import (
    Dataset,
    DgpConfig,
    ParseError,
    TooFewRowsError,
    generate_population,
    ingest_csv,
)


class TestDataset:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Dataset({"a": np.arange(3.0), "b": np.arange(4.0)})

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Dataset({"a": np.array([1.0, np.nan, 2.0])})
        with pytest.raises(ValueError):
            Dataset({"a": np.array([1.0, np.inf, 2.0])})

    def test_columns_read_only(self):
        d = Dataset({"a": np.arange(5.0)})
        with pytest.raises(ValueError):
            d["a"][0] = 9.0

    def test_take_reorders(self):
        d = Dataset({"a": np.arange(5.0)})
        sub = d.take(np.array([3, 1]))
        np.testing.assert_array_equal(sub["a"], [3.0, 1.0])


class TestIngestCsv:
    def test_missing_cell_dropped_with_count(self, tmp_path):
        p = tmp_path / "t.csv"
        body = "a,b,c\n" + "\n".join(f"{i},{i * 2},{i * 3}"
                                     for i in range(12))
        body += "\n5,,15\n"
        p.write_text(body)
        data, dropped = ingest_csv(p, ["a", "b"])
        assert dropped == 1
        assert data.n_rows == 12

    def test_unused_column_missingness_ignored(self, tmp_path):
        p = tmp_path / "t.csv"
        rows = [f"{i},{i * 2}," for i in range(12)]  # c always empty
        p.write_text("a,b,c\n" + "\n".join(rows) + "\n")
        data, dropped = ingest_csv(p, ["a", "b"])
        assert dropped == 0 and data.n_rows == 12

    def test_header_only_too_few_rows(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n")
        with pytest.raises(TooFewRowsError):
            ingest_csv(p)

    def test_file_not_found(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_csv(tmp_path / "nope.csv")

    def test_short_row_parse_error(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,2\n3\n" + "\n".join(f"{i},{i}"
                                                 for i in range(12)))
        with pytest.raises(ParseError) as err:
            ingest_csv(p)
        assert err.value.line == 3

    def test_round_trip_full_precision(self, tmp_path):
        cfg = DgpConfig(population_size=200, sample_size=50,
                        n_generations=1, n_bootstrap_per_generation=1,
                        seed=3)
        data, _ = generate_population(cfg)
        p = tmp_path / "sim.csv"
        data.to_csv(p)
        back, dropped = ingest_csv(p)
        assert dropped == 0
        for col in data.names:
            assert (back[col] == data[col]).all()  # exact round trip

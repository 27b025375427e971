"""Field grids and the CSV reader/writer."""

import numpy as np
import pytest

from epsgpp.field import FieldFormatError, FieldGrid, load_field_csv, write_field_csv
from epsgpp.gp import Domain, GpHyperparams, sample_field
from epsgpp.harness import LGK_FIELD


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


class TestFieldGrid:
    def test_size_checked(self):
        with pytest.raises(FieldFormatError, match="expected 6 values"):
            FieldGrid(3, 2, 1.0, np.zeros(5))

    def test_finite_checked(self):
        with pytest.raises(FieldFormatError, match="finite"):
            FieldGrid(2, 1, 1.0, np.array([0.0, np.nan]))

    def test_values_read_only(self):
        f = FieldGrid(2, 1, 1.0, np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            f.values[0] = 5.0

    def test_domain_matches_grid(self):
        f = FieldGrid(4, 3, 0.5, np.arange(12.0))
        dom = f.domain()
        assert len(dom) == 12
        assert dom.location(5).coords == (0.5, 0.5)
        assert f[5] == 5.0


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        hy = GpHyperparams(0.0, 1.0, 1e-5, (0.2236, 0.2236))
        f = sample_field(Domain.grid(20, 20, 0.05), hy, seed=3)
        path = tmp_path / "field.csv"
        write_field_csv(f, path)
        g = load_field_csv(path)
        assert (g.width, g.height, g.cell_size) == (20, 20, 0.05)
        assert np.array_equal(f.values, g.values)

    def test_units_preserved(self, tmp_path):
        f = FieldGrid(2, 2, 40.0, np.array([1.0, 2.0, 3.0, 4.0]), units="m")
        write_field_csv(f, tmp_path / "f.csv")
        assert load_field_csv(tmp_path / "f.csv").units == "m"

    def test_units_with_comma_rejected(self, tmp_path):
        with pytest.raises(FieldFormatError):
            write_field_csv(FieldGrid(1, 1, 1.0, np.zeros(1), units="a,b"), tmp_path / "f.csv")

    def test_fourteen_by_twelve(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.normal(3.26, 0.2, size=(12, 14))
        lines = ["14,12,40.0,m"] + [",".join(f"{v:.6f}" for v in row) for row in vals]
        f = load_field_csv(write_lines(tmp_path / "lgk.csv", lines))
        assert f.values.size == 168
        assert (f.width, f.height) == (LGK_FIELD["width"], LGK_FIELD["height"])
        assert f[14] == pytest.approx(vals[1, 0], abs=1e-6)

    def test_count_mismatch(self, tmp_path):
        vals = [f"{v:.3f}" for v in np.linspace(0, 1, 167)]
        lines = ["14,12,40.0,m", ",".join(vals)]
        with pytest.raises(FieldFormatError, match="expected 168 values, found 167"):
            load_field_csv(write_lines(tmp_path / "bad.csv", lines))

    @pytest.mark.parametrize("header", ["14,12,40.0", "a,12,40.0,m", "14,12,zero,m", "0,12,40.0,m", "14,12,-1,m"])
    def test_malformed_header(self, tmp_path, header):
        with pytest.raises(FieldFormatError):
            load_field_csv(write_lines(tmp_path / "bad.csv", [header, "1.0"]))

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(FieldFormatError, match="non-numeric"):
            load_field_csv(write_lines(tmp_path / "bad.csv", ["2,1,1.0,", "1.0,abc"]))

    def test_empty_file(self, tmp_path):
        with pytest.raises(FieldFormatError, match="empty"):
            load_field_csv(write_lines(tmp_path / "bad.csv", [""]))

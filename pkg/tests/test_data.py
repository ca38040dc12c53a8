import numpy as np
import pytest
from numpy.testing import assert_allclose

from mapcalib.data import (
    ColumnRole,
    Dataset,
    RngSeed,
    binarize_threshold,
    load_dataset,
    parse_kv,
    save_dataset,
    simple_random_subsample,
)
from mapcalib.errors import (
    DuplicateCalibrationIndex,
    MissingColumn,
    NoCalibrationRows,
    NonNumericCell,
    SampleTooLarge,
    SchemaError,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


BASIC_CSV = """y,y_map,x,cal
1.0,0.9,0.1,1
,1.4,0.2,0
3.0,2.7,0.3,1
,0.4,0.4,0
5.0,5.2,0.5,1
"""

BASIC_SCHEMA = """# roles
column.y.role = response
column.y.proxy = y_map
column.x.role = covariate
calibration.column = cal
"""


@pytest.fixture
def basic(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA)
    return load_dataset(csv_path, schema_path)


def test_load_basic_shapes(basic):
    assert basic.N == 5
    assert basic.n == 3
    assert basic.dropped_rows == 0
    assert list(basic.calibration) == [0, 2, 4]
    assert basic.coefficient_names() == ("intercept", "x")


def test_gt_blank_outside_calibration_is_fine(basic):
    assert np.isnan(basic.columns["y"][1])
    assert_allclose(basic.calib_response_gt(), [1.0, 3.0, 5.0])
    assert_allclose(basic.map_response_proxy(), [0.9, 1.4, 2.7, 0.4, 5.2])


def test_design_matrices(basic):
    Xg = basic.calib_design_gt()
    assert Xg.shape == (3, 2)
    assert_allclose(Xg[:, 0], 1.0)  # intercept prepended
    assert_allclose(Xg[:, 1], [0.1, 0.3, 0.5])
    Xm = basic.map_design_proxy()
    assert Xm.shape == (5, 2)


def test_gt_blank_on_calibration_row_rejected(tmp_path):
    bad = BASIC_CSV.replace("1.0,0.9", ",0.9")  # calib row 0 loses its truth
    csv_path = _write(tmp_path / "d.csv", bad)
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA)
    with pytest.raises(SchemaError, match="calibration"):
        load_dataset(csv_path, schema_path)


def test_rows_with_missing_required_cells_dropped(tmp_path):
    holes = BASIC_CSV.replace(",1.4,0.2,0", ",,0.2,0")  # y_map required everywhere
    csv_path = _write(tmp_path / "d.csv", holes)
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA)
    ds = load_dataset(csv_path, schema_path)
    assert ds.N == 4
    assert ds.dropped_rows == 1
    assert list(ds.calibration) == [0, 1, 3]  # positions shift after the drop


def test_missing_column(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    schema_path = _write(tmp_path / "d.schema",
                         BASIC_SCHEMA + "column.elev.role = covariate\n")
    with pytest.raises(MissingColumn, match="elev"):
        load_dataset(csv_path, schema_path)


def test_non_numeric_cell(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV.replace("0.3", "three"))
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA)
    with pytest.raises(NonNumericCell, match="three"):
        load_dataset(csv_path, schema_path)


def test_calibration_column_must_be_binary(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV.replace(",1\n", ",2\n"))
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA)
    with pytest.raises(SchemaError, match="0/1"):
        load_dataset(csv_path, schema_path)


def test_no_calibration_rows(tmp_path):
    all_zero = BASIC_CSV.replace(",1\n", ",0\n")
    # blank gt everywhere is then fine; make all rows proxy-only
    all_zero = all_zero.replace("1.0,", ",").replace("3.0,", ",").replace("5.0,", ",")
    csv_path = _write(tmp_path / "d.csv", all_zero)
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA)
    with pytest.raises(NoCalibrationRows):
        load_dataset(csv_path, schema_path)


def test_calibration_file(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    _write(tmp_path / "cal.txt", "0\n4\n")
    schema = BASIC_SCHEMA.replace("calibration.column = cal",
                                  "calibration.file = cal.txt")
    schema_path = _write(tmp_path / "d.schema", schema)
    ds = load_dataset(csv_path, schema_path)
    assert list(ds.calibration) == [0, 4]


def test_calibration_file_duplicates(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    _write(tmp_path / "cal.txt", "0\n0\n")
    schema = BASIC_SCHEMA.replace("calibration.column = cal",
                                  "calibration.file = cal.txt")
    schema_path = _write(tmp_path / "d.schema", schema)
    with pytest.raises(DuplicateCalibrationIndex):
        load_dataset(csv_path, schema_path)


def test_calibration_file_out_of_range(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    _write(tmp_path / "cal.txt", "0\n17\n")
    schema = BASIC_SCHEMA.replace("calibration.column = cal",
                                  "calibration.file = cal.txt")
    schema_path = _write(tmp_path / "d.schema", schema)
    with pytest.raises(SchemaError, match="outside"):
        load_dataset(csv_path, schema_path)


def test_unknown_schema_key(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    schema_path = _write(tmp_path / "d.schema", BASIC_SCHEMA + "colour = blue\n")
    with pytest.raises(SchemaError, match="colour"):
        load_dataset(csv_path, schema_path)


def test_schema_needs_exactly_one_calibration_source(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    schema_path = _write(
        tmp_path / "d.schema",
        BASIC_SCHEMA + "calibration.file = cal.txt\n")
    with pytest.raises(SchemaError, match="exactly one"):
        load_dataset(csv_path, schema_path)


def test_schema_as_dict(tmp_path):
    csv_path = _write(tmp_path / "d.csv", BASIC_CSV)
    ds = load_dataset(csv_path, {
        "column.y.role": "response",
        "column.y.proxy": "y_map",
        "column.x.role": "covariate",
        "calibration.column": "cal",
    })
    assert ds.n == 3


def test_save_round_trip(tmp_path, basic):
    csv_path = str(tmp_path / "out.csv")
    schema_path = str(tmp_path / "out.schema")
    save_dataset(basic, csv_path, schema_path)
    again = load_dataset(csv_path, schema_path)
    assert again.N == basic.N
    assert list(again.calibration) == list(basic.calibration)
    assert_allclose(again.map_response_proxy(), basic.map_response_proxy())
    assert_allclose(again.calib_response_gt(), basic.calib_response_gt())


def test_covariate_matrix_excludes_proxied_covariates(tmp_path):
    csv_text = "y,x1,x1_map,x2,cal\n1,0.5,0.4,2.0,1\n2,,0.6,3.0,0\n3,0.7,0.9,4.0,1\n"
    csv_path = _write(tmp_path / "d.csv", csv_text)
    ds = load_dataset(csv_path, {
        "column.y.role": "response",
        "column.x1.role": "covariate",
        "column.x1.proxy": "x1_map",
        "column.x2.role": "covariate",
        "calibration.column": "cal",
    })
    M = ds.covariate_matrix_gt()
    assert M.shape == (3, 1)
    assert_allclose(M[:, 0], [2.0, 3.0, 4.0])


def test_parse_kv():
    kv = parse_kv("a = 1\n# comment\n\nb.c = two words\n")
    assert kv == {"a": "1", "b.c": "two words"}
    with pytest.raises(ValueError, match="duplicate"):
        parse_kv("a = 1\na = 2\n")
    with pytest.raises(ValueError):
        parse_kv("not a pair\n")


def test_column_role_validation():
    with pytest.raises(SchemaError):
        ColumnRole(name="y", kind="outcome", source="gt_everywhere", proxy=None)
    with pytest.raises(SchemaError):
        ColumnRole(name="y", kind="response", source="proxied", proxy=None)


def test_rng_seed_deterministic_and_forks():
    a = RngSeed(7, (1, 2)).generator().integers(0, 1 << 30, 5)
    b = RngSeed(7, (1, 2)).generator().integers(0, 1 << 30, 5)
    c = RngSeed(7, (1, 3)).generator().integers(0, 1 << 30, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    child = RngSeed(7).child(4)
    assert child.path == (4,)


def test_subsample_properties():
    idx = simple_random_subsample(100, 10, RngSeed(0))
    assert idx.shape == (10,)
    assert np.all(np.diff(idx) > 0)  # sorted, unique
    assert idx.min() >= 0 and idx.max() < 100
    again = simple_random_subsample(100, 10, RngSeed(0))
    assert np.array_equal(idx, again)
    assert not np.array_equal(idx, simple_random_subsample(100, 10, RngSeed(1)))


def test_subsample_full_population():
    idx = simple_random_subsample(6, 6, RngSeed(3))
    assert np.array_equal(idx, np.arange(6))


def test_subsample_too_large():
    with pytest.raises(SampleTooLarge):
        simple_random_subsample(5, 6, RngSeed(0))
    with pytest.raises(SampleTooLarge):
        simple_random_subsample(5, 0, RngSeed(0))


def test_subsample_is_roughly_uniform():
    # every row should appear in about n/N of draws
    hits = np.zeros(20)
    for s in range(400):
        hits[simple_random_subsample(20, 5, RngSeed(s))] += 1
    freq = hits / 400
    assert np.all(np.abs(freq - 0.25) < 0.08)  # ~4 sigma of binomial(400, .25)


def test_binarize_threshold():
    col = np.array([1.0, 2.0, 3.0])
    assert_allclose(binarize_threshold(col, 2.0, ">="), [0.0, 1.0, 1.0])
    assert_allclose(binarize_threshold(col, 2.0, ">"), [0.0, 0.0, 1.0])
    assert_allclose(binarize_threshold(col, 2.0, "<="), [1.0, 1.0, 0.0])
    assert_allclose(binarize_threshold(col, 2.0, "<"), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        binarize_threshold(col, 2.0, "==")


def test_with_calibration(basic):
    narrowed = basic.with_calibration([0, 2])
    assert narrowed.n == 2
    assert basic.n == 3  # original untouched


def test_columns_are_read_only(basic):
    with pytest.raises(ValueError):
        basic.columns["y_map"][0] = 99.0

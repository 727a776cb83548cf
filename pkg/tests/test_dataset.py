import numpy as np
import pytest

from terracarbon.dataset import (
    REGISTRY,
    CategoryError,
    MissingFeatureError,
    SampleTable,
    TargetTransform,
    extract_samples,
    get_spec,
    one_hot,
    read_folds,
    read_table_csv,
    specs_for,
    train_test_folds,
    write_folds,
    write_table_csv,
)
from terracarbon.grid import GeoTransform, Grid, GridStack

REF = GeoTransform(0.0, 10.0, 1.0, 1.0)

MODEL_A = (
    "VH", "VV", "B2", "B3", "B4", "B5", "B6", "B7", "B8A", "B11", "B12",
    "EVI", "NDVI", "SATVI", "Elevation", "CS", "LSF", "TWI",
)  # fmt: skip


def test_registry_contents():
    assert sorted(n for t, n in REGISTRY if t == "AGB") == list("ABCDFH")
    assert sorted(n for t, n in REGISTRY if t == "SOC") == list("ABCDEG")
    assert get_spec("AGB", "A").feature_names == MODEL_A
    assert get_spec("SOC", "A").feature_names == MODEL_A
    assert get_spec("SOC", "G").feature_names == MODEL_A + ("AGB",)
    h = get_spec("AGB", "H").feature_names
    assert {"SOC", "SOCD", "Woodland"} <= set(h)
    assert not {"B2", "B3", "LSF", "TWI"} & set(h)
    for spec in specs_for("SOC"):
        assert spec.transform is TargetTransform.NATURAL_LOG
    for spec in specs_for("AGB"):
        assert spec.transform is TargetTransform.IDENTITY
        assert spec.target not in spec.feature_names


def test_unknown_spec():
    with pytest.raises(KeyError, match="AGB/Z"):
        get_spec("AGB", "Z")


def test_one_hot():
    g = Grid(REF, [[1.0, 0.0, -9999.0]], name="Inventory")
    st = one_hot(g, {"Woodland": 1.0, "Other": 0.0})
    assert st.names == ["Woodland", "Other"]
    assert st["Woodland"].values[0, :2].tolist() == [1.0, 0.0]
    assert st["Other"].values[0, :2].tolist() == [0.0, 1.0]
    assert st["Woodland"].nodata_mask().tolist() == [[False, False, True]]
    assert one_hot(g, [0.0, 1.0]).names == ["Inventory_0", "Inventory_1"]


def test_one_hot_unknown_category_names_value_and_cell():
    g = Grid(REF, [[1.0, 3.0]], name="Inventory")
    with pytest.raises(CategoryError, match=r"3\.0.*\(0, 1\)"):
        one_hot(g, [0.0, 1.0])


def _stack():
    a = Grid(REF, [[1.0, 2.0], [3.0, -9999.0]], name="VH")
    t = Grid(REF, [[10.0, -9999.0], [30.0, 40.0]], name="AGB")
    return GridStack([a, t])


def test_extract_samples_row_major_and_nodata():
    st = _stack()
    spec = get_spec("AGB", "A")
    spec = type(spec)("X", "AGB", ("VH",), TargetTransform.IDENTITY)
    table = extract_samples(st, spec, st["AGB"])
    assert table.X[:, 0].tolist() == [1.0, 3.0]
    assert table.y.tolist() == [10.0, 30.0]
    assert table.cell_index.tolist() == [[0, 0], [1, 0]]


def test_extract_samples_log_target():
    st = _stack()
    spec = type(get_spec("SOC", "A"))("X", "AGB", ("VH",), TargetTransform.NATURAL_LOG)
    table = extract_samples(st, spec, st["AGB"])
    np.testing.assert_allclose(table.y, np.log([10.0, 30.0]))
    np.testing.assert_allclose(table.raw_target(), [10.0, 30.0])
    bad = Grid(REF, [[0.0, 1.0], [1.0, 1.0]], name="AGB")
    with pytest.raises(ValueError, match="1 cell"):
        extract_samples(st, spec, bad)


def test_extract_samples_missing_feature():
    st = _stack()
    with pytest.raises(MissingFeatureError, match="VV"):
        extract_samples(st, get_spec("AGB", "A"), st["AGB"])


@pytest.mark.parametrize(("n", "k"), [(10, 5), (11, 5), (103, 7), (5, 5)])
def test_folds_partition(n, k):
    folds = train_test_folds(n, k, seed=3)
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert all(np.all(np.diff(f) > 0) for f in folds)
    again = train_test_folds(n, k, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


def test_folds_errors():
    with pytest.raises(ValueError):
        train_test_folds(3, 5, 0)
    with pytest.raises(ValueError):
        train_test_folds(10, 1, 0)


def test_csv_and_fold_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    table = SampleTable.from_arrays(rng.normal(size=(6, 3)), rng.normal(size=6), ["a", "b", "c"], "AGB")
    write_table_csv(table, tmp_path / "t.csv")
    back = read_table_csv(tmp_path / "t.csv")
    assert back.feature_names == ("a", "b", "c")
    assert np.array_equal(back.X, table.X) and np.array_equal(back.y, table.y)
    folds = train_test_folds(6, 3, 1)
    write_folds(folds, tmp_path / "f.json")
    assert all(np.array_equal(a, b) for a, b in zip(folds, read_folds(tmp_path / "f.json")))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terracarbon.grid import (
    AlignmentError,
    DuplicateBandError,
    GeoTransform,
    Grid,
    GridStack,
    MissingGeoreferenceError,
    UnreadableFileError,
    UnsupportedFormatError,
    UnwritablePathError,
    read_grid,
    resample_nearest,
    stack,
    write_grid,
)

REF = GeoTransform(1000.0, 5000.0, 10.0, 10.0, "EPSG:27700")


def _brute_nearest(src: Grid, target: GeoTransform, width: int, height: int):
    """Pick the source cell containing each target centre; boundary ties go to the lower index."""
    out = np.full((height, width), src.nodata)
    s = src.transform
    for r in range(height):
        y = target.origin_y - (r + 0.5) * target.pixel_h
        for c in range(width):
            x = target.origin_x + (c + 0.5) * target.pixel_w
            hit = None
            for i in range(src.height):
                top = s.origin_y - i * s.pixel_h
                if not (top - s.pixel_h - 1e-9 * s.pixel_h <= y <= top + 1e-9 * s.pixel_h):
                    continue
                for j in range(src.width):
                    left = s.origin_x + j * s.pixel_w
                    if left - 1e-9 * s.pixel_w <= x <= left + s.pixel_w + 1e-9 * s.pixel_w:
                        hit = (i, j)
                        break
                if hit:
                    break
            if hit:
                out[r, c] = src.values[hit]
    return out


def test_cell_centers():
    xs, ys = REF.cell_centers(3, 2)
    assert xs.tolist() == [1005.0, 1015.0, 1025.0]
    assert ys.tolist() == [4995.0, 4985.0]


def test_grid_is_read_only():
    g = Grid(REF, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_nodata_mask_is_bit_exact():
    g = Grid(REF, [[-9999.0, -9999.000000001], [0.0, np.nan]], nodata=-9999.0)
    assert g.nodata_mask().tolist() == [[True, False], [False, False]]
    nan_grid = Grid(REF, [[np.nan, 1.0]], nodata=np.nan)
    assert nan_grid.nodata_mask().tolist() == [[True, False]]


def test_stack_rejects_duplicates_and_misalignment():
    a = Grid(REF, np.zeros((2, 2)), name="a")
    with pytest.raises(DuplicateBandError):
        GridStack([a, a])
    shifted = Grid(GeoTransform(1001.0, 5000.0, 10.0, 10.0, "EPSG:27700"), np.zeros((2, 2)), name="b")
    with pytest.raises(AlignmentError):
        GridStack([a, shifted])
    other_crs = Grid(GeoTransform(1000.0, 5000.0, 10.0, 10.0, "EPSG:4326"), np.zeros((2, 2)), name="c")
    with pytest.raises(AlignmentError):
        GridStack([a, other_crs])


def test_stack_lookup_by_name():
    s = GridStack([Grid(REF, np.zeros((2, 2)), name="a"), Grid(REF, np.ones((2, 2)), name="b")])
    assert s.names == ["a", "b"]
    assert s["b"].values[0, 0] == 1.0
    with pytest.raises(KeyError, match="zzz"):
        s["zzz"]


def test_resample_identity():
    g = Grid(REF, np.arange(12.0).reshape(3, 4), name="x")
    out = resample_nearest(g, REF, 4, 3)
    assert np.array_equal(out.values, g.values)


def test_resample_fine_to_coarse_picks_middle_cell():
    fine = Grid(GeoTransform(0.0, 30.0, 1.0, 1.0), np.arange(900.0).reshape(30, 30))
    out = resample_nearest(fine, GeoTransform(0.0, 30.0, 3.0, 3.0), 10, 10)
    assert np.array_equal(out.values, fine.values[1::3, 1::3])


def test_resample_tie_goes_to_smaller_index():
    # Coarse 2-unit cells: target 1-unit centres never tie; a 2x shift makes centres land on edges.
    src = Grid(GeoTransform(0.0, 4.0, 1.0, 1.0), np.arange(16.0).reshape(4, 4))
    target = GeoTransform(-0.5, 4.5, 1.0, 1.0)  # centres fall exactly on source edges
    out = resample_nearest(src, target, 5, 5)
    assert np.array_equal(out.values, _brute_nearest(src, target, 5, 5))
    assert out.values[1, 1] == src.values[0, 0]  # centre (0, 4) borders four cells -> top-left
    assert out.values[2, 2] == src.values[1, 1]


def test_resample_outside_extent_is_nodata():
    src = Grid(GeoTransform(0.0, 2.0, 1.0, 1.0), np.ones((2, 2)), nodata=-1.0)
    out = resample_nearest(src, GeoTransform(-2.0, 2.0, 1.0, 1.0), 4, 2)
    assert out.values.tolist() == [[-1.0, -1.0, 1.0, 1.0], [-1.0, -1.0, 1.0, 1.0]]


@settings(max_examples=40, deadline=None)
@given(
    ox=st.floats(-5, 5),
    oy=st.floats(-5, 5),
    pw=st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0]),
    ph=st.sampled_from([0.5, 1.0, 2.5]),
    w=st.integers(1, 6),
    h=st.integers(1, 6),
)
def test_resample_matches_brute_force(ox, oy, pw, ph, w, h):
    src = Grid(GeoTransform(0.0, 6.0, 1.5, 1.0), np.arange(24.0).reshape(6, 4), nodata=-1.0)
    target = GeoTransform(ox, oy + 3.0, pw, ph)
    out = resample_nearest(src, target, w, h)
    assert np.array_equal(out.values, _brute_nearest(src, target, w, h))


def test_stack_resamples_only_misaligned():
    a = Grid(REF, np.ones((2, 2)), name="a")
    fine = Grid(GeoTransform(1000.0, 5000.0, 5.0, 5.0, "EPSG:27700"), np.arange(16.0).reshape(4, 4), name="f")
    s = stack([a, fine], REF, 2, 2)
    assert s["a"] is a
    assert s["f"].values.tolist() == [[0.0, 2.0], [8.0, 10.0]]


@pytest.mark.parametrize("suffix", [".tif", ".grid"])
@pytest.mark.parametrize("nodata", [-9999.0, np.nan, 1e38])
def test_round_trip_is_bit_exact(tmp_path, suffix, nodata):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(5, 7)) * 1e3
    values[0, 0] = nodata
    values[2, 3] = 1 / 3
    g = Grid(REF, values, nodata, "band")
    path = tmp_path / f"band{suffix}"
    write_grid(g, path)
    back = read_grid(path)
    assert back.values.view(np.uint64).tolist() == g.values.view(np.uint64).tolist()
    assert back.transform == REF
    assert math.isnan(back.nodata) if math.isnan(nodata) else back.nodata == nodata


def test_compressed_tiff_round_trip(tmp_path):
    g = Grid(REF, np.zeros((50, 50)), name="z")
    write_grid(g, tmp_path / "z.tif", compress=True)
    write_grid(g, tmp_path / "raw.tif")
    assert (tmp_path / "z.tif").stat().st_size < (tmp_path / "raw.tif").stat().st_size
    assert np.array_equal(read_grid(tmp_path / "z.tif").values, g.values)


def test_read_errors(tmp_path):
    with pytest.raises(UnreadableFileError):
        read_grid(tmp_path / "missing.tif")
    empty = tmp_path / "empty.tif"
    empty.write_bytes(b"")
    with pytest.raises(UnsupportedFormatError):
        read_grid(empty)
    junk = tmp_path / "junk.tif"
    junk.write_bytes(b"\x89PNG....")
    with pytest.raises(UnsupportedFormatError):
        read_grid(junk)


def test_plain_tiff_lacks_georeference(tmp_path):
    import tifffile

    path = tmp_path / "plain.tif"
    tifffile.imwrite(path, np.zeros((3, 3)))
    with pytest.raises(MissingGeoreferenceError):
        read_grid(path)


def test_write_to_missing_directory(tmp_path):
    with pytest.raises(UnwritablePathError):
        write_grid(Grid(REF, np.zeros((1, 1))), tmp_path / "no" / "such" / "dir.tif")

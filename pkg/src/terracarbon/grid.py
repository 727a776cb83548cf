"""Single-band raster model, GeoTIFF/GridText I/O and nearest-neighbour resampling.

All geometry uses the cell-centre convention: the centre of cell ``(r, c)`` is
``(origin_x + (c + 0.5) * pixel_w, origin_y - (r + 0.5) * pixel_h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import tifffile

DEFAULT_NODATA = -9999.0
ALIGN_TOL = 1e-6

GEOTIFF_SUFFIXES = (".tif", ".tiff")
GRIDTEXT_SUFFIXES = (".grid", ".txt", ".gtxt")

# GeoTIFF tag ids
_PIXEL_SCALE = 33550
_TIEPOINT = 33922
_TRANSFORMATION = 34264
_GEOKEY_DIRECTORY = 34735
_GEO_ASCII = 34737
_GDAL_NODATA = 42113

_GRIDTEXT_KEYS = ("width", "height", "origin_x", "origin_y", "pixel_w", "pixel_h", "crs", "nodata")


class GridError(Exception):
    """Base class for raster errors."""


class UnreadableFileError(GridError):
    pass


class UnsupportedFormatError(GridError):
    pass


class MissingGeoreferenceError(GridError):
    pass


class UnwritablePathError(GridError):
    pass


class AlignmentError(GridError):
    pass


class DuplicateBandError(GridError):
    pass


@dataclass(frozen=True)
class GeoTransform:
    """Upper-left origin, positive pixel sizes and an opaque CRS identifier."""

    origin_x: float
    origin_y: float
    pixel_w: float
    pixel_h: float
    crs_id: str = ""

    def __post_init__(self):
        if not (self.pixel_w > 0 and self.pixel_h > 0):
            raise ValueError(f"pixel sizes must be positive, got {self.pixel_w}, {self.pixel_h}")

    def aligned(self, other: GeoTransform, tol: float = ALIGN_TOL) -> bool:
        return (
            abs(self.origin_x - other.origin_x) <= tol
            and abs(self.origin_y - other.origin_y) <= tol
            and abs(self.pixel_w - other.pixel_w) <= tol
            and abs(self.pixel_h - other.pixel_h) <= tol
            and self.crs_id == other.crs_id
        )

    def cell_centers(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Return the x coordinates of column centres and y coordinates of row centres."""
        xs = self.origin_x + (np.arange(width) + 0.5) * self.pixel_w
        ys = self.origin_y - (np.arange(height) + 0.5) * self.pixel_h
        return xs, ys


class Grid:
    """Immutable single-band raster of float64 values with a nodata sentinel."""

    __slots__ = ("transform", "values", "nodata", "name")

    def __init__(self, transform: GeoTransform, values, nodata: float = DEFAULT_NODATA, name: str = ""):
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"grid values must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        self.transform = transform
        self.values = arr
        self.nodata = float(nodata)
        self.name = name

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def nodata_mask(self) -> np.ndarray:
        """True where the cell's bit pattern equals the nodata sentinel."""
        sentinel = np.array(self.nodata, dtype=np.float64).view(np.uint64)
        return self.values.view(np.uint64) == sentinel

    def valid_mask(self) -> np.ndarray:
        return ~self.nodata_mask()

    def aligned(self, other: Grid) -> bool:
        return self.shape == other.shape and self.transform.aligned(other.transform)

    def renamed(self, name: str) -> Grid:
        return Grid(self.transform, self.values, self.nodata, name)

    def with_values(self, values, name: str | None = None, nodata: float | None = None) -> Grid:
        return Grid(
            self.transform,
            values,
            self.nodata if nodata is None else nodata,
            self.name if name is None else name,
        )

    def __repr__(self) -> str:
        return f"Grid(name={self.name!r}, width={self.width}, height={self.height}, nodata={self.nodata!r})"


class GridStack:
    """Ordered, mutually aligned grids with unique names."""

    def __init__(self, grids: Iterable[Grid]):
        grids = list(grids)
        if not grids:
            raise ValueError("a GridStack needs at least one grid")
        names = [g.name for g in grids]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise DuplicateBandError(f"duplicate band names: {', '.join(dupes)}")
        first = grids[0]
        for g in grids[1:]:
            if not first.aligned(g):
                raise AlignmentError(f"grid {g.name!r} is not aligned with {first.name!r}")
        self._grids = tuple(grids)
        self._index = {g.name: i for i, g in enumerate(grids)}

    @property
    def names(self) -> list[str]:
        return [g.name for g in self._grids]

    @property
    def transform(self) -> GeoTransform:
        return self._grids[0].transform

    @property
    def shape(self) -> tuple[int, int]:
        return self._grids[0].shape

    def __len__(self) -> int:
        return len(self._grids)

    def __iter__(self) -> Iterator[Grid]:
        return iter(self._grids)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> Grid:
        try:
            return self._grids[self._index[name]]
        except KeyError:
            raise KeyError(f"band {name!r} not in stack") from None

    def extended(self, grids: Iterable[Grid]) -> GridStack:
        return GridStack([*self._grids, *grids])


def _is_tiff(head: bytes) -> bool:
    return head[:4] in (b"II*\x00", b"MM\x00*", b"II+\x00", b"MM\x00+")


def read_grid(path) -> Grid:
    """Decode a single-band GeoTIFF or GridText file.

    The band label defaults to the file stem.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(16)
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    if _is_tiff(head):
        return _read_geotiff(path)
    if head.lstrip().startswith(b"width"):
        return _read_gridtext(path)
    raise UnsupportedFormatError(f"unsupported format: {path}")


def write_grid(grid: Grid, path, compress: bool = False) -> None:
    """Write ``grid`` as GeoTIFF (``.tif``/``.tiff``) or GridText (``.grid``/``.txt``/``.gtxt``)."""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix in GEOTIFF_SUFFIXES:
            _write_geotiff(grid, path, compress)
        elif suffix in GRIDTEXT_SUFFIXES:
            path.write_text(format_gridtext(grid))
        else:
            raise UnsupportedFormatError(f"unsupported format: {path}")
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from exc


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_gridtext(grid: Grid) -> str:
    t = grid.transform
    lines = [
        f"width {grid.width}",
        f"height {grid.height}",
        f"origin_x {_fmt(t.origin_x)}",
        f"origin_y {_fmt(t.origin_y)}",
        f"pixel_w {_fmt(t.pixel_w)}",
        f"pixel_h {_fmt(t.pixel_h)}",
        f"crs {t.crs_id}",
        f"nodata {_fmt(grid.nodata)}",
    ]
    for row in grid.values:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _read_gridtext(path: Path) -> Grid:
    try:
        lines = path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    header = {}
    for key, line in zip(_GRIDTEXT_KEYS, lines):
        name, _, value = line.partition(" ")
        if name != key:
            raise UnsupportedFormatError(f"unsupported format: {path} (expected header {key!r}, got {name!r})")
        header[key] = value.strip()
    if len(header) < len(_GRIDTEXT_KEYS):
        raise UnsupportedFormatError(f"unsupported format: {path} (truncated header)")
    try:
        width, height = int(header["width"]), int(header["height"])
        transform = GeoTransform(
            float(header["origin_x"]),
            float(header["origin_y"]),
            float(header["pixel_w"]),
            float(header["pixel_h"]),
            header["crs"],
        )
        nodata = float(header["nodata"])
        rows = [[float(v) for v in line.split()] for line in lines[8 : 8 + height]]
        values = np.array(rows, dtype=np.float64).reshape(height, width)
    except ValueError as exc:
        raise UnreadableFileError(f"cannot parse {path}: {exc}") from exc
    return Grid(transform, values, nodata, path.stem)


def _geokeys(crs_id: str) -> tuple[list[int], str]:
    citation = crs_id + "|"
    keys = [
        (1024, 0, 1, 1),  # GTModelType: projected
        (1025, 0, 1, 1),  # GTRasterType: PixelIsArea
        (1026, _GEO_ASCII, len(citation), 0),  # GTCitation
    ]
    if crs_id.upper().startswith("EPSG:") and crs_id[5:].isdigit():
        keys.append((3072, 0, 1, int(crs_id[5:])))  # ProjectedCSType
    directory = [1, 1, 0, len(keys)]
    for k in keys:
        directory.extend(k)
    return directory, citation


def _write_geotiff(grid: Grid, path: Path, compress: bool) -> None:
    t = grid.transform
    directory, citation = _geokeys(t.crs_id)
    extratags = [
        (_PIXEL_SCALE, "d", 3, (t.pixel_w, t.pixel_h, 0.0), True),
        (_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, t.origin_x, t.origin_y, 0.0), True),
        (_GEOKEY_DIRECTORY, "H", len(directory), tuple(directory), True),
        (_GEO_ASCII, "s", 0, citation, True),
        (_GDAL_NODATA, "s", 0, repr(grid.nodata), True),
    ]
    tifffile.imwrite(
        path,
        np.ascontiguousarray(grid.values),
        photometric="minisblack",
        compression="zlib" if compress else None,
        extratags=extratags,
        metadata=None,
    )


def _read_geotiff(path: Path) -> Grid:
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            tags = {tag.code: tag.value for tag in page.tags.values()}
            data = page.asarray()
    except Exception as exc:  # tifffile raises a variety of errors on corrupt input
        raise UnreadableFileError(f"cannot decode {path}: {exc}") from exc
    data = np.squeeze(data)
    if data.ndim != 2:
        raise UnsupportedFormatError(f"unsupported format: {path} (expected a single band, got shape {data.shape})")
    if _PIXEL_SCALE in tags and _TIEPOINT in tags:
        sx, sy = tags[_PIXEL_SCALE][:2]
        tp = tags[_TIEPOINT]
        ox = tp[3] - tp[0] * sx
        oy = tp[4] + tp[1] * sy
    elif _TRANSFORMATION in tags:
        m = tags[_TRANSFORMATION]
        sx, ox, sy, oy = m[0], m[3], -m[5], m[7]
    else:
        raise MissingGeoreferenceError(f"missing georeferencing in {path}")
    transform = GeoTransform(float(ox), float(oy), float(sx), float(sy), _crs_from_tags(tags))
    nodata_tag = tags.get(_GDAL_NODATA)
    nodata = float(nodata_tag.strip("\x00 ")) if nodata_tag else DEFAULT_NODATA
    return Grid(transform, data.astype(np.float64), nodata, path.stem)


def _crs_from_tags(tags: dict) -> str:
    ascii_params = tags.get(_GEO_ASCII)
    directory = tags.get(_GEOKEY_DIRECTORY)
    if not directory:
        return ""
    directory = list(directory)
    n_keys = directory[3]
    epsg = None
    for i in range(n_keys):
        key, loc, count, offset = directory[4 + 4 * i : 8 + 4 * i]
        if key == 1026 and loc == _GEO_ASCII and ascii_params:
            return ascii_params[offset : offset + count].rstrip("|")
        if key in (3072, 2048) and loc == 0:
            epsg = offset
    return f"EPSG:{epsg}" if epsg is not None else ""


def _nearest_index(coord: np.ndarray, n: int) -> np.ndarray:
    """Map fractional cell coordinates onto cell indices; ties go to the lower index, outside -> -1."""
    snapped = np.where(np.abs(coord - np.round(coord)) < 1e-9, np.round(coord), coord)
    idx = np.ceil(snapped).astype(np.int64) - 1
    idx = np.where(snapped == 0.0, 0, idx)
    inside = (snapped >= 0.0) & (snapped <= n)
    return np.where(inside, idx, -1)


def resample_nearest(src: Grid, target: GeoTransform, width: int, height: int) -> Grid:
    """Resample ``src`` onto ``target`` geometry by nearest cell centre.

    Output cells whose centre falls outside the source extent are nodata.
    """
    if src.width == 0 or src.height == 0:
        raise ValueError("source grid is empty")
    st = src.transform
    xs, ys = target.cell_centers(width, height)
    cols = _nearest_index((xs - st.origin_x) / st.pixel_w, src.width)
    rows = _nearest_index((st.origin_y - ys) / st.pixel_h, src.height)
    out = np.full((height, width), src.nodata, dtype=np.float64)
    rv, cv = rows >= 0, cols >= 0
    if rv.any() and cv.any():
        out[np.ix_(rv, cv)] = src.values[np.ix_(rows[rv], cols[cv])]
    return Grid(target, out, src.nodata, src.name)


def stack(grids: Sequence[Grid], reference: GeoTransform, width: int, height: int) -> GridStack:
    """Align every grid to the reference geometry, resampling those that differ."""
    if not grids:
        raise ValueError("no grids to stack")
    names = [g.name for g in grids]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DuplicateBandError(f"duplicate band names: {', '.join(dupes)}")
    out = []
    for g in grids:
        if g.shape == (height, width) and g.transform.aligned(reference):
            out.append(g)
        else:
            out.append(resample_nearest(g, reference, width, height))
    return GridStack(out)


def check_aligned(*grids: Grid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not first.aligned(g):
            raise AlignmentError(f"grids {first.name!r} and {g.name!r} are misaligned")


def extent_shape(transform: GeoTransform, x_size: float, y_size: float) -> tuple[int, int]:
    """Number of (columns, rows) of ``transform``'s pixels covering a map extent."""
    return math.ceil(x_size / transform.pixel_w - 1e-9), math.ceil(y_size / transform.pixel_h - 1e-9)

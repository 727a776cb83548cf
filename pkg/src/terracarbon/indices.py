"""Sentinel-2 spectral indices (NDVI, EVI, SATVI).

Band reflectances are used as given; callers own any DN-to-reflectance scaling.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .grid import Grid, GridStack, check_aligned


class IndexKind(str, Enum):
    NDVI = "NDVI"
    EVI = "EVI"
    SATVI = "SATVI"


REQUIRED_BANDS = {
    IndexKind.NDVI: ("B8", "B4"),
    IndexKind.EVI: ("B8", "B4", "B2"),
    IndexKind.SATVI: ("B11", "B4", "B12"),
}


class MissingBandError(KeyError):
    pass


def _ndvi(b8, b4):
    return b8 - b4, b8 + b4


def _evi(b8, b4, b2):
    return 2.5 * (b8 - b4), b8 + 6.0 * b4 - 7.5 * b2 + 1.0


def _satvi(b11, b4, b12):
    # numerator/denominator of the ratio term; the B12 offset is applied after division
    return 2.0 * (b11 - b4), b11 + b4 + 1.0


def compute_index(kind: IndexKind | str, bands: GridStack) -> Grid:
    """Evaluate a spectral index cellwise.

    Cells where any operand is nodata, or where the denominator is zero, are nodata
    in the output. The output takes its geometry and nodata sentinel from the first
    required band.
    """
    kind = IndexKind(kind)
    missing = [b for b in REQUIRED_BANDS[kind] if b not in bands]
    if missing:
        raise MissingBandError(f"{kind.value} needs band(s) {', '.join(missing)}")
    grids = [bands[b] for b in REQUIRED_BANDS[kind]]
    check_aligned(*grids)
    valid = np.logical_and.reduce([g.valid_mask() for g in grids])
    arrays = [g.values for g in grids]

    if kind is IndexKind.NDVI:
        num, den = _ndvi(*arrays)
    elif kind is IndexKind.EVI:
        num, den = _evi(*arrays)
    else:
        num, den = _satvi(*arrays)

    ok = valid & (den != 0.0)
    out = np.full(den.shape, grids[0].nodata, dtype=np.float64)
    out[ok] = num[ok] / den[ok]
    if kind is IndexKind.SATVI:
        out[ok] -= 0.5 * arrays[2][ok]
    return grids[0].with_values(out, name=kind.value)


def add_indices(stack: GridStack, kinds=tuple(IndexKind)) -> GridStack:
    """Append any requested index not already present in ``stack``."""
    new = [compute_index(k, stack) for k in map(IndexKind, kinds) if k.value not in stack]
    return stack.extended(new) if new else stack

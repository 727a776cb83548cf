"""Synthetic AGB/SOC scene with the same layer names as the real predictor stack.

AGB is driven by the woodland indicator, canopy vigour (seen cleanly by
Sentinel-2 and only noisily by Landsat-8) and terrain; SOC is log-normally
distributed and positively correlated with AGB. DEM derivatives are generated
on a 3x finer grid so stacking exercises the nearest-neighbour resampler.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import DEFAULT_NODATA, GeoTransform, Grid

CRS = "EPSG:27700"
PIXEL = 300.0
DEM_FACTOR = 3
ORIGIN = (300000.0, 700000.0)
INVENTORY_CATEGORIES = {"Woodland": 1.0, "NonWoodland": 0.0}


def _field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / f.std()


def reference(size: int = 40) -> tuple[GeoTransform, int, int]:
    return GeoTransform(ORIGIN[0], ORIGIN[1], PIXEL, PIXEL, CRS), size, size


def make_scene(seed: int, size: int = 40, nodata_fraction: float = 0.01) -> list[Grid]:
    """Generate the raster bundle for one seed.

    Returns 300 m grids for Sentinel-1/2, Landsat-8, inventory, AGB, SOC and SOCD,
    plus 100 m DEM derivatives.
    """
    rng = np.random.default_rng(seed)
    shape = (size, size)
    fine_shape = (size * DEM_FACTOR, size * DEM_FACTOR)
    ref, _, _ = reference(size)
    fine_ref = GeoTransform(ORIGIN[0], ORIGIN[1], PIXEL / DEM_FACTOR, PIXEL / DEM_FACTOR, CRS)

    # terrain on the fine grid; the coarse view is what nearest-neighbour stacking will pick
    relief = _field(rng, fine_shape, 5.0 * DEM_FACTOR)
    elevation_f = 250.0 + 120.0 * relief + 3.0 * rng.standard_normal(fine_shape)
    gy, gx = np.gradient(elevation_f, PIXEL / DEM_FACTOR)
    slope_f = np.degrees(np.arctan(np.hypot(gx, gy)))
    wet = gaussian_filter(np.exp(-relief), 2.0 * DEM_FACTOR, mode="wrap")
    twi_f = np.log(wet * 100.0 / (np.tan(np.radians(slope_f)) + 0.01))
    lsf_f = (slope_f / 5.0) ** 1.3 * (1.0 + 0.2 * rng.standard_normal(fine_shape)) ** 2
    pick = (slice(DEM_FACTOR // 2, None, DEM_FACTOR),) * 2
    elev = elevation_f[pick]
    twi = twi_f[pick]
    terrain = np.exp(-(((elev - 270.0) / 90.0) ** 2))  # growth optimum at mid elevations

    woodland = (_field(rng, shape, 2.5) + 0.4 * relief[pick] > 0.25).astype(np.float64)
    vigour = np.clip(0.35 + 0.3 * woodland + 0.15 * _field(rng, shape, 1.5) + 0.05 * rng.standard_normal(shape), 0, 1)

    agb = 15.0 + 110.0 * woodland + 90.0 * vigour + 70.0 * terrain + 12.0 * rng.standard_normal(shape)
    agb = np.maximum(agb, 1.0)
    agb_z = (agb - agb.mean()) / agb.std()
    twi_z = (twi - twi.mean()) / twi.std()
    log_soc = 3.6 + 0.22 * agb_z + 0.12 * twi_z + 0.22 * rng.standard_normal(shape)
    soc = np.exp(log_soc)
    socd = soc * (1.1 + 0.08 * rng.standard_normal(shape))

    def noise(scale):
        return scale * rng.standard_normal(shape)

    layers = {
        "VH": -19.0 + 3.0 * woodland + 4.0 * vigour + noise(1.2),
        "VV": -12.5 + 1.5 * woodland + 2.0 * vigour + noise(1.0),
        "B2": 0.06 - 0.02 * vigour + noise(0.004),
        "B3": 0.08 - 0.01 * vigour + noise(0.004),
        "B4": 0.09 - 0.06 * vigour + noise(0.004),
        "B5": 0.12 + 0.02 * vigour + noise(0.006),
        "B6": 0.18 + 0.12 * vigour + noise(0.008),
        "B7": 0.20 + 0.18 * vigour + noise(0.008),
        "B8": 0.20 + 0.25 * vigour + noise(0.01),
        "B8A": 0.21 + 0.25 * vigour + noise(0.01),
        "B11": 0.26 - 0.10 * vigour + noise(0.01),
        "B12": 0.17 - 0.08 * vigour + noise(0.008),
    }
    # Landsat-8 was acquired under different conditions: same surface, much weaker signal
    l8_vigour = vigour + 0.35 * rng.standard_normal(shape)
    for i in range(1, 12):
        base = 0.05 + 0.02 * i
        gain = {4: -0.05, 5: 0.2, 6: -0.06, 7: -0.05}.get(i, 0.0)
        if i in (10, 11):
            layers[f"L{i}"] = 290.0 - 3.0 * l8_vigour + noise(1.5)
        else:
            layers[f"L{i}"] = base + gain * l8_vigour + noise(0.02)

    grids = [Grid(ref, v, DEFAULT_NODATA, name) for name, v in layers.items()]
    grids += [
        Grid(fine_ref, elevation_f, DEFAULT_NODATA, "Elevation"),
        Grid(fine_ref, slope_f, DEFAULT_NODATA, "CS"),
        Grid(fine_ref, lsf_f, DEFAULT_NODATA, "LSF"),
        Grid(fine_ref, twi_f, DEFAULT_NODATA, "TWI"),
        Grid(ref, woodland, DEFAULT_NODATA, "Inventory"),
    ]
    targets = {"AGB": agb, "SOC": soc, "SOCD": socd}
    n_holes = int(round(nodata_fraction * size * size))
    for name, values in targets.items():
        values = values.copy()
        if n_holes:
            cells = rng.choice(size * size, size=n_holes, replace=False)
            values.flat[cells] = DEFAULT_NODATA
        grids.append(Grid(ref, values, DEFAULT_NODATA, name))
    return grids

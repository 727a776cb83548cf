"""Prediction, absolute-error and total-carbon maps."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import MissingFeatureError, ModelSpec, TargetTransform
from .ensembles import EnsembleModel
from .grid import Grid, GridStack, check_aligned

# linear ramp endpoints for quicklooks (low -> high)
RAMP_LOW = np.array([247, 252, 185], dtype=np.float64)
RAMP_HIGH = np.array([0, 104, 55], dtype=np.float64)


def predict_map(model: EnsembleModel, stack: GridStack, spec: ModelSpec) -> Grid:
    """Predict every cell whose features are all valid, returning values in raw target units."""
    missing = [f for f in spec.feature_names if f not in stack]
    if missing:
        raise MissingFeatureError(f"stack lacks feature(s): {', '.join(missing)}")
    if tuple(spec.feature_names) != tuple(model.feature_names):
        raise ValueError(f"model features do not match spec {spec.key}")
    grids = [stack[f] for f in spec.feature_names]
    valid = np.logical_and.reduce([g.valid_mask() for g in grids])
    rows, cols = np.nonzero(valid)
    X = np.column_stack([g.values[rows, cols] for g in grids])
    nodata = grids[0].nodata
    out = np.full(stack.shape, nodata, dtype=np.float64)
    if len(rows):
        out[rows, cols] = TargetTransform(model.transform).inverse(model.predict(X))
    return grids[0].with_values(out, name=f"{spec.target}_prediction")


def error_map(pred: Grid, truth: Grid) -> Grid:
    """Cellwise |pred - truth|; nodata in either input stays nodata."""
    check_aligned(pred, truth)
    valid = pred.valid_mask() & truth.valid_mask()
    out = np.full(pred.shape, pred.nodata, dtype=np.float64)
    out[valid] = np.abs(pred.values[valid] - truth.values[valid])
    return pred.with_values(out, name=f"{truth.name}_error")


def total_carbon_map(agb: Grid, soc: Grid, agb_factor: float = 1.0, soc_factor: float = 1.0) -> Grid:
    """Cellwise ``agb_factor * agb + soc_factor * soc`` with nodata propagation.

    Both inputs must already be in raw (not log) units; the factors default to 1
    and are how callers harmonise units between the two layers.
    """
    check_aligned(agb, soc)
    valid = agb.valid_mask() & soc.valid_mask()
    out = np.full(agb.shape, agb.nodata, dtype=np.float64)
    out[valid] = agb_factor * agb.values[valid] + soc_factor * soc.values[valid]
    return agb.with_values(out, name="total_carbon")


def write_quicklook(grid: Grid, path) -> dict:
    """Write an RGBA PNG with a min-max linear stretch and a JSON sidecar recording it."""
    path = Path(path)
    valid = grid.valid_mask()
    vals = grid.values[valid]
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 0.0)
    span = hi - lo if hi > lo else 1.0
    t = np.clip((grid.values - lo) / span, 0.0, 1.0)[..., None]
    rgb = RAMP_LOW + t * (RAMP_HIGH - RAMP_LOW)
    rgba = np.concatenate([rgb, np.where(valid, 255.0, 0.0)[..., None]], axis=-1)
    Image.fromarray(np.round(rgba).astype(np.uint8)).save(path)
    sidecar = {"band": grid.name, "min": lo, "max": hi, "ramp_low": RAMP_LOW.tolist(), "ramp_high": RAMP_HIGH.tolist()}
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return sidecar

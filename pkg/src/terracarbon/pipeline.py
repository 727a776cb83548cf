"""Glue from raw layers to a model-ready stack."""
from __future__ import annotations

from typing import Mapping, Sequence

from . import synth
from .dataset import ModelSpec, SampleTable, extract_samples, one_hot
from .grid import GeoTransform, Grid, GridStack, stack
from .indices import REQUIRED_BANDS, IndexKind, compute_index


def build_stack(
    grids: Sequence[Grid],
    reference: GeoTransform,
    width: int,
    height: int,
    categorical: Mapping[str, Mapping[str, float] | Sequence[float]] | None = None,
) -> GridStack:
    """Align layers, expand categorical ones into indicators and derive any computable index."""
    aligned = stack(grids, reference, width, height)
    categorical = categorical or {}
    layers: list[Grid] = []
    for g in aligned:
        if g.name in categorical:
            layers.extend(one_hot(g, categorical[g.name]))
        else:
            layers.append(g)
    out = GridStack(layers)
    extra = []
    for kind in IndexKind:
        if kind.value not in out and all(b in out for b in REQUIRED_BANDS[kind]):
            extra.append(compute_index(kind, out))
    return out.extended(extra) if extra else out


def table_for(stack: GridStack, spec: ModelSpec) -> SampleTable:
    return extract_samples(stack, spec, stack[spec.target])


def synth_stack(seed: int, size: int = 40) -> GridStack:
    ref, width, height = synth.reference(size)
    grids = synth.make_scene(seed, size)
    return build_stack(grids, ref, width, height, {"Inventory": synth.INVENTORY_CATEGORIES})

"""Command-line orchestration of the carbon mapping pipeline.

Every command reads a JSON config (``--config``) and writes into ``--out``.
Relative paths inside the config resolve against the config file's directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, synth
from .dataset import get_spec, train_test_folds, write_folds, write_table_csv
from .ensembles import FORMAT_VERSION, TECHNIQUES, EnsembleModel, build_params, fit, fit_rf
from .evaluation import (
    DEFAULT_GRIDS,
    EvalReport,
    compare_reports,
    cross_validate,
    feature_importance,
    grid_search,
    json_safe,
)
from .grid import GeoTransform, GridError, read_grid, write_grid
from .indices import IndexKind, compute_index
from .mapping import error_map, predict_map, total_carbon_map, write_quicklook
from .pipeline import build_stack, table_for
from .selection import eliminate_collinear

log = logging.getLogger("terracarbon")

THREADS_ENV = "TERRACARBON_THREADS"


class ConfigError(Exception):
    pass


def dump_json(obj, path: Path) -> None:
    payload = {"version": FORMAT_VERSION, **obj}
    path.write_text(json.dumps(json_safe(payload), sort_keys=True, indent=2) + "\n")


def resolve_threads(arg: int | None) -> int:
    if arg is None:
        env = os.environ.get(THREADS_ENV)
        arg = int(env) if env else 0
    return arg if arg > 0 else (os.cpu_count() or 1)


class Context:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.threads = resolve_threads(args.threads)
        self.config_path = Path(args.config) if args.config else None
        if self.config_path is not None:
            try:
                self.config = json.loads(self.config_path.read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {self.config_path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {self.config_path} is not valid JSON: {exc}") from exc
            self.base = self.config_path.parent
        else:
            self.config = {}
            self.base = Path.cwd()

    def require(self, *keys):
        node = self.config
        for i, key in enumerate(keys):
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"missing config key: {'.'.join(keys[: i + 1])}")
            node = node[key]
        return node

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def seed(self) -> int:
        if self.args.seed is not None:
            return self.args.seed
        return int(self.require("model", "seed"))

    def reference(self) -> tuple[GeoTransform, int, int]:
        ref = self.require("reference")
        try:
            transform = GeoTransform(
                float(ref["origin_x"]), float(ref["origin_y"]), float(ref["pixel_w"]), float(ref["pixel_h"]), str(ref["crs"])
            )
            return transform, int(ref["width"]), int(ref["height"])
        except KeyError as exc:
            raise ConfigError(f"missing config key: reference.{exc.args[0]}") from None

    def raster_suffix(self) -> str:
        fmt = self.config.get("output_format", "gtiff")
        if fmt not in ("gtiff", "gridtext"):
            raise ConfigError(f"bad config key output_format: {fmt!r}")
        return ".tif" if fmt == "gtiff" else ".grid"

    def read_inputs(self):
        grids, categorical = [], {}
        for i, entry in enumerate(self.require("inputs")):
            for key in ("path", "name"):
                if key not in entry:
                    raise ConfigError(f"missing config key: inputs[{i}].{key}")
            grid = read_grid(self.path(entry["path"])).renamed(entry["name"])
            if entry.get("role") == "categorical":
                if "categories" not in entry:
                    raise ConfigError(f"missing config key: inputs[{i}].categories")
                categorical[entry["name"]] = entry["categories"]
            grids.append(grid)
        return grids, categorical

    def stack(self):
        grids, categorical = self.read_inputs()
        return build_stack(grids, *self.reference(), categorical)

    def spec(self):
        target = self.require("model", "target")
        name = self.require("model", "spec")
        try:
            return get_spec(target, name)
        except KeyError as exc:
            raise ConfigError(f"bad config key model.spec: {exc.args[0]}") from None

    def technique(self) -> str:
        tech = str(self.require("model", "technique")).upper()
        if tech not in TECHNIQUES:
            raise ConfigError(f"bad config key model.technique: {tech!r} (expected one of {', '.join(TECHNIQUES)})")
        return tech


def cmd_stack(ctx: Context) -> None:
    st = ctx.stack()
    suffix = ctx.raster_suffix()
    layers = []
    for g in st:
        name = f"{g.name}{suffix}"
        write_grid(g, ctx.out / name)
        layers.append({"name": g.name, "path": name})
    ref, width, height = ctx.reference()
    dump_json(
        {
            "reference": {
                "origin_x": ref.origin_x,
                "origin_y": ref.origin_y,
                "pixel_w": ref.pixel_w,
                "pixel_h": ref.pixel_h,
                "crs": ref.crs_id,
                "width": width,
                "height": height,
            },
            "layers": layers,
        },
        ctx.out / "stack.json",
    )


def cmd_indices(ctx: Context) -> None:
    grids, _ = ctx.read_inputs()
    from .grid import stack as align

    st = align(grids, *ctx.reference())
    suffix = ctx.raster_suffix()
    for kind in ctx.config.get("indices", [k.value for k in IndexKind]):
        write_grid(compute_index(kind, st), ctx.out / f"{IndexKind(kind).value}{suffix}")


def cmd_dataset(ctx: Context) -> None:
    spec = ctx.spec()
    table = table_for(ctx.stack(), spec)
    write_table_csv(table, ctx.out / f"{spec.target}_{spec.name}.csv")
    model = ctx.config.get("model", {})
    if ctx.args.seed is not None or "seed" in model:
        write_folds(train_test_folds(table.n_samples, int(model.get("k", 5)), ctx.seed()), ctx.out / "folds.json")


def cmd_select(ctx: Context) -> None:
    spec = ctx.spec()
    table = table_for(ctx.stack(), spec)
    opts = ctx.config.get("select", {})
    trace = eliminate_collinear(table, float(opts.get("vif_threshold", 10.0)), float(opts.get("r_threshold", 0.9)))
    dump_json(trace.to_dict(), ctx.out / "trace.json")
    write_table_csv(table.select(trace.surviving), ctx.out / f"{spec.target}_{spec.name}_reduced.csv")


def _final_model(table, technique, flat, seed, threads):
    params = build_params(technique, flat, seed, table.n_features)
    if technique == "RF":
        return fit_rf(table, params, threads)[0]
    return fit(table, technique, params)


def _model_meta(model, spec, flat, seed):
    model.meta.update({"model_spec": spec.name, "target": spec.target, "grid_point": flat, "seed": seed})


def cmd_train(ctx: Context) -> None:
    spec, technique, seed = ctx.spec(), ctx.technique(), ctx.seed()
    k = int(ctx.config["model"].get("k", 5))
    grid = ctx.config["model"].get("grid") or DEFAULT_GRIDS[technique]
    table = table_for(ctx.stack(), spec)
    best, results = grid_search(table, technique, grid, k, seed, ctx.threads)
    chosen = next(r for r in results if r.params == best)
    model = _final_model(table, technique, best, seed, ctx.threads)
    _model_meta(model, spec, best, seed)
    report = EvalReport(
        spec.name,
        spec.target,
        technique,
        chosen.cv.per_fold,
        chosen.cv.aggregate,
        best,
        seed,
        k,
        feature_importance(model),
        grid=[{"params": r.params, "aggregate": r.cv.aggregate.to_dict()} for r in results],
    )
    (ctx.out / "model.json").write_text(model.to_json())
    dump_json(report.to_dict(), ctx.out / "report.json")
    (ctx.out / "grid.csv").write_text(report.grid_csv())


def cmd_evaluate(ctx: Context) -> None:
    spec, technique, seed = ctx.spec(), ctx.technique(), ctx.seed()
    k = int(ctx.config["model"].get("k", 5))
    params = ctx.require("model", "params")
    table = table_for(ctx.stack(), spec)
    cv = cross_validate(table, technique, params, k, seed, ctx.threads)
    model = _final_model(table, technique, params, seed, ctx.threads)
    report = EvalReport(spec.name, spec.target, technique, cv.per_fold, cv.aggregate, params, seed, k, feature_importance(model))
    dump_json(report.to_dict(), ctx.out / "report.json")


def cmd_compare(ctx: Context) -> None:
    paths = ctx.require("compare", "reports")
    baselines = ctx.require("compare", "baselines")
    reports = [EvalReport.from_dict(json.loads(ctx.path(p).read_text())) for p in paths]
    rows = compare_reports(reports, baselines)
    fields = ["target", "technique", "model", "baseline", "r2", "baseline_r2", "delta_pct"]
    with open(ctx.out / "compare.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_map(ctx: Context) -> None:
    opts = ctx.require("map")
    model_paths = ctx.require("map", "models")
    st = ctx.stack()
    suffix = ctx.raster_suffix()
    quicklook = bool(opts.get("quicklook", False))
    factors = opts.get("factors", {})
    predictions = {}
    outputs = []
    for p in model_paths:
        model = EnsembleModel.from_dict(json.loads(ctx.path(p).read_text()))
        try:
            spec = get_spec(model.meta["target"], model.meta["model_spec"])
        except KeyError as exc:
            raise ConfigError(f"model {p} lacks a valid target/model_spec: {exc}") from None
        pred = predict_map(model, st, spec)
        predictions[spec.target] = pred
        outputs.append(pred)
        if spec.target in st:
            outputs.append(error_map(pred, st[spec.target]))
    if "AGB" in predictions and "SOC" in predictions:
        fa, fs = float(factors.get("AGB", 1.0)), float(factors.get("SOC", 1.0))
        total = total_carbon_map(predictions["AGB"], predictions["SOC"], fa, fs)
        outputs.append(total)
        if "AGB" in st and "SOC" in st:
            truth = total_carbon_map(st["AGB"], st["SOC"], fa, fs).renamed("total_carbon_truth")
            outputs.append(truth)
            outputs.append(error_map(total, truth).renamed("total_carbon_error"))
    for g in outputs:
        write_grid(g, ctx.out / f"{g.name}{suffix}")
        if quicklook:
            write_quicklook(g, ctx.out / f"{g.name}.png")


def cmd_synth(ctx: Context) -> None:
    if ctx.args.seed is None and "seed" not in ctx.config.get("synth", {}) and "seed" not in ctx.config.get("model", {}):
        raise ConfigError("missing config key: synth.seed (or pass --seed)")
    seed = ctx.args.seed if ctx.args.seed is not None else int(ctx.config.get("synth", ctx.config.get("model", {}))["seed"])
    size = int(ctx.config.get("synth", {}).get("size", 40))
    suffix = ctx.raster_suffix()
    inputs = []
    for g in synth.make_scene(seed, size):
        name = f"{g.name}{suffix}"
        write_grid(g, ctx.out / name)
        entry = {"path": name, "name": g.name, "role": "target" if g.name in ("AGB", "SOC") else "predictor"}
        if g.name == "Inventory":
            entry.update(role="categorical", categories=synth.INVENTORY_CATEGORIES)
        inputs.append(entry)
    ref, width, height = synth.reference(size)
    config = {
        "inputs": inputs,
        "reference": {
            "origin_x": ref.origin_x,
            "origin_y": ref.origin_y,
            "pixel_w": ref.pixel_w,
            "pixel_h": ref.pixel_h,
            "crs": ref.crs_id,
            "width": width,
            "height": height,
        },
        "model": {"spec": "B", "target": "AGB", "technique": "BRT", "seed": seed, "k": 5},
    }
    dump_json(config, ctx.out / "config.json")


COMMANDS = {
    "stack": (cmd_stack, "align input rasters onto the reference grid"),
    "indices": (cmd_indices, "compute NDVI/EVI/SATVI from Sentinel-2 bands"),
    "dataset": (cmd_dataset, "extract the sample table for a model spec"),
    "select": (cmd_select, "iterative VIF feature elimination"),
    "train": (cmd_train, "grid search, CV report and final model"),
    "evaluate": (cmd_evaluate, "cross-validate fixed parameters"),
    "compare": (cmd_compare, "percentage R^2 difference against baseline models"),
    "map": (cmd_map, "prediction, error and total carbon maps"),
    "synth": (cmd_synth, "generate a synthetic AGB/SOC raster bundle"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="overrides model.seed")
    common.add_argument("--threads", type=int, help=f"worker threads, 0 = auto (env {THREADS_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="terracarbon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func = COMMANDS[args.command][0]
    try:
        if args.command != "synth" and not args.config:
            raise ConfigError("--config is required for this command")
        ctx = Context(args)
        ctx.out.mkdir(parents=True, exist_ok=True)
        func(ctx)
    except (ConfigError, GridError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"terracarbon {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``agglo <command> [options]``.

Every command writes its artifacts atomically and a
``<command>.manifest.json`` next to them. Exit codes: 0 success, 2 input
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import classify as clf
from .copula import joint_density
from .descriptors import compute_record, feature_layout, layout_fingerprint, to_features
from .errors import AggloError, FitError, InvalidInputError, LayoutMismatchError
from .imaging import DEFAULT_PITCH_UM, LabelMap, extract_regions, segment
from .io import (SchemaError, atomic_write, child_seed, column, read_csv, read_json, write_csv,
                 write_json, write_manifest)
from .margins import SUPPORTS
from .sensitivity import DEFAULT_GRID, DEFAULT_REPLICATES, fit_reference, sensitivity_sweep
from .synth import SceneSpec, match_regions, read_pgm, render, rle_decode, save_scene
from .temporal import (TimeSeriesModel, class_fractions, fit_class_time_model, fit_fraction_model,
                       model_at_time)

CLASS_NAMES = ("primary", "chain", "raspberry")
FIXED_COLUMNS = ("image", "label", "experiment", "t")
NAME_RE = re.compile(r"^(?P<exp>[A-Za-z0-9]+)_t(?P<t>\d+(?:\.\d+)?)(?:_|$)")
MIN_PER_STEP = 5

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "pixel_pitch": DEFAULT_PITCH_UM,
    "imaging": {"strength": 100.0, "search_radius": 21, "patch_radius": 5, "polarity": "bright",
                "min_area": 5, "exclude_border": True},
    "layout": {"include_z": True, "include_orientation": True},
    "forest": {"grid": None, "holdout": 0.25},
    "supports": {"diameter": [0.0, None], "solidity": [0.0, 1.0]},
    "times": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120],
    "square_weights": True,
    "sensitivity": {"grid": list(DEFAULT_GRID), "replicates": DEFAULT_REPLICATES, "time": None},
    "predict": {"time": 75.0, "grid_size": 50},
    "paths": {},
}


# ---------------------------------------------------------------- configuration

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        p = Path(path)
        if not p.exists():
            raise SchemaError(f"{p}: config file not found")
        try:
            cfg = _merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{p}: invalid JSON ({exc})") from None
        base = p.parent
        cfg["paths"] = {k: str((base / v).resolve()) if v else v for k, v in cfg["paths"].items()}
    ts = cfg["times"]
    if not ts or any(b <= a for a, b in zip(ts[:-1], ts[1:])):
        raise SchemaError("config field 'times' must be non-empty and strictly increasing")
    if cfg["imaging"]["polarity"] not in ("bright", "dark"):
        raise SchemaError("config field 'imaging.polarity' must be 'bright' or 'dark'")
    return cfg


def _supports(cfg):
    def conv(s):
        return (s[0] if s[0] is not None else -math.inf, s[1] if s[1] is not None else math.inf)
    return conv(cfg["supports"]["diameter"]), conv(cfg["supports"]["solidity"])


def _resolve(args, cfg):
    """Flags override environment variables, which override the config file."""
    if os.environ.get("AGGLO_SEED"):
        cfg["seed"] = int(os.environ["AGGLO_SEED"])
    if os.environ.get("AGGLO_THREADS"):
        cfg["threads"] = int(os.environ["AGGLO_THREADS"])
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    im = cfg["imaging"]
    for flag, key in (("strength", "strength"), ("search_radius", "search_radius"),
                      ("patch_radius", "patch_radius"), ("polarity", "polarity"),
                      ("min_area", "min_area")):
        v = getattr(args, flag, None)
        if v is not None:
            im[key] = v
    if cfg["threads"] < 1:
        raise SchemaError("threads must be >= 1")
    return cfg


# ---------------------------------------------------------------- helpers

def _images(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.pgm")))
        elif p.exists():
            out.append(p)
        else:
            raise SchemaError(f"{p}: image not found")
    if not out:
        raise SchemaError("no input images")
    return out


def _name_info(stem):
    m = NAME_RE.match(stem)
    if not m:
        return "A", None
    t = float(m.group("t"))
    return m.group("exp"), int(t) if t.is_integer() else t


def _load_descriptors(path, with_class=False):
    meta, header, rows = read_csv(path, "descriptors", FIXED_COLUMNS + (("class",) if with_class else ()))
    layout = tuple(c for c in header if c not in FIXED_COLUMNS and c != "class")
    fp = meta.get("layout")
    if fp is None:
        raise SchemaError(f"{path}: header line lacks field 'layout'")
    if fp != layout_fingerprint(layout):
        raise LayoutMismatchError(f"{path}: field 'layout' fingerprint {fp} does not match the feature columns")
    X = np.array([[float(r[header.index(c)]) for c in layout] for r in rows]).reshape(len(rows), len(layout))
    info = {
        "image": column(path, header, rows, "image", str),
        "label": column(path, header, rows, "label", int),
        "experiment": column(path, header, rows, "experiment", str),
        "t": column(path, header, rows, "t", lambda v: float(v) if v else math.nan),
    }
    y = np.array(column(path, header, rows, "class", int), dtype=np.int64) if "class" in header else None
    return layout, X, y, info, header, rows


def _write_descriptors(path, layout, X, info, y=None):
    header = list(FIXED_COLUMNS) + list(layout) + (["class"] if y is not None else [])
    rows = []
    for i in range(len(X)):
        t = info["t"][i]
        row = [info["image"][i], info["label"][i], info["experiment"][i],
               "" if t is None or (isinstance(t, float) and math.isnan(t)) else _tnum(t)]
        row += list(X[i])
        if y is not None:
            row.append(int(y[i]))
        rows.append(row)
    return write_csv(path, "descriptors", header, rows, {"layout": layout_fingerprint(layout)})


def _tnum(t):
    t = float(t)
    return int(t) if t.is_integer() else t


def _out_dir(args):
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- commands

def cmd_segment(args, cfg):
    out = _out_dir(args)
    im = cfg["imaging"]
    rows, outputs, inputs = [], [], []
    for path in _images(args.images):
        inputs.append(path)
        img = read_pgm(path, cfg["pixel_pitch"])
        seg = segment(img, im["strength"], im["search_radius"], im["patch_radius"], im["polarity"],
                      im["min_area"], exclude_border=False)
        lab_path = out / f"{path.stem}.labels.npy"
        buf = _npy_bytes(seg.labels.labels.astype(np.int32))
        outputs.append(atomic_write(lab_path, buf))
        mask = (seg.mask.bits * 255).astype(np.uint8)
        header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode()
        outputs.append(atomic_write(out / f"{path.stem}.mask.pgm", header + mask.tobytes()))
        for reg in seg.regions:
            rows.append([path.name, reg.label, reg.area_px, *reg.bounding_box, int(reg.touches_border),
                         seg.threshold])
    outputs.append(write_csv(out / "regions.csv", "regions",
                             ["image", "label", "area_px", "r0", "c0", "r1", "c1", "touches_border",
                              "threshold"], rows))
    return inputs, outputs


def _npy_bytes(arr):
    import io as _io
    buf = _io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _describe_images(paths, cfg, seg_dir=None, truth_dir=None, layout=None):
    im = cfg["imaging"]
    layout = layout or feature_layout(**cfg["layout"])
    X, y, info, inputs = [], [], {"image": [], "label": [], "experiment": [], "t": []}, []
    for path in paths:
        inputs.append(path)
        img = read_pgm(path, cfg["pixel_pitch"])
        lab_file = Path(seg_dir) / f"{path.stem}.labels.npy" if seg_dir else None
        if lab_file is not None and lab_file.exists():
            inputs.append(lab_file)
            labels = np.load(lab_file, allow_pickle=False)
            if labels.shape != img.pixels.shape:
                raise SchemaError(f"{lab_file}: label map shape {labels.shape} differs from {path}")
            lmap = LabelMap(labels, int(labels.max()))
            regions = extract_regions(lmap, img, im["min_area"], im["exclude_border"])
        else:
            regions = segment(img, im["strength"], im["search_radius"], im["patch_radius"],
                              im["polarity"], im["min_area"], im["exclude_border"]).regions
        classes = None
        if truth_dir is not None:
            tpath = Path(truth_dir) / f"{path.stem}.json"
            doc = read_json(tpath)
            inputs.append(tpath)
            truth = LabelMap(rle_decode(doc["labels_rle"], doc["shape"]), len(doc["classes"]))
            matched = match_regions(regions, truth)
            classes = [doc["classes"][k - 1] if k else None for k in matched]
        exp, t = _name_info(path.stem)
        for i, reg in enumerate(regions):
            if classes is not None and classes[i] is None:
                continue
            X.append(to_features(compute_record(reg), layout))
            info["image"].append(path.name)
            info["label"].append(reg.label)
            info["experiment"].append(exp)
            info["t"].append(t)
            if classes is not None:
                y.append(classes[i])
    X = np.array(X).reshape(len(X), len(layout))
    return layout, X, (np.array(y, dtype=np.int64) if truth_dir is not None else None), info, inputs


def cmd_describe(args, cfg):
    if args.no_z:
        cfg["layout"]["include_z"] = False
    if args.no_orientation:
        cfg["layout"]["include_orientation"] = False
    layout, X, y, info, inputs = _describe_images(_images(args.images), cfg, args.seg_dir, args.truth_dir)
    if len(X) == 0:
        raise InvalidInputError("no objects found in the input images")
    return inputs, [_write_descriptors(args.out, layout, X, info, y)]


def cmd_train(args, cfg):
    out = _out_dir(args)
    layout, X, y, info, _, _ = _load_descriptors(args.data, with_class=True)
    seed = child_seed(cfg["seed"], "train")
    rng = np.random.default_rng(seed)
    holdout = args.holdout if args.holdout is not None else cfg["forest"]["holdout"]
    perm = rng.permutation(len(y))
    n_test = int(round(holdout * len(y)))
    test, train = perm[:n_test], perm[n_test:]
    if len(train) == 0:
        raise InvalidInputError(f"{args.data}: no training rows left after the hold-out split")
    grid = cfg["forest"]["grid"]
    res = clf.grid_search(X[train], y[train], grid, seed=seed, layout=layout)
    ref = clf.reference_train(X[train, layout.index("d")], X[train, layout.index("e")], y[train])
    outputs = [atomic_write(out / "forest.json", res.forest.to_json() + "\n"),
               atomic_write(out / "reference.json", ref.to_json() + "\n")]
    ev = test if len(test) else train
    rows = []
    for name, pred in (("forest", res.forest.predict(X[ev])),
                       ("reference", ref.predict(X[ev, layout.index("d")], X[ev, layout.index("e")]))):
        cm = clf.confusion_matrix(pred, y[ev])
        for a in range(3):
            for b in range(3):
                rows.append([name, CLASS_NAMES[a], CLASS_NAMES[b], int(cm[a, b])])
    outputs.append(write_csv(out / "confusion.csv", "confusion", ["model", "truth", "predicted", "count"], rows,
                             {"evaluated_on": "holdout" if len(test) else "training"}))
    outputs.append(write_csv(out / "grid.csv", "grid", ["n_trees", "max_depth", "subset_size", "train_accuracy"],
                             res.table))
    return [Path(args.data)], outputs


def cmd_classify(args, cfg):
    layout, X, _, info, header, rows = _load_descriptors(args.data)
    mpath = Path(args.model)
    if not mpath.exists():
        raise SchemaError(f"{mpath}: model file not found")
    try:
        forest = clf.TrainedForest.from_json(mpath.read_text())
    except (KeyError, json.JSONDecodeError, InvalidInputError) as exc:
        raise SchemaError(f"{mpath}: not a forest model ({exc})") from None
    if forest.layout is not None and tuple(forest.layout) != layout:
        raise LayoutMismatchError(
            f"{args.data}: field 'layout' ({layout_fingerprint(layout)}) does not match the feature "
            f"layout of {mpath} ({forest.fingerprint}); columns differ: "
            f"{sorted(set(layout) ^ set(forest.layout))}")
    pred = forest.predict(X, layout_fingerprint(layout)) if len(X) else np.zeros(0, np.int64)
    return [Path(args.data), mpath], [_write_descriptors(args.out, layout, X, info, pred)]


def _grouped(path, layout, X, y, info):
    if "d" not in layout or "s" not in layout or "a" not in layout:
        raise SchemaError(f"{path}: columns 'd', 's' and 'a' are required")
    t = np.array(info["t"], dtype=float)
    if np.any(np.isnan(t)):
        raise SchemaError(f"{path}: column 't' has missing values")
    exp = np.array(info["experiment"])
    return exp, t, X[:, layout.index("d")], X[:, layout.index("s")], X[:, layout.index("a")]


def cmd_fit(args, cfg):
    out = _out_dir(args)
    layout, X, y, info, _, _ = _load_descriptors(args.data, with_class=True)
    exp, t, d, s, area = _grouped(args.data, layout, X, y, info)
    sup_d, sup_s = _supports(cfg)
    tsm = TimeSeriesModel()
    margins, copulas = [], []
    for e in sorted(set(exp)):
        sel = exp == e
        steps = sorted(set(t[sel]))
        series = class_fractions({_tnum(ts): (y[sel & (t == ts)], area[sel & (t == ts)]) for ts in steps})
        if len(steps) >= 3:
            tsm.fractions[e] = fit_fraction_model(series)
        for k, name in enumerate(CLASS_NAMES):
            per_t = {}
            for ts in steps:
                m = sel & (t == ts) & (y == k)
                if m.sum() >= MIN_PER_STEP:
                    per_t[_tnum(ts)] = (d[m], s[m])
            if not per_t:
                print(f"agglo fit: experiment {e}, class {name}: too few objects, skipped", file=sys.stderr)
                continue
            primary = k == 0
            rep = fit_class_time_model(per_t, primary=primary, constant=primary or len(per_t) < 3,
                                       square_weights=cfg["square_weights"], support_d=sup_d,
                                       support_s=sup_s)
            tsm.classes[(e, k)] = rep.model
            for ts in sorted(per_t):
                margins.append({"experiment": e, "class": name, "t": ts,
                                "d": rep.margins_d[ts].to_dict(), "s": rep.margins_s[ts].to_dict()})
                if ts in rep.copulas:
                    copulas.append({"experiment": e, "class": name, "t": ts,
                                    "fit": rep.copulas[ts].to_dict()})
    if not tsm.classes:
        raise InvalidInputError(f"{args.data}: no class has enough objects to fit")
    outputs = [
        write_json(out / "margins.json", {"schema_version": 1, "kind": "margins", "fits": margins}),
        write_json(out / "copula.json", {"schema_version": 1, "kind": "copulas", "fits": copulas}),
        write_json(out / "curves.json", {**tsm.to_dict(), "kind": "time_series_model"}),
    ]
    return [Path(args.data)], outputs


def cmd_predict(args, cfg):
    out = _out_dir(args)
    doc = read_json(args.model, "time_series_model")
    tsm = TimeSeriesModel.from_dict(doc)
    t = args.time if args.time is not None else cfg["predict"]["time"]
    n = args.grid_size or cfg["predict"]["grid_size"]
    outputs = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for (e, k), cm in sorted(tsm.classes.items()):
            try:
                bm = model_at_time(cm, t)
            except InvalidInputError as exc:
                raise FitError(f"{args.model}: experiment {e}, class {CLASS_NAMES[k]} at t={_tnum(t)}: "
                               f"{exc}") from None
            gd = np.linspace(*bm.margin_d.quantile(np.array([0.005, 0.995])), n)
            gs = np.linspace(*bm.margin_s.quantile(np.array([0.005, 0.995])), n)
            D, S = np.meshgrid(gd, gs, indexing="ij")
            dens = joint_density(bm, D, S)
            rows = [[a, b, c] for a, b, c in zip(D.ravel(), S.ravel(), dens.ravel())]
            meta = {"experiment": e, "class": CLASS_NAMES[k], "t": _tnum(t),
                    "copula": "independence" if bm.copula is None else f"{bm.copula.family}-{bm.copula.rotation}"}
            outputs.append(write_csv(out / f"density_{e}_{CLASS_NAMES[k]}.csv", "density",
                                     ["d", "s", "density"], rows, meta))
        rows = [[e, _tnum(t), *fm(t)] for e, fm in sorted(tsm.fractions.items())]
        outputs.append(write_csv(out / "fractions.csv", "fractions",
                                 ["experiment", "t", *CLASS_NAMES], rows))
    for w in caught:
        print(f"agglo predict: warning: {w.message}", file=sys.stderr)
    return [Path(args.model)], outputs


def cmd_sensitivity(args, cfg):
    layout, X, y, info, _, _ = _load_descriptors(args.data, with_class=True)
    exp, t, d, s, _ = _grouped(args.data, layout, X, y, info)
    sc = cfg["sensitivity"]
    grid = tuple(args.grid) if args.grid else tuple(sc["grid"])
    reps = args.replicates or sc["replicates"]
    e = args.experiment or sorted(set(exp))[0]
    when = args.time if args.time is not None else (sc["time"] if sc["time"] is not None else t[exp == e].max())
    fixed = {}
    inputs = [Path(args.data)]
    if args.model:
        tsm = TimeSeriesModel.from_dict(read_json(args.model, "time_series_model"))
        fixed = {k: m for (ex, k), m in tsm.classes.items() if ex == e}
        inputs.append(Path(args.model))
    sup_d, sup_s = _supports(cfg)
    data, refs = {}, {}
    for k, name in enumerate(CLASS_NAMES):
        m = (exp == e) & (t == when) & (y == k)
        if m.sum() < max(grid):
            print(f"agglo sensitivity: class {name} has {int(m.sum())} objects at t={_tnum(when)}, "
                  f"fewer than {max(grid)}; skipped", file=sys.stderr)
            continue
        cm = fixed.get(k)
        refs[name] = fit_reference(
            d[m], s[m], primary=k == 0,
            family_d=cm.family_d if cm else None, family_s=cm.family_s if cm else None,
            copula=(cm.copula_family, cm.copula_rotation) if cm and cm.copula_family else None,
            support_d=sup_d, support_s=sup_s)
        data[name] = (d[m], s[m])
    if not data:
        raise InvalidInputError(f"{args.data}: no class has at least {max(grid)} objects at t={_tnum(when)}")
    rep = sensitivity_sweep(data, refs, grid, reps, child_seed(cfg["seed"], "sensitivity"), cfg["threads"])
    return inputs, [atomic_write(args.out, rep.to_csv())]


def _synth_jobs(doc, seed):
    """(stem, SceneSpec) per image described by a synth spec document."""
    scene = doc.get("scene", {})
    if "times" not in doc:
        return [(doc.get("name", "scene"), SceneSpec.from_dict({**scene, "seed": scene.get("seed", seed)}))]
    jobs = []
    counts_by_t = {str(k): v for k, v in doc.get("counts_by_time", {}).items()}
    for e in doc.get("experiments", ["A"]):
        for t in doc["times"]:
            counts = counts_by_t.get(str(t), scene.get("counts", SceneSpec().counts))
            for i in range(int(doc.get("scenes_per_time", 1))):
                stem = f"{e}_t{int(t):03d}_{i:03d}"
                spec = SceneSpec.from_dict({**scene, "counts": counts, "seed": child_seed(seed, f"synth/{stem}")})
                jobs.append((stem, spec))
    return jobs


def cmd_synth(args, cfg):
    out = _out_dir(args)
    doc = read_json(args.spec)
    try:
        jobs = _synth_jobs(doc, child_seed(cfg["seed"], "synth"))
    except TypeError as exc:
        raise SchemaError(f"{args.spec}: bad scene field ({exc})") from None
    outputs = []
    for stem, spec in jobs:
        save_scene(render(spec), out / stem, spec)
        outputs += [out / f"{stem}.pgm", out / f"{stem}.json"]
    return [Path(args.spec)], outputs


def cmd_pipeline(args, cfg):
    """Synth (optional), segment, describe, train, classify, fit, predict, sensitivity."""
    out = _out_dir(args)
    paths = cfg["paths"]
    ns = argparse.Namespace
    inputs, outputs = [], []

    def run(fn, **kw):
        i, o = fn(ns(**kw), cfg)
        inputs.extend(i)
        outputs.extend(o)

    if "synth" in cfg:
        for part in ("train", "series"):
            spec_path = out / f"synth_{part}.json"
            write_json(spec_path, {"schema_version": 1, **cfg["synth"][part]})
            run(cmd_synth, spec=str(spec_path), out=str(out / "synth" / part))
        train_images, truth_dir = [str(out / "synth" / "train")], str(out / "synth" / "train")
        images = [str(out / "synth" / "series")]
    else:
        if "images" not in paths or "training" not in paths:
            raise SchemaError("config needs either a 'synth' section or paths 'images' and 'training'")
        images, train_images, truth_dir = [paths["images"]], None, None
    run(cmd_segment, images=images, out=str(out / "segment"))
    run(cmd_describe, images=images, out=str(out / "descriptors.csv"), seg_dir=str(out / "segment"),
        truth_dir=None, no_z=False, no_orientation=False)
    if train_images is not None:
        run(cmd_describe, images=train_images, out=str(out / "training.csv"), seg_dir=None,
            truth_dir=truth_dir, no_z=False, no_orientation=False)
        training = str(out / "training.csv")
    else:
        training = paths["training"]
    run(cmd_train, data=training, out=str(out / "train"), holdout=None)
    run(cmd_classify, data=str(out / "descriptors.csv"), model=str(out / "train" / "forest.json"),
        out=str(out / "classified.csv"))
    run(cmd_fit, data=str(out / "classified.csv"), out=str(out / "fit"))
    run(cmd_predict, model=str(out / "fit" / "curves.json"), time=None, grid_size=None,
        out=str(out / "predict"))
    run(cmd_sensitivity, data=str(out / "classified.csv"), model=str(out / "fit" / "curves.json"),
        grid=None, replicates=None, experiment=None, time=None, out=str(out / "sensitivity.csv"))
    produced = {str(p) for p in outputs}
    return sorted(set(map(str, inputs)) - produced), outputs


COMMANDS = {
    "segment": cmd_segment, "describe": cmd_describe, "train": cmd_train, "classify": cmd_classify,
    "fit": cmd_fit, "predict": cmd_predict, "sensitivity": cmd_sensitivity, "synth": cmd_synth,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline configuration")
    common.add_argument("--seed", type=int, help="global seed (env AGGLO_SEED)")
    common.add_argument("--threads", type=int, help="worker processes (env AGGLO_THREADS)")

    imaging = argparse.ArgumentParser(add_help=False)
    imaging.add_argument("--strength", type=float)
    imaging.add_argument("--search-radius", type=int)
    imaging.add_argument("--patch-radius", type=int)
    imaging.add_argument("--polarity", choices=("bright", "dark"))
    imaging.add_argument("--min-area", type=int)

    p = argparse.ArgumentParser(prog="agglo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", parents=[common, imaging], help="label maps, masks and a region table")
    s.add_argument("images", nargs="+")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("describe", parents=[common, imaging], help="descriptor CSV")
    s.add_argument("images", nargs="+")
    s.add_argument("--seg-dir", help="label maps written by 'segment' (segments on the fly otherwise)")
    s.add_argument("--truth-dir", help="ground-truth JSON from 'synth'; adds a class column")
    s.add_argument("--no-z", action="store_true", help="drop the centroid offset feature")
    s.add_argument("--no-orientation", action="store_true", help="drop the orientation feature")
    s.add_argument("--out", required=True, help="output CSV")

    s = sub.add_parser("train", parents=[common], help="grid-searched forest and reference rule")
    s.add_argument("data", help="descriptor CSV with a class column")
    s.add_argument("--holdout", type=float, help="fraction held out for the confusion table")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("classify", parents=[common], help="add predicted classes to a descriptor CSV")
    s.add_argument("data")
    s.add_argument("--model", required=True, help="forest JSON")
    s.add_argument("--out", required=True, help="output CSV")

    s = sub.add_parser("fit", parents=[common], help="margins, copulas and time curves")
    s.add_argument("data", help="classified descriptor CSV")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("predict", parents=[common], help="density grids and fractions at a time")
    s.add_argument("model", help="curves.json from 'fit'")
    s.add_argument("--time", type=float)
    s.add_argument("--grid-size", type=int)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("sensitivity", parents=[common], help="bootstrap sensitivity report")
    s.add_argument("data", help="classified descriptor CSV")
    s.add_argument("--model", help="curves.json whose families are kept fixed")
    s.add_argument("--grid", type=lambda v: [int(x) for x in v.split(",")], help="comma-separated n_b values")
    s.add_argument("--replicates", type=int)
    s.add_argument("--experiment")
    s.add_argument("--time", type=float)
    s.add_argument("--out", required=True, help="output CSV")

    s = sub.add_parser("synth", parents=[common], help="render synthetic scenes with ground truth")
    s.add_argument("spec", help="scene spec JSON")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("pipeline", parents=[common, imaging], help="all stages end to end")
    s.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args, load_config(args.config))
        inputs, outputs = COMMANDS[args.command](args, cfg)
        out = Path(args.out)
        mdir = out if out.is_dir() else out.parent
        write_manifest(mdir / f"{args.command}.manifest.json", args.command, cfg, cfg["seed"], inputs, outputs)
    except (InvalidInputError, FileNotFoundError, KeyError) as exc:
        print(f"agglo {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except (AggloError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"agglo {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

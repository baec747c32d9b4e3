"""
Command-line pipeline: synth -> select-windows -> train -> propose -> evaluate,
plus edge-map for inspecting the contour provider.

Every command writes into ``--out`` and leaves a ``run.json`` there with the
effective configuration, counts and wall times. Options may also come from a
JSON file given with ``--config``; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import CascadeConfig, run_cascade
from .errors import ConfigurationError, DeepProposalError
from .evaluation import evaluate
from .formats import (DatasetManifest, load_catalog, load_model_bundle, read_boxes, read_fmap,
                      save_catalog, save_model_bundle, write_boxes, write_fmap, write_synthetic)
from .featmap import FeatureMap
from .refine import edge_map_from_features
from .scorer import TrainConfig
from .synth import SynthConfig
from .training import train_models
from .window_catalog import DEFAULT_ALPHAS, candidate_pool, greedy_select, max_recall

# built-in defaults per command; a --config file and then flags override them
DEFAULTS = {
    "synth": {"seed": 0, "n_train": 200, "n_test": 100, "noise": 0.25},
    "select-windows": {"k": 50, "z_max": 20, "split": "train", "stride": 16.0},
    "train": {"split": "train", "label": None, "seed": 0, "epochs": 20, "C": 1.0,
              "pos_per_image": 10, "neg_per_image": 50},
    "propose": {"split": "test", "beta": 0.7, "num": 1000, "no_refine": False},
    "evaluate": {"split": "test", "iou": [0.5, 0.7], "max_boxes": 2000, "label": None},
    "edge-map": {},
}


def _threads() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("DEEPPROPOSAL_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigurationError(f"DEEPPROPOSAL_THREADS must be an integer, got {cap!r}") from None
    return n


def _write_run(out: Path, command: str, opts: dict, **info):
    doc = {"command": command, "version": __version__, "options": opts}
    doc.update(info)
    with open(out / "run.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def cmd_synth(opts, out: Path):
    cfg = SynthConfig(seed=opts["seed"], n_train=opts["n_train"], n_test=opts["n_test"],
                      noise=opts["noise"])
    t = time.perf_counter()
    manifest = write_synthetic(cfg, out)
    n_obj = sum(len(manifest.groundtruth(r)) for r in manifest.records)
    _write_run(out, "synth", opts, seed=cfg.seed, config=cfg.to_dict(),
               counts={"images": len(manifest.records), "objects": n_obj},
               timings={"total": time.perf_counter() - t})
    print(f"wrote {len(manifest.records)} images ({n_obj} objects) to {out}")


def _groundtruth(manifest, split, label=None):
    recs = manifest.split(split)
    if not recs:
        raise ConfigurationError(f"manifest has no {split!r} images")
    gts = [manifest.groundtruth(r) for r in recs]
    if label:
        gts = [g.filter_label(label) for g in gts]
    return recs, gts


def cmd_select_windows(opts, out: Path):
    manifest = DatasetManifest.load(opts["manifest"])
    _, gts = _groundtruth(manifest, opts["split"])
    t = time.perf_counter()
    catalog = greedy_select(candidate_pool(opts["z_max"]), gts, manifest.scales, opts["k"],
                            DEFAULT_ALPHAS, opts["stride"], opts["z_max"])
    save_catalog(catalog, out / "catalog.json")
    bounds = {str(b): max_recall(catalog, gts, manifest.scales, b, opts["stride"])
              for b in (0.5, 0.7, 0.8, 0.9)}
    _write_run(out, "select-windows", opts, max_recall=bounds,
               counts={"images": len(gts), "objects": sum(len(g) for g in gts), "k": catalog.k},
               timings={"total": time.perf_counter() - t})
    print(f"selected {catalog.k} shapes; max recall at 0.5/0.7: "
          f"{bounds['0.5']:.3f}/{bounds['0.7']:.3f}")


def cmd_train(opts, out: Path):
    manifest = DatasetManifest.load(opts["manifest"])
    catalog = load_catalog(opts["catalog"])
    recs, gts = _groundtruth(manifest, opts["split"], opts["label"])
    cfg = TrainConfig(C=opts["C"], epochs=opts["epochs"], seed=opts["seed"],
                      pos_per_image=opts["pos_per_image"], neg_per_image=opts["neg_per_image"])
    t = time.perf_counter()
    images = ((manifest.bundle(r, (5, 3)), g) for r, g in zip(recs, gts))
    models = train_models(images, catalog, cfg)
    save_model_bundle(models, catalog, out, {"train_config": vars(cfg), "scales": manifest.scales})
    _write_run(out, "train", opts, seed=cfg.seed,
               counts={"images": len(recs), "models": len(models)},
               timings={"total": time.perf_counter() - t})
    print(f"trained {len(models)} models on {len(recs)} images")


def _cascade_config(opts, scales) -> CascadeConfig:
    num = opts["num"]
    if num < 1:
        raise ConfigurationError(f"--num must be positive, got {num}")
    n2 = max(3000, num)
    return CascadeConfig.preset(opts["beta"], scales=scales, n_desired=num, n2=n2,
                                n1=max(4000, n2), refine_enabled=not opts["no_refine"])


def cmd_propose(opts, out: Path):
    manifest = DatasetManifest.load(opts["manifest"])
    models, catalog = load_model_bundle(opts["models"])
    cfg = _cascade_config(opts, manifest.scales)
    recs = manifest.split(opts["split"])

    def one(rec):
        run = run_cascade(manifest.bundle(rec), models, catalog, cfg)
        return rec.image_id, run

    t = time.perf_counter()
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        runs = dict(pool.map(one, recs))
    total = time.perf_counter() - t
    write_boxes(out / "proposals.jsonl", {k: r.final.proposals for k, r in runs.items()})
    per_image = {k: {"counts": [s.counts for s in r.stages], "timings": r.timings}
                 for k, r in sorted(runs.items())}
    mean_t = {s: float(np.mean([r.timings[s] for r in runs.values()])) if runs else 0.0
              for s in ("stage1", "stage2", "stage3")}
    _write_run(out, "propose", opts, config=cfg.to_dict(), per_image=per_image,
               timings={"total": total, "mean_per_image": mean_t},
               counts={"images": len(runs),
                       "proposals": sum(len(r.final) for r in runs.values())})
    print(f"proposed boxes for {len(runs)} images "
          f"({sum(mean_t.values()):.3f} s per image)")


def cmd_evaluate(opts, out: Path):
    manifest = DatasetManifest.load(opts["manifest"])
    recs, gts = _groundtruth(manifest, opts["split"], opts["label"])
    by_image = read_boxes(opts["proposals"])
    known = {r.image_id for r in manifest.records}
    stray = sorted(set(by_image) - known)
    if stray:
        raise ConfigurationError(f"proposals for unknown image {stray[0]!r}")
    props = [by_image.get(r.image_id, []) for r in recs]
    t = time.perf_counter()
    report = evaluate(props, gts, betas=tuple(opts["iou"]), max_boxes=opts["max_boxes"])
    report.write(out)
    _write_run(out, "evaluate", opts, counts={"images": len(recs), "objects": report.n_objects},
               timings={"total": time.perf_counter() - t})
    s = report.summary()
    print("recall " + " ".join(f"@{b}={v:.3f}" for b, v in s["recall"].items())
          + f" auc={s['auc']:.3f}")


def cmd_edge_map(opts, out: Path):
    fm = read_fmap(opts["input"])
    em = edge_map_from_features(fm)
    result = FeatureMap(fm.layer_id, fm.scale_id, fm.stride,
                        em.magnitudes[None].astype(np.float32))
    dest = out / (Path(opts["input"]).stem + "_edges.fmap")
    write_fmap(result, dest)
    _write_run(out, "edge-map", opts, counts={"cells": int(em.magnitudes.size)})
    print(f"wrote {dest}")


COMMANDS = {"synth": cmd_synth, "select-windows": cmd_select_windows, "train": cmd_train,
            "propose": cmd_propose, "evaluate": cmd_evaluate, "edge-map": cmd_edge_map}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepproposal", description=" ".join(__doc__.split("\n\n")[0].split()))
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)
    S = argparse.SUPPRESS

    def command(name, help):
        sp = sub.add_parser(name, help=help, argument_default=S)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON file with option values")
        return sp

    sp = command("synth", "write a synthetic feature-map dataset")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-train", dest="n_train", type=int)
    sp.add_argument("--n-test", dest="n_test", type=int)
    sp.add_argument("--noise", type=float)

    sp = command("select-windows", "choose the window-shape catalog")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--k", type=int, help="number of shapes")
    sp.add_argument("--z-max", dest="z_max", type=int)
    sp.add_argument("--stride", type=float, help="coarse-layer stride in pixels")
    sp.add_argument("--split")

    sp = command("train", "train per-scale stage models")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--catalog", required=True)
    sp.add_argument("--split")
    sp.add_argument("--label", help="train on objects of this class only")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--C", dest="C", type=float)
    sp.add_argument("--pos-per-image", dest="pos_per_image", type=int)
    sp.add_argument("--neg-per-image", dest="neg_per_image", type=int)

    sp = command("propose", "run the cascade")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--models", required=True, help="directory written by train")
    sp.add_argument("--split")
    sp.add_argument("--beta", type=float, choices=(0.5, 0.7))
    sp.add_argument("--num", type=int, help="proposals per image")
    sp.add_argument("--no-refine", dest="no_refine", action="store_true")

    sp = command("evaluate", "score proposals against ground truth")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--proposals", required=True)
    sp.add_argument("--split")
    sp.add_argument("--label")
    sp.add_argument("--iou", type=float, nargs="+")
    sp.add_argument("--max-boxes", dest="max_boxes", type=int)

    sp = command("edge-map", "contour map of an FMAP file")
    sp.add_argument("input")
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS[args.command])
    given = vars(args)
    if given.get("config"):
        with open(given["config"]) as fh:
            file_opts = json.load(fh)
        if not isinstance(file_opts, dict):
            raise ConfigurationError(f"{given['config']}: config must be a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in file_opts.items()})
    opts.update(given)
    return opts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](opts, out)
    except (DeepProposalError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"deepproposal {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
